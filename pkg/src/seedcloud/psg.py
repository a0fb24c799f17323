"""Progressive seed decoder: a transposed-conv ladder grows a codeword into
multi-resolution 2-D seed feature maps, fusion stages progressively mix the
replicated codeword into each seed level, and a point head turns the final
level into an M x 3 cloud.

Level indexing is 1-based over `resolutions`: level 1 is the initial reshape
block of the codeword, levels 2..L are transposed-conv outputs. With K fusion
stages, stage k consumes level L-K+k-1 and its output is resized to the next
level's resolution; the point head consumes level L together with the last
fusion output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .errors import ConfigError


@dataclass
class DecoderConfig:
    codeword_dim: int = 512
    seed_dim: int = 32
    resolutions: tuple = ((4, 4), (8, 8), (16, 16), (32, 32))
    fusion_stages: int = 3
    output_points: int = 1024

    def __post_init__(self):
        self.resolutions = tuple(tuple(r) for r in self.resolutions)
        d = self.codeword_dim
        if d < 2 or d % 2:
            raise ConfigError(f"codeword_dim must be even and >= 2, got {d}")
        if self.seed_dim < 1:
            raise ConfigError(f"seed_dim must be >= 1, got {self.seed_dim}")
        if self.output_points < 1:
            raise ConfigError(
                f"output_points must be >= 1, got {self.output_points}"
            )
        if len(self.resolutions) < 2:
            raise ConfigError("need at least two seed levels")
        h0, w0 = self.resolutions[0]
        if h0 < 1 or w0 < 1 or d % (h0 * w0):
            raise ConfigError(
                f"codeword_dim {d} does not reshape to a {h0}x{w0} block"
            )
        for (h, w), (h2, w2) in zip(self.resolutions, self.resolutions[1:]):
            # kernel 4 / stride 2 / padding 1 doubles each extent
            if (h2, w2) != (2 * h, 2 * w):
                raise ConfigError(
                    f"ladder step {h}x{w} -> {h2}x{w2} inconsistent with the "
                    "kernel-4/stride-2/padding-1 transposed conv"
                )
        if not 0 <= self.fusion_stages <= self.levels - 1:
            raise ConfigError(
                f"fusion_stages must be in [0, {self.levels - 1}], "
                f"got {self.fusion_stages}"
            )

    @property
    def levels(self):
        return len(self.resolutions)

    def level_channels(self, level):
        """Channel count of a 1-based seed level."""
        if level == 1:
            h0, w0 = self.resolutions[0]
            return self.codeword_dim // (h0 * w0)
        return self.seed_dim


class SeedGenerator(nn.Module):
    """Codeword -> list of seed feature maps, one per level."""

    def __init__(self, cfg, rng):
        super().__init__()
        self.cfg = cfg
        self.stages = nn.ModuleList()
        prev = cfg.level_channels(1)
        for _ in range(cfg.levels - 1):
            self.stages.append(nn.UpConvBlock(prev, cfg.seed_dim, rng))
            prev = cfg.seed_dim

    def forward(self, theta):
        b = theta.shape[0]
        h0, w0 = self.cfg.resolutions[0]
        x = ad.reshape(theta, (b, self.cfg.level_channels(1), h0, w0))
        maps = [x]
        for stage in self.stages:
            x = stage(x)
            maps.append(x)
        return maps



def _replicate_codeword(theta, h, w):
    return ad.expand(ad.expand(theta, 2, h), 3, w)


class FusionStage(nn.Module):
    """concat(replicated codeword, seed level, previous output) -> 1x1
    conv/BN/ReLU with codeword_dim/2 channels -> resize to the next level."""

    def __init__(self, cfg, k, rng):
        super().__init__()
        self.consumed_level = cfg.levels - cfg.fusion_stages + k - 1
        self.target_hw = cfg.resolutions[self.consumed_level]
        half = cfg.codeword_dim // 2
        c_in = cfg.codeword_dim + cfg.level_channels(self.consumed_level)
        if k >= 2:
            c_in += half
        self.block = nn.ConvBlock(c_in, half, rng)

    def forward(self, theta, seeds, prev):
        _, _, h, w = seeds.shape
        parts = [_replicate_codeword(theta, h, w), seeds]
        if prev is not None:
            parts.append(prev)
        x = self.block(ad.concat(parts, axis=1))
        return ad.bilinear_interp(x, self.target_hw)



class PointHead(nn.Module):
    """concat(replicated codeword, final seeds, last fusion output) ->
    conv/BN/ReLU -> resize toward M positions -> shared linear to 3-D."""

    def __init__(self, cfg, rng):
        super().__init__()
        self.cfg = cfg
        half = cfg.codeword_dim // 2
        c_in = cfg.codeword_dim + cfg.level_channels(cfg.levels)
        if cfg.fusion_stages >= 1:
            c_in += half
        self.block = nn.ConvBlock(c_in, half, rng)
        self.coords = nn.Linear(half, 3, rng)
        h, w = cfg.resolutions[-1]
        m = cfg.output_points
        if h * w == m:
            self.grid = (h, w)  # interpolation is the identity
        else:
            g = math.isqrt(m - 1) + 1  # smallest square grid with >= M cells
            self.grid = (g, g)

    def forward(self, theta, seeds, fused):
        b, _, h, w = seeds.shape
        parts = [_replicate_codeword(theta, h, w), seeds]
        if fused is not None:
            parts.append(fused)
        x = self.block(ad.concat(parts, axis=1))
        if self.grid != (h, w):
            x = ad.bilinear_interp(x, self.grid)
        gh, gw = self.grid
        half = self.cfg.codeword_dim // 2
        m = self.cfg.output_points
        x = ad.transpose(ad.reshape(x, (b, half, gh * gw)), (0, 2, 1))
        if gh * gw != m:
            x = ad.gather(x, np.arange(m), axis=1)
        pts = self.coords(ad.reshape(x, (b * m, half)))
        return ad.reshape(pts, (b, m, 3))



class ProgressiveDecoder(nn.Module):
    """Full decoder: seed generation, K fusion stages, point head."""

    def __init__(self, cfg, rng):
        super().__init__()
        if not isinstance(cfg, DecoderConfig):
            cfg = DecoderConfig(**cfg)
        self.cfg = cfg
        self.output_points = cfg.output_points
        self.seedgen = SeedGenerator(cfg, rng)
        self.fusion = nn.ModuleList(
            [FusionStage(cfg, k, rng) for k in range(1, cfg.fusion_stages + 1)]
        )
        # construction-time resolution bookkeeping: each fusion output must
        # land on the next consumed level's grid
        for a, b in zip(self.fusion, list(self.fusion)[1:]):
            expected = cfg.resolutions[b.consumed_level - 1]
            if a.target_hw != expected:
                raise ConfigError(
                    f"fusion resize {a.target_hw} != next level {expected}"
                )
        self.head = PointHead(cfg, rng)

    def forward(self, theta):
        squeeze = theta.ndim == 1
        if squeeze:
            theta = ad.reshape(theta, (1,) + theta.shape)
        maps = self.seedgen(theta)
        fused = None
        for stage in self.fusion:
            fused = stage(theta, maps[stage.consumed_level - 1], fused)
        pts = self.head(theta, maps[-1], fused)
        if squeeze:
            pts = ad.reshape(pts, pts.shape[1:])
        return pts


    def seed_maps(self, theta):
        """Seed feature maps for inspection (no fusion applied)."""
        if theta.ndim == 1:
            theta = ad.reshape(theta, (1,) + theta.shape)
        return self.seedgen(theta)
