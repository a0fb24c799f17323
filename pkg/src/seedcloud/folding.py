"""Folding decoders: a shared per-point trunk bends low-dimensional seeds
around the codeword, twice. The four variants differ only in where the seeds
come from: a fixed lattice on [0,1]^2, per-forward uniform noise on ]0,1[^2,
or a trainable linear map from the codeword to 2- or 32-dimensional seeds.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .errors import ConfigError, UsageError


class SeedSource(nn.Module):
    """Base seed provider: sample(theta) -> Tensor (B, count, dim)."""

    kind = "base"

    def __init__(self, count, dim):
        super().__init__()
        self.count = count
        self.dim = dim

    def planar_coords(self, theta=None):
        """(count, 2) array for scatter export; 2-D sources only."""
        raise UsageError(f"seed source '{self.kind}' has no planar coordinates")


class GridSeeds(SeedSource):
    """Regular lattice on [0,1]^2; count must be a perfect square."""

    kind = "fixed_grid"

    def __init__(self, count, dtype=ad.DEFAULT_DTYPE):
        side = math.isqrt(count)
        if side * side != count:
            raise ConfigError(
                f"fixed_grid needs a perfect-square seed count, got {count}"
            )
        super().__init__(count, 2)
        axis = np.linspace(0.0, 1.0, side, dtype=dtype)
        gy, gx = np.meshgrid(axis, axis, indexing="ij")
        self._lattice = np.stack([gx.reshape(-1), gy.reshape(-1)], axis=1)

    def sample(self, theta):
        b = theta.shape[0]
        return Tensor(np.broadcast_to(
            self._lattice, (b,) + self._lattice.shape).copy())

    def planar_coords(self, theta=None):
        return self._lattice.copy()


class RandomSeeds(SeedSource):
    """Fresh i.i.d. seeds strictly inside ]0,1[^2 on every forward pass."""

    kind = "uniform_random"

    def __init__(self, count, rng, dtype=ad.DEFAULT_DTYPE):
        super().__init__(count, 2)
        self._rng = rng
        self._dtype = dtype

    def sample(self, theta):
        b = theta.shape[0]
        draw = self._rng.uniform(1e-12, 1.0, size=(b, self.count, 2))
        return Tensor(draw.astype(self._dtype))

    def planar_coords(self, theta=None):
        return self._rng.uniform(1e-12, 1.0, size=(self.count, 2))


class LatentSeeds(SeedSource):
    """Trainable linear map codeword -> count x dim seeds; deterministic in
    theta, and gradients flow back through it."""

    def __init__(self, count, dim, codeword_dim, rng):
        super().__init__(count, dim)
        self.kind = f"generated_{dim}d"
        self.map = nn.Linear(codeword_dim, count * dim, rng)

    def sample(self, theta):
        b = theta.shape[0]
        return ad.reshape(self.map(theta), (b, self.count, self.dim))

    def planar_coords(self, theta=None):
        if self.dim != 2:
            return super().planar_coords(theta)
        if theta is None:
            raise UsageError("generated seeds need a codeword for export")
        with ad.no_grad():
            coords = self.sample(ad.reshape(theta, (1,) + theta.shape)
                                 if theta.ndim == 1 else theta)
        return coords.data[0]


SEED_KINDS = ("fixed_grid", "uniform_random", "generated_2d", "generated_nd")


def make_seed_source(kind, count, codeword_dim=None, rng=None, dim=32):
    if kind == "fixed_grid":
        return GridSeeds(count)
    if kind == "uniform_random":
        if rng is None:
            raise UsageError("uniform_random seeds need an rng")
        return RandomSeeds(count, rng)
    if kind in ("generated_2d", "generated_nd"):
        if codeword_dim is None or rng is None:
            raise UsageError(f"{kind} seeds need a codeword_dim and rng")
        return LatentSeeds(count, 2 if kind == "generated_2d" else dim,
                           codeword_dim, rng)
    raise ConfigError(f"unknown seed source '{kind}'; choose from {SEED_KINDS}")


class FoldStack(nn.Module):
    """(512, 512, 3) per-point layers; the last is bare so coordinates are
    unconstrained."""

    def __init__(self, c_in, rng, widths=(512, 512)):
        super().__init__()
        w1, w2 = widths
        self.block1 = nn.LinearBlock(c_in, w1, rng)
        self.block2 = nn.LinearBlock(w1, w2, rng)
        self.coords = nn.Linear(w2, 3, rng)

    def forward(self, x):
        return self.coords(self.block2(self.block1(x)))



class FoldingDecoder(nn.Module):
    """Seed + replicated codeword -> first stack -> 3-D midpoints; midpoints
    + replicated codeword -> second stack -> final cloud."""

    def __init__(self, codeword_dim, source, output_points, rng):
        super().__init__()
        if source.count != output_points:
            raise ConfigError(
                f"seed count {source.count} != output points {output_points}"
            )
        self.codeword_dim = codeword_dim
        self.output_points = output_points
        self.source = source
        self.fold1 = FoldStack(source.dim + codeword_dim, rng)
        self.fold2 = FoldStack(3 + codeword_dim, rng)

    def forward(self, theta):
        squeeze = theta.ndim == 1
        if squeeze:
            theta = ad.reshape(theta, (1,) + theta.shape)
        b = theta.shape[0]
        n = self.output_points
        seeds = self.source.sample(theta)
        rep = ad.reshape(ad.expand(theta, 1, n), (b * n, self.codeword_dim))
        x = ad.concat([ad.reshape(seeds, (b * n, self.source.dim)), rep], axis=1)
        mid = self.fold1(x)
        out = self.fold2(ad.concat([mid, rep], axis=1))
        out = ad.reshape(out, (b, n, 3))
        if squeeze:
            out = ad.reshape(out, (n, 3))
        return out

