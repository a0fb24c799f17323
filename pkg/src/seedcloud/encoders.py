"""Encoders mapping a point cloud to a global codeword vector.

Three interchangeable designs: a shared-MLP/max-pool encoder, a three-stage
set-abstraction encoder (farthest-point sampling + ball grouping + local
mini-networks), and a two-stage encoder that re-concatenates a global max
feature per point before the second stage (the usual choice for completion).

Inputs are raw (N, 3) or (B, N, 3) float arrays; outputs are Tensors of
shape (codeword_dim,) or (B, codeword_dim).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import Tensor
from .errors import ConfigError, ShapeError
from .pointcloud import ball_query, farthest_point_sample


def _batched(points):
    points = np.asarray(points)
    if points.ndim == 2:
        return points[None], True
    if points.ndim == 3:
        return points, False
    raise ShapeError(f"encoder input must be (N,3) or (B,N,3), got {points.shape}")


class Encoder(nn.Module):
    """Base: subclasses implement _encode on (B, N, 3) arrays."""

    def __init__(self, codeword_dim):
        super().__init__()
        self.codeword_dim = codeword_dim

    def forward(self, points):
        arr, squeeze = _batched(points)
        arr = arr.astype(ad.DEFAULT_DTYPE if self._param_dtype() == np.float32
                         else self._param_dtype(), copy=False)
        code = self._encode(arr)
        if squeeze:
            code = ad.reshape(code, (self.codeword_dim,))
        return code


    def _param_dtype(self):
        for p in self.parameters():
            return p.dtype
        return ad.DEFAULT_DTYPE


class PointNetEncoder(Encoder):
    """Shared per-point MLP (64, 128, codeword_dim) + channel-wise max."""

    def __init__(self, codeword_dim, rng, widths=(64, 128)):
        super().__init__(codeword_dim)
        w1, w2 = widths
        self.block1 = nn.LinearBlock(3, w1, rng)
        self.block2 = nn.LinearBlock(w1, w2, rng)
        self.head = nn.Linear(w2, codeword_dim, rng)

    def _encode(self, arr):
        b, n, _ = arr.shape
        x = Tensor(arr.reshape(b * n, 3))
        x = self.head(self.block2(self.block1(x)))
        return ad.amax(ad.reshape(x, (b, n, self.codeword_dim)), axis=1)


class SetAbstraction(nn.Module):
    """One sampling/grouping/mini-network stage.

    Groups carry neighbor coordinates relative to their center, concatenated
    with the neighbors' features; a shared MLP and a per-group max produce
    one feature per center.
    """

    def __init__(self, n_centers, radius, group_size, c_in, widths, rng):
        super().__init__()
        self.n_centers = n_centers
        self.radius = radius
        self.group_size = group_size
        self.mlp = nn.ModuleList()
        prev = 3 + c_in
        for w in widths:
            self.mlp.append(nn.LinearBlock(prev, w, rng))
            prev = w
        self.out_channels = prev

    def forward(self, xyz, feats):
        b, n, _ = xyz.shape
        s = min(self.n_centers, n)
        k = self.group_size
        centers = np.empty((b, s), dtype=np.int64)
        groups = np.empty((b, s, k), dtype=np.int64)
        for i in range(b):
            centers[i] = farthest_point_sample(xyz[i], s)
            groups[i] = ball_query(xyz[i], centers[i], self.radius, k)
        new_xyz = np.take_along_axis(xyz, centers[..., None], axis=1)
        # gather grouped neighbor coordinates, then recenter
        flat_idx = (groups + np.arange(b)[:, None, None] * n).reshape(-1)
        grouped_xyz = xyz.reshape(b * n, 3)[flat_idx].reshape(b, s, k, 3)
        grouped_xyz = grouped_xyz - new_xyz[:, :, None, :]
        parts = [Tensor(grouped_xyz.reshape(b * s * k, 3))]
        if feats is not None:
            c = feats.shape[-1]
            flat = ad.reshape(feats, (b * n, c))
            parts.append(ad.reshape(ad.gather(flat, flat_idx, axis=0),
                                    (b * s * k, c)))
        x = parts[0] if len(parts) == 1 else ad.concat(parts, axis=1)
        for blk in self.mlp:
            x = blk(x)
        pooled = ad.amax(ad.reshape(x, (b, s, k, self.out_channels)), axis=2)
        return new_xyz, pooled


class PointNetPPEncoder(Encoder):
    """Three set-abstraction stages (256/64/16 centers, radii .2/.4/.8,
    groups 32/32/16 on unit-normalized clouds) + global max + linear head."""

    MIN_POINTS = 64

    def __init__(self, codeword_dim, rng):
        super().__init__(codeword_dim)
        self.stage1 = SetAbstraction(256, 0.2, 32, 0, (64, 64, 128), rng)
        self.stage2 = SetAbstraction(64, 0.4, 32, 128, (128, 128, 256), rng)
        self.stage3 = SetAbstraction(16, 0.8, 16, 256, (256, 256, 512), rng)
        self.head = nn.Linear(512, codeword_dim, rng)

    def _encode(self, arr):
        if arr.shape[1] < self.MIN_POINTS:
            raise ConfigError(
                f"set-abstraction ladder needs N >= {self.MIN_POINTS}, "
                f"got {arr.shape[1]}"
            )
        xyz, feats = arr, None
        for stage in (self.stage1, self.stage2, self.stage3):
            xyz, feats = stage(xyz, feats)
        return self.head(ad.amax(feats, axis=1))


class TwoStageEncoder(Encoder):
    """Per-point MLP (128, 256) -> global max -> re-concat per point ->
    second MLP (512, codeword_dim) -> final max pool."""

    def __init__(self, codeword_dim, rng):
        super().__init__(codeword_dim)
        self.block1 = nn.LinearBlock(3, 128, rng)
        self.lin1 = nn.Linear(128, 256, rng)
        self.block2 = nn.LinearBlock(512, 512, rng)
        self.lin2 = nn.Linear(512, codeword_dim, rng)

    def stage1(self, arr):
        """Per-point features (B, N, 256) plus their global max (B, 256)."""
        b, n, _ = arr.shape
        x = self.lin1(self.block1(Tensor(arr.reshape(b * n, 3))))
        per_point = ad.reshape(x, (b, n, 256))
        return per_point, ad.amax(per_point, axis=1)

    def stage2(self, per_point, global_feat):
        b, n, _ = per_point.shape
        rep = ad.expand(global_feat, 1, n)
        x = ad.reshape(ad.concat([per_point, rep], axis=2), (b * n, 512))
        x = self.lin2(self.block2(x))
        return ad.amax(ad.reshape(x, (b, n, self.codeword_dim)), axis=1)

    def _encode(self, arr):
        per_point, global_feat = self.stage1(arr)
        return self.stage2(per_point, global_feat)


ENCODERS = {
    "pointnet": PointNetEncoder,
    "pointnet2": PointNetPPEncoder,
    "twostage": TwoStageEncoder,
}


def make_encoder(kind, codeword_dim, rng):
    if kind not in ENCODERS:
        raise ConfigError(
            f"unknown encoder '{kind}'; choose from {sorted(ENCODERS)}"
        )
    if codeword_dim < 2 or codeword_dim % 2:
        raise ConfigError(f"codeword_dim must be even and >= 2, got {codeword_dim}")
    return ENCODERS[kind](codeword_dim, rng)
