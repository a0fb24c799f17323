"""Chamfer distance: evaluation metric, differentiable training loss, and a
finite-difference self-check.

The distance is the mean nearest-neighbor L2 norm from a to b plus the
symmetric term (non-squared norms). A squared variant sits behind a flag
because some benchmark conventions differ; reports emit both.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import UsageError
from .pointcloud import _check_cloud


@dataclass
class ChamferReport:
    value: float
    direction_a_to_b: float
    direction_b_to_a: float
    scale_factor: float = 1.0


def _pairwise_sq(a, b):
    diff = a[:, None, :] - b[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def chamfer(a, b, squared=False):
    """Symmetric mean nearest-neighbor distance between two clouds."""
    a = _check_cloud(a, "a")
    b = _check_cloud(b, "b")
    d2 = _pairwise_sq(a, b)
    ab = d2.min(axis=1)
    ba = d2.min(axis=0)
    if not squared:
        ab = np.sqrt(ab)
        ba = np.sqrt(ba)
    term_ab = float(ab.mean())
    term_ba = float(ba.mean())
    return ChamferReport(term_ab + term_ba, term_ab, term_ba)


def report_scaled(report, scale):
    """Value times a reporting power of ten (1, 1e3, or 1e4)."""
    if scale not in (1, 10**3, 10**4):
        raise UsageError(f"report scale must be 1, 1e3, or 1e4, got {scale}")
    return report.value * scale


def chamfer_loss(pred, target):
    """Differentiable chamfer between pred Tensor (B, M, 3) or (M, 3) and a
    constant target array of matching batch shape.

    Nearest-neighbor matching is computed outside the graph; the loss is
    assembled from gather/sub/mul/sqrt/mean so gradients flow through the
    matched pairs (one-sided subgradient at ties, lowest index wins).
    """
    if not isinstance(pred, Tensor):
        raise UsageError("chamfer_loss expects a Tensor prediction")
    target = np.asarray(target, dtype=pred.dtype)
    squeeze = pred.ndim == 2
    if squeeze:
        pred = ad.reshape(pred, (1,) + pred.shape)
        target = target[None]
    if pred.ndim != 3 or target.ndim != 3 or pred.shape[2] != 3 \
            or target.shape[2] != 3:
        raise UsageError(
            f"chamfer_loss: got pred {pred.shape}, target {target.shape}"
        )
    if pred.shape[0] != target.shape[0]:
        raise UsageError("chamfer_loss: batch sizes differ")
    bsz, m, _ = pred.shape
    n = target.shape[1]

    pd = pred.data
    match_ab = np.empty((bsz, m), dtype=np.int64)
    match_ba = np.empty((bsz, n), dtype=np.int64)
    for i in range(bsz):
        d2 = _pairwise_sq(pd[i], target[i])
        match_ab[i] = d2.argmin(axis=1)
        match_ba[i] = d2.argmin(axis=0)

    flat_pred = ad.reshape(pred, (bsz * m, 3))
    # a -> b: each predicted point against its nearest target point
    nearest_t = target.reshape(bsz * n, 3)[
        (match_ab + np.arange(bsz)[:, None] * n).reshape(-1)
    ]
    diff_ab = ad.sub(flat_pred, Tensor(nearest_t))
    dist_ab = ad.sqrt(ad.tsum(ad.mul(diff_ab, diff_ab), axis=1))
    # b -> a: each target point against its nearest predicted point
    take = (match_ba + np.arange(bsz)[:, None] * m).reshape(-1)
    matched_pred = ad.gather(flat_pred, take, axis=0)
    diff_ba = ad.sub(matched_pred, Tensor(target.reshape(bsz * n, 3)))
    dist_ba = ad.sqrt(ad.tsum(ad.mul(diff_ba, diff_ba), axis=1))
    return ad.add(ad.mean(dist_ab), ad.mean(dist_ba))


def chamfer_grad_check(a, b, rtol=1e-4, tie_eps=1e-6):
    """Analytic-vs-finite-difference check of the loss gradient w.r.t. a.

    Returns True on agreement, None when a nearest-neighbor tie within
    tie_eps makes the point a subgradient (example skipped).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[0] > 32 or b.shape[0] > 32:
        raise UsageError("chamfer_grad_check is for small clouds (<= 32 points)")
    for x, y in ((a, b), (b, a)):
        d2 = np.sort(_pairwise_sq(x, y), axis=1)
        if d2.shape[1] > 1 and np.any(np.abs(np.sqrt(d2[:, 1]) - np.sqrt(d2[:, 0])) < tie_eps):
            return None
        if np.any(d2[:, 0] < tie_eps ** 2):
            # coincident pair: sqrt is non-differentiable at 0
            return None

    def fn(t):
        return chamfer_loss(t, b)

    _, _, _, ok = ad.check_gradient(fn, a, rtol=rtol)
    return bool(ok)
