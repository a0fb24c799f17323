"""Geometry kernels over raw (N, 3) float arrays: sampling, neighborhoods,
normalization. All functions are pure; determinism comes from explicit seeds
and the fixed farthest-point start index."""

from __future__ import annotations

import numpy as np

from .errors import DegenerateInputError, ShapeError, UsageError


def _check_cloud(points, name="points"):
    points = np.asarray(points)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ShapeError(f"{name} must be (N, 3), got {points.shape}")
    if points.shape[0] < 1:
        raise UsageError(f"{name} is empty")
    if not np.all(np.isfinite(points)):
        raise ShapeError(f"{name} contains non-finite coordinates")
    return points


def farthest_point_sample(points, m, start=0, rng=None):
    """Greedy max-min subset of size m; returns indices.

    Starts at index 0 (or a random index when rng is given, for
    training-time augmentation). Distance ties break toward the lowest
    index. Squared distances are used internally (monotone-equivalent).
    """
    points = _check_cloud(points)
    n = points.shape[0]
    if not 1 <= m <= n:
        raise UsageError(f"farthest_point_sample: m={m} out of range for N={n}")
    if rng is not None:
        start = int(rng.integers(n))
    chosen = np.empty(m, dtype=np.int64)
    chosen[0] = start
    # min squared distance from each point to the chosen set
    best = np.sum((points - points[start]) ** 2, axis=1)
    for i in range(1, m):
        nxt = int(np.argmax(best))  # argmax takes the lowest index on ties
        chosen[i] = nxt
        d = np.sum((points - points[nxt]) ** 2, axis=1)
        np.minimum(best, d, out=best)
    return chosen


def ball_query(points, centers, radius, k_max):
    """Fixed-width neighborhoods: for each center index, up to k_max indices
    within radius, in ascending index order, padded by repeating the first
    found index. An isolated center returns itself repeated."""
    points = _check_cloud(points)
    centers = np.asarray(centers, dtype=np.int64)
    if centers.size == 0:
        raise UsageError("ball_query: empty center list")
    if radius <= 0:
        raise UsageError(f"ball_query: radius must be > 0, got {radius}")
    if k_max < 1:
        raise UsageError(f"ball_query: k_max must be >= 1, got {k_max}")
    r2 = float(radius) ** 2
    d2 = np.sum(
        (points[centers][:, None, :] - points[None, :, :]) ** 2, axis=2
    )
    groups = np.empty((centers.size, k_max), dtype=np.int64)
    for row, c in enumerate(centers):
        hits = np.nonzero(d2[row] <= r2)[0]
        if hits.size == 0:
            groups[row] = c
            continue
        take = hits[:k_max]
        groups[row, :take.size] = take
        if take.size < k_max:
            groups[row, take.size:] = take[0]
    return groups


def normalize(points):
    """Center at the origin and scale the max radius to 1.

    Returns (normalized points, centroid, scale) so the transform inverts:
    original = normalized * scale + centroid.
    """
    points = _check_cloud(points)
    centroid = points.mean(axis=0)
    centered = points - centroid
    scale = float(np.sqrt((centered ** 2).sum(axis=1).max()))
    if scale <= 0:
        raise DegenerateInputError("normalize: all points identical")
    return centered / scale, centroid, scale


def denormalize(points, centroid, scale):
    return np.asarray(points) * scale + np.asarray(centroid)


def resample(points, m, rng):
    """Uniform with-replacement draw of m points; deterministic under rng."""
    points = _check_cloud(points)
    if m < 1:
        raise UsageError(f"resample: m must be >= 1, got {m}")
    idx = rng.integers(points.shape[0], size=m)
    return points[idx]


def occlude(points, viewpoint, fraction, min_remaining=16):
    """Half-space cut: drop the points farthest along the viewpoint
    direction, keeping exactly round((1 - fraction) * N)."""
    points = _check_cloud(points)
    direction = np.asarray(viewpoint, dtype=np.float64)
    if direction.shape != (3,) or not np.any(direction):
        raise UsageError(f"occlude: bad viewpoint {viewpoint}")
    if not 0.0 < fraction < 1.0:
        raise UsageError(f"occlude: fraction must be in ]0,1[, got {fraction}")
    n = points.shape[0]
    keep = int(round((1.0 - fraction) * n))
    if keep < min_remaining:
        raise DegenerateInputError(
            f"occlude: fraction {fraction} leaves {keep} < {min_remaining} points"
        )
    depth = points @ (direction / np.linalg.norm(direction))
    order = np.argsort(depth, kind="stable")
    kept = np.sort(order[:keep])
    return points[kept]
