"""Synthetic shape corpus, cloud file IO, dataset manifests, splits, batching.

Six analytic families stand in for scanned-object datasets at desk scale:
sphere, box, cylinder, torus, plane-with-hole, and a chair-like composite
of axis-aligned boxes. Sampling is area-weighted and uniform on the surface,
with optional isotropic Gaussian noise. Clouds are exchanged as ASCII PLY or
plain XYZ text; a corpus is a TSV manifest of id/path/label/split rows.
"""

import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DataError
from .pointcloud import normalize, occlude, resample

FAMILIES = (
    "sphere",
    "box",
    "cylinder",
    "torus",
    "plane-with-hole",
    "composite-chair-like",
)

DEFAULT_PARAMS = {
    "sphere": {"radius": 1.0},
    "box": {"extents": (1.0, 1.0, 1.0)},
    "cylinder": {"radius": 0.5, "height": 1.2},
    "torus": {"major_radius": 1.0, "minor_radius": 0.3},
    "plane-with-hole": {"side": 2.0, "hole_radius": 0.5},
    "composite-chair-like": {"scale": 1.0, "back_height": 0.9, "leg_height": 0.5},
}


@dataclass
class SyntheticSpec:
    """Recipe for one synthetic cloud: family, shape params, count, noise."""

    family: str
    params: dict = field(default_factory=dict)
    n_points: int = 1024
    noise_sigma: float = 0.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family '{self.family}', expected one of {FAMILIES}")
        if self.n_points < 1:
            raise ConfigError(f"n_points must be >= 1, got {self.n_points}")
        if self.noise_sigma < 0:
            raise ConfigError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        defaults = DEFAULT_PARAMS[self.family]
        for key in self.params:
            if key not in defaults:
                raise ConfigError(f"unknown param '{key}' for family '{self.family}'")
        merged = dict(defaults)
        merged.update(self.params)
        self.params = merged
        _validate_params(self.family, self.params)


def _validate_params(family, p):
    if family == "sphere":
        if p["radius"] <= 0:
            raise ConfigError("sphere radius must be positive")
    elif family == "box":
        ext = p["extents"]
        if len(ext) != 3 or any(e <= 0 for e in ext):
            raise ConfigError(f"box extents must be 3 positive lengths, got {ext}")
    elif family == "cylinder":
        if p["radius"] <= 0 or p["height"] <= 0:
            raise ConfigError("cylinder radius and height must be positive")
    elif family == "torus":
        if p["minor_radius"] <= 0 or p["major_radius"] <= 0:
            raise ConfigError("torus radii must be positive")
        if p["minor_radius"] >= p["major_radius"]:
            raise ConfigError("torus needs minor_radius < major_radius")
    elif family == "plane-with-hole":
        if p["side"] <= 0:
            raise ConfigError("plane side must be positive")
        if not 0 <= p["hole_radius"] < p["side"] / 2:
            raise ConfigError("hole_radius must lie in [0, side/2)")
    elif family == "composite-chair-like":
        if p["scale"] <= 0 or p["back_height"] <= 0 or p["leg_height"] <= 0:
            raise ConfigError("chair scale and part heights must be positive")


# ---------------------------------------------------------------------------
# surface samplers
# ---------------------------------------------------------------------------


def _as_rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _box_faces(center, size):
    """Six axis-aligned rectangles of a box as (origin, edge_u, edge_v) rows."""
    center = np.asarray(center, dtype=np.float64)
    size = np.asarray(size, dtype=np.float64)
    faces = []
    for axis in range(3):
        u_axis, v_axis = [a for a in range(3) if a != axis]
        for sign in (-1.0, 1.0):
            origin = center - size / 2
            origin = origin.copy()
            origin[axis] = center[axis] + sign * size[axis] / 2
            edge_u = np.zeros(3)
            edge_u[u_axis] = size[u_axis]
            edge_v = np.zeros(3)
            edge_v[v_axis] = size[v_axis]
            faces.append((origin, edge_u, edge_v))
    return faces


def _sample_faces(faces, n, rng):
    """Area-weighted uniform sample over a list of axis-aligned rectangles."""
    areas = np.array([np.linalg.norm(u) * np.linalg.norm(v) for _, u, v in faces])
    pick = rng.choice(len(faces), size=n, p=areas / areas.sum())
    ab = rng.random((n, 2))
    out = np.empty((n, 3), dtype=np.float64)
    for i, (origin, edge_u, edge_v) in enumerate(faces):
        mask = pick == i
        out[mask] = origin + ab[mask, :1] * edge_u + ab[mask, 1:] * edge_v
    return out


def _sample_sphere(p, n, rng):
    v = rng.normal(size=(n, 3))
    norms = np.linalg.norm(v, axis=1, keepdims=True)
    # A fresh Gaussian triple essentially never lands at the origin, but the
    # guard keeps the division defined.
    norms[norms < 1e-12] = 1.0
    return p["radius"] * v / norms


def _sample_box(p, n, rng):
    return _sample_faces(_box_faces((0.0, 0.0, 0.0), p["extents"]), n, rng)


def _sample_cylinder(p, n, rng):
    r, h = p["radius"], p["height"]
    lateral = 2 * np.pi * r * h
    cap = np.pi * r * r
    part = rng.choice(3, size=n, p=np.array([lateral, cap, cap]) / (lateral + 2 * cap))
    theta = rng.random(n) * 2 * np.pi
    out = np.empty((n, 3), dtype=np.float64)
    side = part == 0
    out[side, 0] = r * np.cos(theta[side])
    out[side, 1] = r * np.sin(theta[side])
    out[side, 2] = (rng.random(side.sum()) - 0.5) * h
    for which, z in ((part == 1, h / 2), (part == 2, -h / 2)):
        rho = r * np.sqrt(rng.random(which.sum()))
        out[which, 0] = rho * np.cos(theta[which])
        out[which, 1] = rho * np.sin(theta[which])
        out[which, 2] = z
    return out


def _sample_torus(p, n, rng):
    big, small = p["major_radius"], p["minor_radius"]
    # Uniform area needs density prop. to big + small*cos(v) in the tube
    # angle; plain rejection against that envelope does it.
    us = np.empty(0)
    vs = np.empty(0)
    while us.size < n:
        m = max(2 * (n - us.size), 64)
        u = rng.random(m) * 2 * np.pi
        v = rng.random(m) * 2 * np.pi
        keep = rng.random(m) * (big + small) < big + small * np.cos(v)
        us = np.concatenate([us, u[keep]])
        vs = np.concatenate([vs, v[keep]])
    u, v = us[:n], vs[:n]
    ring = big + small * np.cos(v)
    return np.stack([ring * np.cos(u), ring * np.sin(u), small * np.sin(v)], axis=1)


def _sample_plane_with_hole(p, n, rng):
    side, hole = p["side"], p["hole_radius"]
    xs = np.empty(0)
    ys = np.empty(0)
    while xs.size < n:
        m = max(2 * (n - xs.size), 64)
        x = (rng.random(m) - 0.5) * side
        y = (rng.random(m) - 0.5) * side
        keep = x * x + y * y >= hole * hole
        xs = np.concatenate([xs, x[keep]])
        ys = np.concatenate([ys, y[keep]])
    out = np.zeros((n, 3), dtype=np.float64)
    out[:, 0] = xs[:n]
    out[:, 1] = ys[:n]
    return out


def _chair_faces(p):
    s = p["scale"]
    back_h = p["back_height"]
    leg_h = p["leg_height"]
    seat_y = leg_h + 0.05 * s
    faces = _box_faces((0, seat_y, 0), (0.9 * s, 0.1 * s, 0.9 * s))
    faces += _box_faces((0, seat_y + back_h / 2, -0.4 * s), (0.9 * s, back_h, 0.1 * s))
    for dx in (-0.35, 0.35):
        for dz in (-0.35, 0.35):
            faces += _box_faces((dx * s, leg_h / 2, dz * s), (0.1 * s, leg_h, 0.1 * s))
    return faces


def _sample_chair(p, n, rng):
    return _sample_faces(_chair_faces(p), n, rng)


_SAMPLERS = {
    "sphere": _sample_sphere,
    "box": _sample_box,
    "cylinder": _sample_cylinder,
    "torus": _sample_torus,
    "plane-with-hole": _sample_plane_with_hole,
    "composite-chair-like": _sample_chair,
}


def sample_synthetic(spec, seed):
    """Draw spec.n_points area-weighted surface points, (n, 3) float32.

    Isotropic Gaussian noise of scale spec.noise_sigma is added after the
    surface draw. Deterministic for a fixed seed or Generator state.
    """
    rng = _as_rng(seed)
    pts = _SAMPLERS[spec.family](spec.params, spec.n_points, rng)
    if spec.noise_sigma > 0:
        pts = pts + rng.normal(scale=spec.noise_sigma, size=pts.shape)
    return pts.astype(np.float32)


# ---------------------------------------------------------------------------
# records, corpus, splits
# ---------------------------------------------------------------------------


@dataclass
class ShapeRecord:
    """One dataset item: a normalized cloud with label, split, stable id."""

    id: str
    cloud: np.ndarray
    label: int
    split: str = "train"
    partial: np.ndarray = None


def _jitter_params(family, rng):
    """Per-record shape parameter jitter so a family is not a single shape."""
    u = lambda lo, hi: float(lo + (hi - lo) * rng.random())
    if family == "sphere":
        return {"radius": u(0.7, 1.3)}
    if family == "box":
        return {"extents": (u(0.6, 1.4), u(0.6, 1.4), u(0.6, 1.4))}
    if family == "cylinder":
        return {"radius": u(0.35, 0.8), "height": u(0.8, 1.6)}
    if family == "torus":
        return {"major_radius": u(0.8, 1.2), "minor_radius": u(0.18, 0.38)}
    if family == "plane-with-hole":
        return {"side": u(1.6, 2.4), "hole_radius": u(0.25, 0.6)}
    return {"scale": u(0.8, 1.2), "back_height": u(0.7, 1.1), "leg_height": u(0.4, 0.6)}


def make_synthetic_corpus(
    families=FAMILIES[:4],
    per_family=8,
    n_points=1024,
    noise_sigma=0.0,
    seed=0,
):
    """Build a labeled corpus of normalized clouds, label = family index."""
    rng = _as_rng(seed)
    records = []
    for label, family in enumerate(families):
        if family not in FAMILIES:
            raise ConfigError(f"unknown family '{family}'")
        for i in range(per_family):
            spec = SyntheticSpec(family, _jitter_params(family, rng), n_points, noise_sigma)
            cloud, _, _ = normalize(sample_synthetic(spec, rng))
            records.append(ShapeRecord(f"{family}-{i:03d}", cloud.astype(np.float32), label))
    return records


def attach_partials(records, fraction=0.5, seed=0):
    """Give each record a partial cloud: half-space cut from a random view."""
    rng = _as_rng(seed)
    for rec in records:
        view = rng.normal(size=3)
        view /= np.linalg.norm(view)
        rec.partial = occlude(rec.cloud, view, fraction)
    return records


def make_splits(records, ratios, seed, names=("train", "val", "test")):
    """Assign stratified splits in place; returns {record id: split name}.

    Per label, counts follow the ratios by largest remainder, then every
    split with a nonzero ratio is topped up to at least one record. A label
    with fewer records than nonzero-ratio splits cannot be stratified.
    """
    ratios = tuple(float(r) for r in ratios)
    if abs(sum(ratios) - 1.0) > 1e-6:
        raise ConfigError(f"split ratios must sum to 1, got {ratios}")
    if any(r < 0 for r in ratios):
        raise ConfigError(f"split ratios must be nonnegative, got {ratios}")
    if len(ratios) > len(names):
        raise ConfigError(f"{len(ratios)} ratios but only names {names}")
    names = tuple(names[: len(ratios)])
    active = [i for i, r in enumerate(ratios) if r > 0]

    rng = _as_rng(seed)
    by_label = {}
    for idx, rec in enumerate(records):
        by_label.setdefault(rec.label, []).append(idx)

    assignment = {}
    for label in sorted(by_label):
        idxs = np.array(by_label[label])
        if len(idxs) < len(active):
            raise DataError(
                f"label {label} has {len(idxs)} records, fewer than "
                f"{len(active)} populated splits"
            )
        rng.shuffle(idxs)
        counts = _largest_remainder(len(idxs), ratios)
        for i in active:
            while counts[i] == 0:
                donor = int(np.argmax(counts))
                counts[donor] -= 1
                counts[i] += 1
        start = 0
        for i, name in enumerate(names):
            for idx in idxs[start : start + counts[i]]:
                records[idx].split = name
                assignment[records[idx].id] = name
            start += counts[i]
    return assignment


def _largest_remainder(total, ratios):
    exact = np.array(ratios) * total
    counts = np.floor(exact).astype(int)
    order = np.argsort(-(exact - counts), kind="stable")
    for i in range(total - counts.sum()):
        counts[order[i % len(ratios)]] += 1
    return counts


def split_records(records, split):
    return [r for r in records if r.split == split]


def batch_clouds(records, batch_size, rng=None, shuffle=True):
    """Yield (ids, points (b, n, 3) float32, labels (b,)) minibatches."""
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")
    order = np.arange(len(records))
    if shuffle:
        _as_rng(rng).shuffle(order)
    n = records[0].cloud.shape[0] if records else 0
    for start in range(0, len(records), batch_size):
        chunk = [records[i] for i in order[start : start + batch_size]]
        if any(r.cloud.shape[0] != n for r in chunk):
            raise DataError("ragged batch: records have differing point counts")
        ids = [r.id for r in chunk]
        pts = np.stack([r.cloud for r in chunk]).astype(np.float32)
        labels = np.array([r.label for r in chunk], dtype=np.int64)
        yield ids, pts, labels


# ---------------------------------------------------------------------------
# cloud file formats
# ---------------------------------------------------------------------------

# %.9g prints enough digits that float32 -> text -> float32 is exact.
_FLOAT_FMT = "%.9g"


def _sniff_format(path, fmt):
    if fmt is not None:
        if fmt not in ("ply_ascii", "xyz_text"):
            raise ConfigError(f"unknown cloud format '{fmt}'")
        return fmt
    ext = os.path.splitext(path)[1].lower()
    if ext == ".ply":
        return "ply_ascii"
    if ext == ".xyz":
        return "xyz_text"
    raise ConfigError(f"cannot infer cloud format from '{path}'; pass fmt")


def save_cloud(path, points, fmt=None):
    """Write an (n, 3) cloud as ASCII PLY or XYZ text."""
    fmt = _sniff_format(path, fmt)
    points = np.asarray(points, dtype=np.float32)
    if points.ndim != 2 or points.shape[1] != 3:
        raise DataError(f"expected (n, 3) cloud, got {points.shape}")
    rows = "\n".join(
        " ".join(_FLOAT_FMT % v for v in row) for row in points
    )
    with open(path, "w") as fh:
        if fmt == "ply_ascii":
            fh.write("ply\nformat ascii 1.0\n")
            fh.write(f"element vertex {len(points)}\n")
            fh.write("property float x\nproperty float y\nproperty float z\n")
            fh.write("end_header\n")
        fh.write(rows)
        if rows:
            fh.write("\n")


def _parse_row(token_line, lineno, path):
    parts = token_line.split()
    if len(parts) != 3:
        raise DataError(f"{path} line {lineno}: expected 3 coordinates, got {len(parts)}")
    try:
        return [float(p) for p in parts]
    except ValueError:
        raise DataError(f"{path} line {lineno}: bad float in '{token_line}'") from None


def load_cloud(path, fmt=None):
    """Read a cloud file back as an (n, 3) float32 array."""
    fmt = _sniff_format(path, fmt)
    with open(path) as fh:
        lines = fh.read().splitlines()
    if fmt == "xyz_text":
        rows = [
            _parse_row(ln, i + 1, path)
            for i, ln in enumerate(lines)
            if ln.strip()
        ]
        return np.array(rows, dtype=np.float32).reshape(-1, 3)
    return _parse_ply(lines, path)


def _parse_ply(lines, path):
    if not lines or lines[0].strip() != "ply":
        raise DataError(f"{path} line 1: not a PLY file (missing 'ply' magic)")
    count = None
    body_at = None
    props = []
    for i, ln in enumerate(lines[1:], start=2):
        word = ln.strip().split()
        if not word:
            continue
        if word[0] == "format":
            if word[1:2] != ["ascii"]:
                raise DataError(f"{path} line {i}: only 'format ascii 1.0' is supported")
        elif word[0] == "element":
            if word[1] != "vertex" or len(word) != 3:
                raise DataError(f"{path} line {i}: only 'element vertex <n>' is supported")
            try:
                count = int(word[2])
            except ValueError:
                raise DataError(f"{path} line {i}: bad vertex count '{word[2]}'") from None
        elif word[0] == "property":
            if len(word) != 3 or word[1] not in ("float", "float32"):
                raise DataError(f"{path} line {i}: unsupported property '{ln.strip()}'")
            props.append(word[2])
        elif word[0] == "end_header":
            body_at = i
            break
    if body_at is None:
        raise DataError(f"{path}: missing end_header")
    if count is None:
        raise DataError(f"{path}: header has no 'element vertex' line")
    if props != ["x", "y", "z"]:
        raise DataError(f"{path}: expected properties x y z, got {props}")
    body = [
        (_parse_row(ln, i, path))
        for i, ln in enumerate(lines[body_at:], start=body_at + 1)
        if ln.strip()
    ]
    if len(body) != count:
        raise DataError(
            f"{path}: header promises {count} vertices, body has {len(body)}"
        )
    return np.array(body, dtype=np.float32).reshape(-1, 3)


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------


def write_manifest(records, manifest_path, cloud_dir, fmt="ply_ascii"):
    """Save record clouds under cloud_dir and write a TSV manifest.

    Rows are `id<TAB>path<TAB>label<TAB>split`, paths relative to the
    manifest's directory.
    """
    os.makedirs(cloud_dir, exist_ok=True)
    ext = ".ply" if fmt == "ply_ascii" else ".xyz"
    base = os.path.dirname(os.path.abspath(manifest_path))
    lines = []
    for rec in records:
        cloud_path = os.path.join(cloud_dir, rec.id + ext)
        save_cloud(cloud_path, rec.cloud, fmt)
        rel = os.path.relpath(os.path.abspath(cloud_path), base)
        lines.append(f"{rec.id}\t{rel}\t{rec.label}\t{rec.split}")
    with open(manifest_path, "w") as fh:
        fh.write("\n".join(lines) + ("\n" if lines else ""))


def load_manifest(manifest_path):
    """Read a TSV manifest back into ShapeRecords (clouds loaded eagerly)."""
    base = os.path.dirname(os.path.abspath(manifest_path))
    records = []
    with open(manifest_path) as fh:
        for lineno, raw in enumerate(fh.read().splitlines(), start=1):
            if not raw.strip():
                continue
            parts = raw.split("\t")
            if len(parts) != 4:
                raise DataError(
                    f"{manifest_path} line {lineno}: expected 4 tab-separated "
                    f"fields, got {len(parts)}"
                )
            rec_id, rel, label, split = parts
            if split not in ("train", "val", "test"):
                raise DataError(f"{manifest_path} line {lineno}: bad split '{split}'")
            try:
                label = int(label)
            except ValueError:
                raise DataError(
                    f"{manifest_path} line {lineno}: bad label '{label}'"
                ) from None
            cloud = load_cloud(os.path.join(base, rel))
            records.append(ShapeRecord(rec_id, cloud, label, split))
    return records
