"""Point-cloud operations: Chamfer distance, unit-sphere scaling, voxel
downsampling, goal-cloud construction, the vision success criterion, and the
training-time augmentation suite.

Clouds are (N, 3) float64 arrays of points in meters plus optional (N, 3)
RGB colors in [0, 1].
"""

from dataclasses import dataclass

import numpy as np

from . import rotation as rt

VOXEL_RESOLUTION = 0.003
VISION_ANGLE_THRESHOLD = 0.2
VISION_CHAMFER_THRESHOLD = 0.01
GOAL_CLOUD_POINTS = 5000
BRUTE_FORCE_LIMIT = 64
AUGMENT_GATE_PROB = 0.4


@dataclass
class PointCloud:
    points: np.ndarray            # (N, 3) float64
    colors: np.ndarray = None     # (N, 3) float64 in [0, 1], or None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError(f"points must be (N, 3), got {self.points.shape}")
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.float64)
            if self.colors.shape != self.points.shape:
                raise ValueError("colors must match points shape")

    def __len__(self):
        return self.points.shape[0]


def _nn_sq_dists_brute(query, data):
    out = np.empty(query.shape[0])
    block = 256
    for i in range(0, query.shape[0], block):
        q = query[i : i + block]
        d2 = ((q[:, None, :] - data[None, :, :]) ** 2).sum(axis=2)
        out[i : i + block] = d2.min(axis=1)
    return out


def _nn_sq_dists_grid(query, data):
    """Nearest-neighbor squared distances via a uniform voxel grid.

    Expanding Chebyshev-ring search; safe termination because every point in
    a cell at ring k+1 lies at least k*h from a query in its own cell.
    """
    lo = data.min(axis=0)
    span = data.max(axis=0) - lo
    vol = float(np.prod(np.maximum(span, 1e-12)))
    h = (vol / data.shape[0]) ** (1.0 / 3.0)
    if h <= 0.0 or not np.isfinite(h):
        return _nn_sq_dists_brute(query, data)

    keys = np.floor((data - lo) / h).astype(np.int64)
    cells = {}
    for idx, k in enumerate(map(tuple, keys)):
        cells.setdefault(k, []).append(idx)
    cells = {k: data[np.array(v)] for k, v in cells.items()}

    out = np.empty(query.shape[0])
    qkeys = np.floor((query - lo) / h).astype(np.int64)
    for i in range(query.shape[0]):
        q = query[i]
        cx, cy, cz = qkeys[i]
        best = np.inf
        ring = 0
        while True:
            # cells whose Chebyshev index distance is exactly `ring`
            for dx in range(-ring, ring + 1):
                for dy in range(-ring, ring + 1):
                    for dz in range(-ring, ring + 1):
                        if max(abs(dx), abs(dy), abs(dz)) != ring:
                            continue
                        pts = cells.get((cx + dx, cy + dy, cz + dz))
                        if pts is not None:
                            d2 = ((pts - q) ** 2).sum(axis=1).min()
                            if d2 < best:
                                best = d2
            if best <= (ring * h) ** 2 and best < np.inf:
                break
            ring += 1
        out[i] = best
    return out


def _nn_sq_dists(query, data):
    if min(query.shape[0], data.shape[0]) < BRUTE_FORCE_LIMIT:
        return _nn_sq_dists_brute(query, data)
    return _nn_sq_dists_grid(query, data)


def chamfer(a, b):
    """Chamfer distance: sum of squared nearest-neighbor distances, both directions."""
    pa = a.points if isinstance(a, PointCloud) else np.asarray(a, dtype=np.float64)
    pb = b.points if isinstance(b, PointCloud) else np.asarray(b, dtype=np.float64)
    if pa.shape[0] == 0 or pb.shape[0] == 0:
        raise ValueError("chamfer requires nonempty clouds")
    return float(_nn_sq_dists(pa, pb).sum() + _nn_sq_dists(pb, pa).sum())


def scale_to_unit_sphere(p):
    """Translate centroid to the origin and divide by the max point norm.

    A cloud whose points all coincide maps to all zeros.
    """
    pts = p.points
    if pts.shape[0] == 0:
        raise ValueError("empty cloud")
    centered = pts - pts.mean(axis=0)
    r = np.linalg.norm(centered, axis=1).max()
    if r == 0.0:
        return PointCloud(np.zeros_like(pts), p.colors)
    return PointCloud(centered / r, p.colors)


def voxelize(p, resolution=VOXEL_RESOLUTION):
    """One point per occupied voxel, at the centroid of its members (colors averaged)."""
    if resolution <= 0.0:
        raise ValueError("resolution must be positive")
    pts = p.points
    keys = np.floor(pts / resolution).astype(np.int64)
    uniq, inverse = np.unique(keys, axis=0, return_inverse=True)
    n_vox = uniq.shape[0]
    counts = np.bincount(inverse, minlength=n_vox).astype(np.float64)
    centroids = np.zeros((n_vox, 3))
    np.add.at(centroids, inverse, pts)
    centroids /= counts[:, None]
    colors = None
    if p.colors is not None:
        colors = np.zeros((n_vox, 3))
        np.add.at(colors, inverse, p.colors)
        colors /= counts[:, None]
    return PointCloud(centroids, colors)


def make_goal_cloud(obj, goal, n=GOAL_CLOUD_POINTS, offset=(0.0, 0.0, 0.0), rng=None):
    """Surface-sample the object mesh, rotate by the goal orientation, translate.

    Matching observed/goal clouds for the same object should share the rng
    seed so the underlying surface samples correspond point-for-point.
    """
    from .objects import object_point_cloud

    if n < 1:
        raise ValueError("n must be >= 1")
    if rng is None:
        rng = np.random.default_rng(0)
    pts = object_point_cloud(obj, n, rng)
    pts = rt.quat_rotate(np.asarray(goal, dtype=np.float64), pts)
    return PointCloud(pts + np.asarray(offset, dtype=np.float64))


def vision_success(angle_err, d_c):
    """Vision-policy success test: angle within 0.2 rad OR Chamfer within 0.01."""
    if angle_err < 0.0 or d_c < 0.0:
        raise ValueError("angle_err and d_c must be non-negative")
    return bool(angle_err <= VISION_ANGLE_THRESHOLD or d_c <= VISION_CHAMFER_THRESHOLD)


def _truncated_normal(rng, shape, std, bound):
    """N(0, std) resampled until within [-bound, bound]."""
    out = rng.normal(0.0, std, shape)
    bad = np.abs(out) > bound
    while np.any(bad):
        out[bad] = rng.normal(0.0, std, int(bad.sum()))
        bad = np.abs(out) > bound
    return out


def _jitter_color(colors, rng):
    out = colors.copy()
    if rng.random() < 0.3:
        # brightness and per-channel rgb jitter
        out = out + rng.uniform(-0.1, 0.1) + rng.uniform(-0.05, 0.05, 3)
    if rng.random() < 0.3:
        # convert 30% of points to gray
        n = out.shape[0]
        k = max(1, round(0.3 * n))
        idx = rng.choice(n, size=k, replace=False)
        gray = out[idx] @ np.array([0.299, 0.587, 0.114])
        out[idx] = gray[:, None]
    if rng.random() < 0.3:
        # contrast about mid-gray
        out = 0.5 + (out - 0.5) * (1.0 + rng.uniform(-0.3, 0.3))
    return np.clip(out, 0.0, 1.0)


def augment_verbose(p, rng):
    """Apply the four training augmentations, each with probability 0.4.

    Returns (cloud, applied) where applied maps transform name to bool.
    Gates are always drawn in a fixed order (trans, jitter, dropout, color)
    so a given rng stream reproduces the same decision sequence.
    """
    pts = p.points.copy()
    colors = None if p.colors is None else p.colors.copy()
    applied = {}

    applied["trans"] = rng.random() < AUGMENT_GATE_PROB
    applied["jitter"] = rng.random() < AUGMENT_GATE_PROB
    applied["dropout"] = rng.random() < AUGMENT_GATE_PROB
    applied["color"] = rng.random() < AUGMENT_GATE_PROB

    if applied["trans"]:
        pts = pts + rng.uniform(-0.04, 0.04, 3)
    if applied["jitter"]:
        n = pts.shape[0]
        k = max(1, round(0.1 * n))
        idx = rng.choice(n, size=k, replace=False)
        pts[idx] = pts[idx] + _truncated_normal(rng, (k, 3), 0.01, 0.015)
    if applied["dropout"]:
        n = pts.shape[0]
        ratio = rng.uniform(0.0, 0.4)
        keep = max(1, n - round(ratio * n))
        idx = np.sort(rng.choice(n, size=keep, replace=False))
        pts = pts[idx]
        if colors is not None:
            colors = colors[idx]
    if applied["color"] and colors is not None:
        colors = _jitter_color(colors, rng)

    return PointCloud(pts, colors), applied


def augment(p, rng):
    return augment_verbose(p, rng)[0]


def write_ply(p, path):
    """ASCII PLY (xyz, plus uchar rgb when colors are present)."""
    n = len(p)
    has_color = p.colors is not None
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {n}",
        "property float x",
        "property float y",
        "property float z",
    ]
    if has_color:
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    lines.append("end_header")
    body = []
    rgb = None
    if has_color:
        rgb = np.clip(np.round(p.colors * 255.0), 0, 255).astype(np.int64)
    for i in range(n):
        x, y, z = p.points[i]
        row = f"{x:.8f} {y:.8f} {z:.8f}"
        if has_color:
            row += f" {rgb[i, 0]} {rgb[i, 1]} {rgb[i, 2]}"
        body.append(row)
    with open(path, "w") as f:
        f.write("\n".join(lines + body) + "\n")
