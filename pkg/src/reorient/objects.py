"""Procedural object populations standing in for mesh datasets.

Objects are box proxies: half extents with a shape-factor perturbation, a
mass, a diagonal inertia, and two seeded direction fields that the surrogate
environment consumes:

* contact_map G (A x 3): columns are unit A-vectors mapping joint tracking
  error to object torque;
* grip_vector u (A,): unit A-vector whose alignment with the joint pose sets
  grip strength.

Both are drawn as Gaussian perturbations around a fixed shared basis (the
basis seed is a module constant, not derived from the set seed), so every
object is controllable by related joint motions and skills can transfer
across object sets. The perturbation scale controls how much per-object
system identification a policy needs.
"""

import json
from dataclasses import dataclass, field

import numpy as np

EGAD_LMAX_RANGE = (0.05, 0.08)
YCB_LMAX_RANGE = (0.05, 0.12)
MASS_RANGE = (0.05, 0.15)
EGAD_MAX_ASPECT = 2.5
YCB_MAX_ASPECT = 6.0
DEFAULT_JOINTS = 24

# spread of per-object contact/grip directions around the shared basis
CONTACT_NOISE = 0.4
GRIP_NOISE = 0.35

_BASIS_SEED = 710452

FAMILIES = ("EgadLike", "YcbLike")

_BOX_TRIS = np.array(
    [
        [0, 1, 3], [0, 3, 2],      # -x .. +x faces follow
        [4, 6, 7], [4, 7, 5],
        [0, 4, 5], [0, 5, 1],
        [2, 3, 7], [2, 7, 6],
        [0, 2, 6], [0, 6, 4],
        [1, 5, 7], [1, 7, 3],
    ],
    dtype=np.int64,
)


def _box_vertices(half):
    hx, hy, hz = half
    return np.array(
        [
            [-hx, -hy, -hz],
            [-hx, -hy, hz],
            [-hx, hy, -hz],
            [-hx, hy, hz],
            [hx, -hy, -hz],
            [hx, -hy, hz],
            [hx, hy, -hz],
            [hx, hy, hz],
        ]
    )


def contact_basis(n_joints=DEFAULT_JOINTS):
    """Shared orthonormal basis: 3 torque columns + 1 grip direction."""
    rng = np.random.default_rng(_BASIS_SEED)
    m = rng.standard_normal((n_joints, 4))
    q, _ = np.linalg.qr(m)
    return q[:, :3].copy(), q[:, 3].copy()


@dataclass(eq=False)
class ObjectSpec:
    id: str
    family: str
    half_extents: np.ndarray      # (3,) m
    l_max: float                  # longest bounding-box side, m
    mass: float                   # kg
    inertia_diag: np.ndarray      # (3,) kg m^2
    contact_map: np.ndarray       # (A, 3), unit columns
    grip_vector: np.ndarray       # (A,), unit
    shape_factor: np.ndarray = field(default=None)  # (3,) in [0.8, 1.2]
    surface_points: np.ndarray = field(default=None)  # (K, 3) stored sample

    def __post_init__(self):
        self.half_extents = np.asarray(self.half_extents, dtype=np.float64)
        self.inertia_diag = np.asarray(self.inertia_diag, dtype=np.float64)
        self.contact_map = np.asarray(self.contact_map, dtype=np.float64)
        self.grip_vector = np.asarray(self.grip_vector, dtype=np.float64)
        if self.shape_factor is None:
            self.shape_factor = np.ones(3)
        self.shape_factor = np.asarray(self.shape_factor, dtype=np.float64)
        if self.surface_points is None:
            self.surface_points = object_point_cloud(
                self, 256, np.random.default_rng(_stable_hash(self.id))
            )
        self.surface_points = np.asarray(self.surface_points, dtype=np.float64)

    @property
    def n_joints(self):
        return self.contact_map.shape[0]


def _stable_hash(s):
    h = 2166136261
    for ch in s.encode():
        h = ((h ^ ch) * 16777619) & 0xFFFFFFFF
    return h


def object_point_cloud(spec, n, rng):
    """Sample n points area-uniformly over the object surface.

    The surface is the 12-triangle box of the spec's half extents, shrunk
    radially by a smooth dimple field whose amplitude is the deviation of the
    shape factor from 1 (a spec with shape_factor == 1 samples the exact box,
    so points always stay inside the bounding box).
    """
    half = np.asarray(spec.half_extents, dtype=np.float64)
    if np.any(half <= 0.0):
        raise ValueError("degenerate object extents")
    if n < 1:
        raise ValueError("n must be >= 1")
    verts = _box_vertices(half)
    tri = verts[_BOX_TRIS]
    cross = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    areas = 0.5 * np.linalg.norm(cross, axis=1)
    idx = rng.choice(len(_BOX_TRIS), size=n, p=areas / areas.sum())
    r1 = rng.random(n)
    r2 = rng.random(n)
    flip = r1 + r2 > 1.0
    r1 = np.where(flip, 1.0 - r1, r1)
    r2 = np.where(flip, 1.0 - r2, r2)
    v0, v1, v2 = tri[idx, 0], tri[idx, 1], tri[idx, 2]
    pts = v0 + r1[:, None] * (v1 - v0) + r2[:, None] * (v2 - v0)

    amp = float(np.mean(np.abs(spec.shape_factor - 1.0)))
    if amp > 0.0:
        k = 40.0 * (spec.shape_factor - 1.0)
        w = 0.5 * (1.0 + np.sin(pts @ k / max(spec.l_max, 1e-9)))
        pts = pts * (1.0 - amp * w)[:, None]
    return pts


def _make_spec(family, set_seed, split, base_idx, variant_idx, n_joints, g_base, u_base):
    base_rng = np.random.default_rng(
        np.random.SeedSequence(set_seed, spawn_key=(split, base_idx))
    )
    max_aspect = EGAD_MAX_ASPECT if family == "EgadLike" else YCB_MAX_ASPECT
    aspect = base_rng.uniform(1.2, max_aspect)
    # axis scales with max/min ratio exactly `aspect`, random axis order
    logs = np.array([0.0, base_rng.uniform(0.0, 1.0), 1.0]) * np.log(aspect)
    base_rng.shuffle(logs)
    unit = np.exp(logs)
    unit = unit / unit.max()
    shape_factor = base_rng.uniform(0.8, 1.2, 3)

    rng = np.random.default_rng(
        np.random.SeedSequence(set_seed, spawn_key=(split, base_idx, variant_idx))
    )
    lo, hi = EGAD_LMAX_RANGE if family == "EgadLike" else YCB_LMAX_RANGE
    l_max = rng.uniform(lo, hi)
    half = unit * (l_max / 2.0)
    mass = rng.uniform(*MASS_RANGE)
    ext = 2.0 * half
    inertia = (
        mass
        / 12.0
        * np.array(
            [ext[1] ** 2 + ext[2] ** 2, ext[0] ** 2 + ext[2] ** 2, ext[0] ** 2 + ext[1] ** 2]
        )
        * shape_factor
    )

    g = g_base + CONTACT_NOISE * rng.standard_normal((n_joints, 3)) / np.sqrt(n_joints)
    g = g / np.linalg.norm(g, axis=0, keepdims=True)
    u = u_base + GRIP_NOISE * rng.standard_normal(n_joints) / np.sqrt(n_joints)
    u = u / np.linalg.norm(u)

    prefix = "h" if split == 1 else ""
    return ObjectSpec(
        id=f"{family}-{prefix}{base_idx:03d}-v{variant_idx}",
        family=family,
        half_extents=half,
        l_max=l_max,
        mass=mass,
        inertia_diag=inertia,
        contact_map=g,
        grip_vector=u,
        shape_factor=shape_factor,
    )


@dataclass(eq=False)
class ObjectSet:
    name: str
    train: list
    holdout: list
    seed: int

    def all_specs(self):
        return list(self.train) + list(self.holdout)

    def by_id(self):
        return {s.id: s for s in self.all_specs()}


def generate_object_set(family, n_base, variants_per_base, seed, n_holdout_base=None, n_joints=DEFAULT_JOINTS):
    """Generate a train/holdout object population for one family.

    Each base draws an aspect ratio and shape factor; each variant is a
    uniform rescale with resampled l_max, mass, and contact/grip directions.
    Deterministic in (family, seed, counts).
    """
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}")
    if n_base < 1 or variants_per_base < 1:
        raise ValueError("counts must be >= 1")
    if n_holdout_base is None:
        n_holdout_base = max(1, n_base // 4)
    g_base, u_base = contact_basis(n_joints)
    train = [
        _make_spec(family, seed, 0, b, v, n_joints, g_base, u_base)
        for b in range(n_base)
        for v in range(variants_per_base)
    ]
    holdout = [
        _make_spec(family, seed, 1, b, v, n_joints, g_base, u_base)
        for b in range(n_holdout_base)
        for v in range(variants_per_base)
    ]
    for s in train + holdout:
        lo, hi = EGAD_LMAX_RANGE if family == "EgadLike" else YCB_LMAX_RANGE
        assert lo <= s.l_max <= hi, s.id
        assert MASS_RANGE[0] <= s.mass <= MASS_RANGE[1], s.id
    ids = [s.id for s in train] + [s.id for s in holdout]
    assert len(set(ids)) == len(ids)
    return ObjectSet(name=f"{family}-s{seed}", train=train, holdout=holdout, seed=seed)


SCHEMA_VERSION = 1


def _spec_to_dict(s):
    return {
        "id": s.id,
        "family": s.family,
        "half_extents": s.half_extents.tolist(),
        "l_max": s.l_max,
        "mass": s.mass,
        "inertia_diag": s.inertia_diag.tolist(),
        "contact_map": s.contact_map.tolist(),
        "grip_vector": s.grip_vector.tolist(),
        "shape_factor": s.shape_factor.tolist(),
        "surface_points": s.surface_points.tolist(),
    }


def _spec_from_dict(d):
    return ObjectSpec(
        id=d["id"],
        family=d["family"],
        half_extents=np.array(d["half_extents"]),
        l_max=float(d["l_max"]),
        mass=float(d["mass"]),
        inertia_diag=np.array(d["inertia_diag"]),
        contact_map=np.array(d["contact_map"]),
        grip_vector=np.array(d["grip_vector"]),
        shape_factor=np.array(d["shape_factor"]),
        surface_points=np.array(d["surface_points"]),
    )


def object_set_to_json(obj_set, meta=None):
    doc = {
        "schema": SCHEMA_VERSION,
        "name": obj_set.name,
        "seed": obj_set.seed,
        "train": [_spec_to_dict(s) for s in obj_set.train],
        "holdout": [_spec_to_dict(s) for s in obj_set.holdout],
    }
    if meta is not None:
        doc["meta"] = meta
    return json.dumps(doc, sort_keys=True, indent=1)


def object_set_from_json(text):
    doc = json.loads(text)
    if doc.get("schema") != SCHEMA_VERSION:
        raise ValueError(f"unsupported object-set schema: {doc.get('schema')!r}")
    return ObjectSet(
        name=doc["name"],
        train=[_spec_from_dict(d) for d in doc["train"]],
        holdout=[_spec_from_dict(d) for d in doc["holdout"]],
        seed=doc["seed"],
    )


def save_object_set(obj_set, path, meta=None):
    with open(path, "w") as f:
        f.write(object_set_to_json(obj_set, meta=meta))
        f.write("\n")


def load_object_set(path):
    with open(path) as f:
        return object_set_from_json(f.read())
