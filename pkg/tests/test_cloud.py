"""Point-cloud ops against brute-force and set-count oracles."""

import numpy as np
import pytest

from reorient import cloud as pc
from reorient import rotation as rt
from reorient.objects import generate_object_set


def oracle_chamfer(a, b):
    d2 = ((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2)
    return d2.min(axis=1).sum() + d2.min(axis=0).sum()


def rand_cloud(rng, n, scale=1.0, colors=False):
    pts = rng.uniform(-scale, scale, (n, 3))
    cols = rng.random((n, 3)) if colors else None
    return pc.PointCloud(pts, cols)


def test_chamfer_identical_zero():
    c = rand_cloud(np.random.default_rng(0), 50)
    assert pc.chamfer(c, c) == 0.0


def test_chamfer_singletons():
    a = pc.PointCloud(np.array([[0.0, 0.0, 0.0]]))
    b = pc.PointCloud(np.array([[0.0, 3.0, 4.0]]))
    assert pc.chamfer(a, b) == pytest.approx(2 * 25.0, abs=1e-12)


def test_chamfer_empty_rejected():
    c = rand_cloud(np.random.default_rng(0), 3)
    with pytest.raises(ValueError):
        pc.chamfer(c, pc.PointCloud(np.zeros((0, 3))))


def test_chamfer_matches_oracle_small():
    rng = np.random.default_rng(42)
    for _ in range(200):
        a = rng.normal(size=(7, 3))
        b = rng.normal(size=(5, 3))
        got = pc.chamfer(pc.PointCloud(a), pc.PointCloud(b))
        assert got == pytest.approx(oracle_chamfer(a, b), abs=1e-12)


def test_chamfer_grid_path_matches_oracle():
    rng = np.random.default_rng(7)
    for n, m in [(200, 150), (1000, 800), (5000, 400)]:
        a = rng.uniform(-0.05, 0.05, (n, 3))
        b = rng.uniform(-0.05, 0.05, (m, 3))
        got = pc.chamfer(pc.PointCloud(a), pc.PointCloud(b))
        assert got == pytest.approx(oracle_chamfer(a, b), rel=1e-12)


def test_chamfer_symmetric_and_permutation_invariant():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(130, 3))
    b = rng.normal(size=(90, 3))
    ca, cb = pc.PointCloud(a), pc.PointCloud(b)
    assert pc.chamfer(ca, cb) == pc.chamfer(cb, ca)
    perm = rng.permutation(130)
    assert pc.chamfer(pc.PointCloud(a[perm]), cb) == pc.chamfer(ca, cb)


def test_scale_to_unit_sphere():
    single = pc.scale_to_unit_sphere(pc.PointCloud(np.array([[3.0, -2.0, 1.0]])))
    np.testing.assert_array_equal(single.points, np.zeros((1, 3)))

    rng = np.random.default_rng(1)
    dirs = rng.normal(size=(500, 3))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    sphere = pc.PointCloud(5.0 * dirs + np.array([1.0, 2.0, 3.0]))
    out = pc.scale_to_unit_sphere(sphere)
    norms = np.linalg.norm(out.points, axis=1)
    assert norms.max() == pytest.approx(1.0, abs=1e-12)
    assert np.abs(out.points.mean(axis=0)).max() < 1e-9


def test_scaled_chamfer_translation_invariant():
    rng = np.random.default_rng(2)
    p = rng.normal(size=(80, 3))
    q = rng.normal(size=(70, 3))
    base = pc.chamfer(pc.scale_to_unit_sphere(pc.PointCloud(p)), pc.scale_to_unit_sphere(pc.PointCloud(q)))
    for _ in range(5):
        t = rng.uniform(-10, 10, 3)
        moved = pc.chamfer(
            pc.scale_to_unit_sphere(pc.PointCloud(p + t)),
            pc.scale_to_unit_sphere(pc.PointCloud(q + t)),
        )
        assert moved == pytest.approx(base, abs=1e-9)


def test_voxelize_merges_and_preserves():
    two = pc.PointCloud(np.array([[0.0005, 0.0, 0.0], [0.0015, 0.0, 0.0]]))
    assert len(pc.voxelize(two, 0.003)) == 1

    xs = np.arange(10) * 0.01
    grid = np.stack([xs, np.zeros(10), np.zeros(10)], axis=1)
    assert len(pc.voxelize(pc.PointCloud(grid), 0.003)) == 10


def test_voxelize_count_matches_set_oracle():
    rng = np.random.default_rng(11)
    pts = rng.uniform(0.0, 0.05, (10_000, 3))
    out = pc.voxelize(pc.PointCloud(pts), 0.003)
    keys = {tuple(k) for k in np.floor(pts / 0.003).astype(np.int64)}
    assert len(out) == len(keys)


def test_voxelize_idempotent_key_set():
    rng = np.random.default_rng(13)
    pts = rng.uniform(-0.02, 0.02, (2000, 3))
    v1 = pc.voxelize(pc.PointCloud(pts), 0.003)
    v2 = pc.voxelize(v1, 0.003)
    k1 = {tuple(k) for k in np.floor(v1.points / 0.003).astype(np.int64)}
    k2 = {tuple(k) for k in np.floor(v2.points / 0.003).astype(np.int64)}
    assert k1 == k2


def test_voxelize_averages_colors():
    cloud = pc.PointCloud(
        np.array([[0.0005, 0.0, 0.0], [0.0015, 0.0, 0.0]]),
        np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]),
    )
    out = pc.voxelize(cloud, 0.003)
    np.testing.assert_allclose(out.colors, [[0.5, 0.5, 0.0]], atol=1e-15)
    np.testing.assert_allclose(out.points, [[0.001, 0.0, 0.0]], atol=1e-15)


@pytest.fixture(scope="module")
def spec():
    return generate_object_set("EgadLike", 1, 1, seed=5).train[0]


def test_goal_cloud_identity_and_rotation(spec):
    ident = pc.make_goal_cloud(spec, rt.IDENTITY_QUAT, n=200, rng=np.random.default_rng(8))
    from reorient.objects import object_point_cloud

    raw = object_point_cloud(spec, 200, np.random.default_rng(8))
    np.testing.assert_allclose(ident.points, raw, atol=1e-12)

    qz = np.array([0.0, 0.0, 0.0, 1.0])  # 180 deg about z
    rot = pc.make_goal_cloud(spec, qz, n=200, rng=np.random.default_rng(8))
    np.testing.assert_allclose(rot.points[:, 0], -raw[:, 0], atol=1e-12)
    np.testing.assert_allclose(rot.points[:, 1], -raw[:, 1], atol=1e-12)
    np.testing.assert_allclose(rot.points[:, 2], raw[:, 2], atol=1e-12)

    off = pc.make_goal_cloud(spec, rt.IDENTITY_QUAT, n=50, offset=(1, 2, 3), rng=np.random.default_rng(8))
    raw50 = object_point_cloud(spec, 50, np.random.default_rng(8))
    np.testing.assert_allclose(off.points, raw50 + np.array([1.0, 2.0, 3.0]), atol=1e-12)


def test_goal_cloud_self_consistency(spec):
    rng = np.random.default_rng(77)
    g = rt.sample_uniform_so3(rng)
    goal = pc.make_goal_cloud(spec, g, n=500, rng=np.random.default_rng(123))
    from reorient.objects import object_point_cloud

    obs = rt.quat_rotate(g, object_point_cloud(spec, 500, np.random.default_rng(123)))
    d = pc.chamfer(pc.scale_to_unit_sphere(goal), pc.scale_to_unit_sphere(pc.PointCloud(obs)))
    assert d <= 1e-6


def test_vision_success_cases():
    assert pc.vision_success(0.0, 1.0) is True
    assert pc.vision_success(3.0, 0.005) is True
    assert pc.vision_success(0.25, 0.02) is False
    with pytest.raises(ValueError):
        pc.vision_success(-0.1, 0.0)


def find_seed(pred, limit=2000):
    cloud = rand_cloud(np.random.default_rng(0), 100, colors=True)
    for s in range(limit):
        _, applied = pc.augment_verbose(cloud, np.random.default_rng(s))
        if pred(applied):
            return s
    raise AssertionError("no seed found")


def test_augment_identity_path():
    cloud = rand_cloud(np.random.default_rng(1), 100, colors=True)
    s = find_seed(lambda a: not any(a.values()))
    out, applied = pc.augment_verbose(cloud, np.random.default_rng(s))
    assert not any(applied.values())
    np.testing.assert_array_equal(out.points, cloud.points)
    np.testing.assert_array_equal(out.colors, cloud.colors)


def test_augment_jitter_truncation_and_fraction():
    cloud = rand_cloud(np.random.default_rng(2), 1000, colors=True)
    s = find_seed(lambda a: a["jitter"] and not a["trans"] and not a["dropout"])
    out, applied = pc.augment_verbose(cloud, np.random.default_rng(s))
    delta = out.points - cloud.points
    moved = np.any(delta != 0.0, axis=1)
    assert moved.sum() == 100  # 10% of points
    assert np.max(np.abs(delta)) <= 0.015 + 1e-12


def test_augment_dropout_exact_count():
    class ScriptedRng:
        """Stands in for a Generator; gate order is part of augment's contract."""

        def __init__(self):
            self.gates = iter([0.9, 0.9, 0.1, 0.9])  # only dropout fires
            self.real = np.random.default_rng(0)

        def random(self):
            return next(self.gates)

        def uniform(self, lo, hi, size=None):
            assert (lo, hi) == (0.0, 0.4)
            return 0.4

        def choice(self, n, size, replace):
            return self.real.choice(n, size=size, replace=replace)

    cloud = rand_cloud(np.random.default_rng(3), 1000)
    out = pc.augment(cloud, ScriptedRng())
    assert len(out) == 600


def test_augment_gate_statistics():
    cloud = rand_cloud(np.random.default_rng(4), 20, colors=True)
    rng = np.random.default_rng(999)
    counts = {"trans": 0, "jitter": 0, "dropout": 0, "color": 0}
    n = 10_000
    for _ in range(n):
        _, applied = pc.augment_verbose(cloud, rng)
        for k, v in applied.items():
            counts[k] += v
    for k, v in counts.items():
        assert abs(v / n - 0.4) <= 0.015, k


def test_augment_keeps_at_least_one_point():
    cloud = rand_cloud(np.random.default_rng(5), 2)
    for s in range(200):
        out = pc.augment(cloud, np.random.default_rng(s))
        assert len(out) >= 1


def test_ply_round_trip_text(tmp_path):
    cloud = rand_cloud(np.random.default_rng(6), 5, colors=True)
    path = tmp_path / "c.ply"
    pc.write_ply(cloud, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "ply"
    assert f"element vertex 5" in lines
    assert lines[-1].count(" ") == 5  # xyz + rgb
    body = [l for l in lines[lines.index("end_header") + 1 :]]
    assert len(body) == 5
    first = body[0].split()
    np.testing.assert_allclose([float(v) for v in first[:3]], cloud.points[0], atol=1e-6)
