import numpy as np
import pytest

from mmelev import pipeline
from mmelev.errors import ChannelError
from mmelev.fusion import FusionConfig
from mmelev.grid import MapGeometry, cell_centers, create_map
from mmelev.pipeline import prepare_layers, update_from_cloud, update_from_image
from mmelev.sensors import CameraIntrinsics, MultiModalImage, MultiModalPointCloud, Pose

# camera looking straight down: image x -> world +y, image y -> world +x
NADIR = np.array([[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, -1.0]])


def flat_valid_map(n=60, res=0.05, z=0.0):
    gmap = create_map(MapGeometry(res, n, n))
    gmap["elevation"] = z
    gmap["variance"] = 0.01
    gmap["valid"] = 1.0
    return gmap


def grid_cloud(geom, z, rng=None, noise=0.0, **channels):
    xs, ys = cell_centers(geom)
    pts = np.column_stack([xs.ravel(), ys.ravel(), np.full(xs.size, z)])
    if noise:
        pts[:, 2] += rng.normal(scale=noise, size=len(pts))
    return MultiModalPointCloud(pts, channels)


def test_empty_cloud_leaves_map_unchanged():
    cfg = [FusionConfig("lidar", "exponential", ["a"], ["a"])]
    gmap = prepare_layers(flat_valid_map(), cfg)
    before = gmap.copy()
    update_from_cloud(gmap, MultiModalPointCloud(np.zeros((0, 3)), {"a": np.zeros(0)}), Pose(), cfg)
    assert gmap.equals(before)


def test_flat_ground_within_three_sigma():
    rng = np.random.default_rng(0)
    gmap = create_map(MapGeometry(0.05, 40, 40))
    sigma_z = 0.05
    update_from_cloud(gmap, grid_cloud(gmap.geometry, 0.2, rng, sigma_z), Pose(), sigma_z2=sigma_z**2)
    assert gmap.valid_mask.all()
    err = np.abs(gmap["elevation"] - 0.2)
    # one Gaussian draw per cell: 99.7 % fall inside 3 sigma
    assert np.mean(err <= 3 * sigma_z) >= 0.99
    assert err.max() <= 5 * sigma_z
    np.testing.assert_allclose(gmap["variance"], sigma_z**2, rtol=1e-6)


def test_latest_idempotent():
    rng = np.random.default_rng(1)
    cfg = [FusionConfig("lidar", "latest", ["a"], ["a"])]
    gmap = create_map(MapGeometry(0.05, 30, 30))
    cloud = grid_cloud(gmap.geometry, 0.0, a=rng.random(900))
    update_from_cloud(gmap, cloud, Pose(), cfg)
    first = gmap["a"].copy()
    update_from_cloud(gmap, cloud, Pose(), cfg)
    np.testing.assert_array_equal(gmap["a"], first)


def test_cloud_pose_is_applied():
    gmap = create_map(MapGeometry(0.1, 20, 20))
    cloud = MultiModalPointCloud(np.array([[0.0, 0.0, -1.0]]), {})
    update_from_cloud(gmap, cloud, Pose.from_rpy(yaw=np.pi / 2, translation=(0.5, 0.0, 1.2)))
    r, c = np.argwhere(gmap.valid_mask)[0]
    assert (r, c) == (15, 10)
    assert abs(gmap["elevation"][r, c] - 0.2) < 1e-6


def test_dirichlet_rejects_feature_channels():
    cloud = MultiModalPointCloud(np.zeros((2, 3)), {"f0": [0.1, 0.2], "f1": [0.9, 0.8]}, {"f0": "feature", "f1": "feature"})
    gmap = create_map(MapGeometry(0.1, 5, 5))
    before = gmap.copy()
    with pytest.raises(ChannelError, match="feature"):
        update_from_cloud(gmap, cloud, Pose(), [FusionConfig("cam", "dirichlet", ["f0", "f1"], [])])
    assert gmap.equals(before)


def test_missing_channel_names_it():
    gmap = create_map(MapGeometry(0.1, 5, 5))
    with pytest.raises(ChannelError, match="'nope'"):
        update_from_cloud(gmap, MultiModalPointCloud(np.zeros((1, 3)), {"a": [0.0]}), Pose(),
                          [FusionConfig("cam", "latest", ["nope"], [])])


def test_update_is_atomic(monkeypatch):
    gmap = create_map(MapGeometry(0.1, 10, 10))
    before = gmap.copy()
    real = pipeline.apply_fusion

    def explode(work, *a, **k):
        real(work, *a, **k)
        raise RuntimeError("late failure")

    monkeypatch.setattr(pipeline, "apply_fusion", explode)
    cloud = grid_cloud(gmap.geometry, 0.3, a=np.ones(100))
    with pytest.raises(RuntimeError):
        update_from_cloud(gmap, cloud, Pose(), [FusionConfig("s", "latest", ["a"], [])])
    assert gmap.equals(before)


def test_dirichlet_simplex_on_every_valid_cell():
    rng = np.random.default_rng(2)
    gmap = create_map(MapGeometry(0.1, 20, 20))
    cfg = [FusionConfig("cam", "dirichlet", ["p0", "p1", "p2"], ["c0", "c1", "c2"], alpha0=[1, 2, 3])]
    for _ in range(3):
        n = 150
        pts = np.column_stack([rng.uniform(-1, 1, (n, 2)), np.zeros(n)])
        p = rng.dirichlet(np.ones(3), n)
        cloud = MultiModalPointCloud(pts, {f"p{k}": p[:, k] for k in range(3)}, {f"p{k}": "probability" for k in range(3)})
        prev_alpha = np.stack([gmap[f"c{k}:alpha"] for k in range(3)]) if "c0:alpha" in gmap else None
        update_from_cloud(gmap, cloud, Pose(), cfg)
        valid = gmap.valid_mask
        theta = np.stack([gmap[f"c{k}"] for k in range(3)])
        assert np.all(np.abs(theta[:, valid].sum(axis=0) - 1) <= 1e-6)
        alpha = np.stack([gmap[f"c{k}:alpha"] for k in range(3)])
        if prev_alpha is not None:
            assert np.all(alpha >= prev_alpha)


def test_gaussian_message_order_independent():
    rng = np.random.default_rng(3)
    geom = MapGeometry(0.1, 10, 10)
    cfg = [FusionConfig("s", "gaussian", ["f"], [], sigma_f2=0.3, mu0=1.0, sigma02=2.0)]
    msgs = []
    for _ in range(5):
        pts = np.column_stack([rng.uniform(-0.5, 0.5, (80, 2)), np.zeros(80)])
        msgs.append(MultiModalPointCloud(pts, {"f": rng.normal(size=80)}))
    results = []
    for order in (range(5), [3, 0, 4, 1, 2]):
        gmap = create_map(geom)
        for i in order:
            update_from_cloud(gmap, msgs[i], Pose(), cfg)
        results.append((gmap["f"].astype(np.float64), gmap["f:var"].astype(np.float64)))
    np.testing.assert_allclose(results[0][0], results[1][0], rtol=0, atol=1e-6)
    np.testing.assert_allclose(results[0][1], results[1][1], rtol=0, atol=1e-7)


def test_worker_invariance_cloud():
    rng = np.random.default_rng(4)
    geom = MapGeometry(0.05, 50, 50)
    cfg = [FusionConfig("s", "gaussian", ["a", "b"], [], sigma_f2=0.5),
           FusionConfig("s", "exponential", ["c"], [], weight=0.3)]
    pts = np.column_stack([rng.uniform(-1.3, 1.3, (20000, 2)), rng.normal(scale=0.1, size=20000)])
    cloud = MultiModalPointCloud(pts, {k: rng.normal(size=20000) for k in "abc"})
    maps = []
    for w in (1, 8):
        gmap = create_map(geom)
        for _ in range(2):
            update_from_cloud(gmap, cloud, Pose(), cfg, workers=w)
        maps.append(gmap)
    for name in maps[0].layer_names:
        a, b = maps[0][name], maps[1][name]
        np.testing.assert_allclose(a, b, rtol=1e-6, atol=1e-12)


def test_timings_cover_stages():
    t = {}
    gmap = create_map(MapGeometry(0.1, 10, 10))
    update_from_cloud(gmap, grid_cloud(gmap.geometry, 0.0, a=np.ones(100)), Pose(),
                      [FusionConfig("s", "latest", ["a"], [])], timings=t)
    assert set(t) == {"transform", "bin", "height_update", "multimodal_update"}


# --- images -----------------------------------------------------------------

def nadir_image(channels, intr, height=3.0, tags=None, groups=None):
    return MultiModalImage(channels, intr, Pose(NADIR, (0.0, 0.0, height)), tags or {}, groups or {})


def test_uniform_image_value():
    gmap = flat_valid_map()
    intr = CameraIntrinsics.from_fov(80, 60, 60.0)
    cfg = [FusionConfig("cam", "latest", ["g"], [])]
    before = gmap.copy()
    update_from_image(gmap, nadir_image({"g": np.full((60, 80), 0.25)}, intr), cfg)
    hit = gmap["g"] == 0.25
    assert 0 < hit.sum() < gmap.geometry.n_cells
    np.testing.assert_array_equal(gmap["elevation"], before["elevation"])
    np.testing.assert_array_equal(gmap["valid"], before["valid"])


def test_checkerboard_matches_projection():
    res, square, h = 0.05, 0.5, 3.0
    gmap = flat_valid_map(60, res)
    intr = CameraIntrinsics.from_fov(240, 240, 80.0)
    u, v = np.meshgrid(np.arange(240), np.arange(240))
    # analytic ground point of each pixel under the nadir pose
    gx = h * (v - intr.cy) / intr.fy
    gy = h * (u - intr.cx) / intr.fx
    black = ((np.floor(gx / square) + np.floor(gy / square)) % 2).astype(np.float64)
    img = nadir_image({"w": 1 - black, "b": black}, intr, h, {"w": "one_hot", "b": "one_hot"}, {"cls": ["w", "b"]})
    cfg = [FusionConfig("cam", "dirichlet", ["w", "b"], ["cls_w", "cls_b"])]
    update_from_image(gmap, img, cfg)
    xs, ys = cell_centers(gmap.geometry)
    expected = (np.floor(xs / square) + np.floor(ys / square)) % 2
    got = (gmap["cls_b"] > gmap["cls_w"]).astype(int)
    seen = gmap["cls_w:alpha"] + gmap["cls_b:alpha"] > 2.0
    margin = res / 2 + h / intr.fx
    dist = np.minimum(np.abs(xs - square * np.round(xs / square)), np.abs(ys - square * np.round(ys / square)))
    away = seen & (dist > margin)
    assert away.sum() > 1000
    assert np.mean(got[away] == expected[away]) >= 0.99


def test_camera_facing_away():
    gmap = flat_valid_map()
    cfg = [FusionConfig("cam", "latest", ["g"], [])]
    prepare_layers(gmap, cfg)
    before = gmap.copy()
    intr = CameraIntrinsics.from_fov(40, 30, 60.0)
    pose = Pose.look_at((0.0, 0.0, 1.0), (0.0, 0.0, 5.0), up=(1.0, 0.0, 0.0))
    update_from_image(gmap, MultiModalImage({"g": np.ones((30, 40))}, intr, pose), cfg)
    assert gmap.equals(before)


def test_image_worker_invariance():
    rng = np.random.default_rng(5)
    gmap = flat_valid_map(80, 0.05)
    gmap["elevation"] = rng.normal(scale=0.05, size=gmap.geometry.shape)
    intr = CameraIntrinsics.from_fov(64, 48, 90.0)
    img = MultiModalImage({"g": rng.random((48, 64))}, intr, Pose.look_at((-2.0, 0.0, 1.0), (1.0, 0.0, 0.0)))
    cfg = [FusionConfig("cam", "exponential", ["g"], [], weight=0.4)]
    a, b = gmap.copy(), gmap.copy()
    update_from_image(a, img, cfg, workers=1)
    update_from_image(b, img, cfg, workers=8)
    assert a.equals(b)
