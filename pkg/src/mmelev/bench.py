"""Stage timing and layer-scaling benchmark.

The default workload mirrors a 10 m x 10 m map at 4 cm (250 x 250 cells)
fed with 230 400-point clouds. Absolute numbers depend on the host; what is
checked is the per-stage breakdown and that the multi-modal update grows
linearly with the number of layers.
"""

from __future__ import annotations

import csv
import time
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .fusion import FusionConfig
from .grid import MapGeometry, create_map
from .pipeline import prepare_layers, update_from_cloud
from .plugins import PluginSpec, run_plugins
from .association import visible_cells
from .sensors import CameraIntrinsics, MultiModalPointCloud, Pose

STAGES = ("transform", "bin", "height_update", "raycast", "multimodal_update", "plugins")
MIN_ITERATIONS = 30


@dataclass
class StageTiming:
    stage: str
    mean_ms: float
    std_ms: float
    iters: int

    def __post_init__(self):
        if self.iters < 1 or self.std_ms < 0:
            raise ValueError("iters must be >= 1 and std_ms >= 0")

    @classmethod
    def from_samples(cls, stage: str, samples_ms) -> "StageTiming":
        s = np.asarray(samples_ms, dtype=np.float64)
        return cls(stage, float(s.mean()), float(s.std()), len(s))


@dataclass
class LinearFit:
    slope: float
    intercept: float
    r2: float


@dataclass
class BenchResult:
    stages: list[StageTiming]
    scaling: list[tuple[int, StageTiming]] = field(default_factory=list)
    fit: LinearFit | None = None
    total: StageTiming | None = None

    def report(self) -> dict:
        return {
            "stages": [asdict(s) for s in self.stages],
            "total_update": asdict(self.total) if self.total else None,
            "scaling": [{"n_layers": n, **asdict(t)} for n, t in self.scaling],
            "fit": asdict(self.fit) if self.fit else None,
        }


def linear_fit(x, y) -> LinearFit:
    """Least-squares line with coefficient of determination."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    A = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return LinearFit(float(slope), float(intercept), r2)


def make_workload(map_cells=250, resolution=0.04, n_points=230_400, n_channels=8, seed=0):
    """Map geometry, sensor-frame cloud, its pose and a camera for the raycast stage."""
    rng = np.random.default_rng(seed)
    geom = MapGeometry(resolution, map_cells, map_cells)
    half = map_cells * resolution / 2.0
    xy = rng.uniform(-half, half, size=(n_points, 2))
    z = 0.1 * np.sin(xy[:, 0] * 1.3) * np.cos(xy[:, 1] * 0.7) + rng.normal(scale=0.01, size=n_points)
    p_map = np.column_stack([xy, z])
    pose = Pose.from_rpy(0.02, -0.03, 0.4, (0.0, 0.0, 1.0))
    p_sensor = pose.inverse().apply(p_map)
    channels = {f"ch_{j}": rng.random(n_points).astype(np.float32) for j in range(n_channels)}
    cloud = MultiModalPointCloud(p_sensor, channels)
    intr = CameraIntrinsics.from_fov(640, 360, 90.0)
    cam = Pose.look_at((-half * 0.8, 0.0, 1.0), (half * 0.5, 0.0, 0.0))
    return geom, cloud, pose, intr, cam


def _configs(n_layers: int, algorithm: str) -> list[FusionConfig]:
    ch = [f"ch_{j}" for j in range(n_layers)]
    return [FusionConfig("bench", algorithm, ch, ch)]


def time_stages(
    map_cells=250, n_points=230_400, n_layers=8, iterations=MIN_ITERATIONS,
    workers=1, algorithm="exponential", seed=0,
) -> tuple[list[StageTiming], StageTiming]:
    """Per-stage timings of a full cloud update plus raycast and plugins."""
    if iterations < MIN_ITERATIONS:
        raise ValueError(f"iterations must be >= {MIN_ITERATIONS}")
    geom, cloud, pose, intr, cam = make_workload(map_cells, n_points=n_points, n_channels=n_layers, seed=seed)
    configs = _configs(n_layers, algorithm)
    gmap = prepare_layers(create_map(geom), configs)
    plugins = [PluginSpec("normals"), PluginSpec("traversability")]
    samples = {s: [] for s in STAGES}
    totals = []
    for it in range(iterations + 1):
        t: dict = {}
        t0 = time.perf_counter()
        update_from_cloud(gmap, cloud, pose, configs, workers=workers, timings=t)
        total = (time.perf_counter() - t0) * 1e3
        t1 = time.perf_counter()
        visible_cells(gmap, intr, cam, workers=workers)
        t["raycast"] = (time.perf_counter() - t1) * 1e3
        t1 = time.perf_counter()
        run_plugins(gmap, plugins)
        t["plugins"] = (time.perf_counter() - t1) * 1e3
        if it == 0:
            continue  # warm-up: JIT compilation and first-touch allocation
        totals.append(total)
        for s in STAGES:
            samples[s].append(t.get(s, 0.0))
    stages = [StageTiming.from_samples(s, samples[s]) for s in STAGES]
    return stages, StageTiming.from_samples("total", totals)


def time_layer_scaling(
    layer_counts: Sequence[int] = (1, 2, 4, 8, 16, 20), map_cells=250, n_points=230_400,
    iterations=MIN_ITERATIONS, workers=1, algorithm="exponential", seed=0,
) -> tuple[list[tuple[int, StageTiming]], LinearFit]:
    """Multi-modal update time against layer count, with a least-squares line."""
    if iterations < MIN_ITERATIONS:
        raise ValueError(f"iterations must be >= {MIN_ITERATIONS}")
    n_max = max(layer_counts)
    geom, cloud, pose, _, _ = make_workload(map_cells, n_points=n_points, n_channels=n_max, seed=seed)
    samples = {n: [] for n in layer_counts}
    maps = {}
    for n in layer_counts:
        configs = _configs(n, algorithm)
        maps[n] = (prepare_layers(create_map(geom), configs), configs)
        update_from_cloud(maps[n][0], cloud, pose, configs, workers=workers)  # warm-up
    # interleave layer counts so slow drifts of the host hit all of them alike
    for _ in range(iterations):
        for n in layer_counts:
            gmap, configs = maps[n]
            t: dict = {}
            update_from_cloud(gmap, cloud, pose, configs, workers=workers, timings=t)
            samples[n].append(t["multimodal_update"])
    scaling = [(n, StageTiming.from_samples("multimodal_update", samples[n])) for n in layer_counts]
    fit = linear_fit([n for n, _ in scaling], [s.mean_ms for _, s in scaling])
    return scaling, fit


def run_bench(
    map_cells=250, n_points=230_400, layer_counts: Sequence[int] = (1, 2, 4, 8, 16, 20),
    stage_layers=8, iterations=MIN_ITERATIONS, workers=1, algorithm="exponential", seed=0,
) -> BenchResult:
    stages, total = time_stages(map_cells, n_points, stage_layers, iterations, workers, algorithm, seed)
    scaling, fit = ([], None)
    if layer_counts:
        scaling, fit = time_layer_scaling(layer_counts, map_cells, n_points, iterations, workers, algorithm, seed)
    return BenchResult(stages, scaling, fit, total)


def write_stage_csv(stages: Sequence[StageTiming], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["stage", "mean_ms", "std_ms", "iters"])
        for s in stages:
            w.writerow([s.stage, f"{s.mean_ms:.6f}", f"{s.std_ms:.6f}", s.iters])


def write_scaling_csv(scaling, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["n_layers", "mean_ms", "std_ms", "iters"])
        for n, s in scaling:
            w.writerow([n, f"{s.mean_ms:.6f}", f"{s.std_ms:.6f}", s.iters])
