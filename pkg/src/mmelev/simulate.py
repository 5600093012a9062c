"""Closed-loop simulation: render sensors along a trajectory and map them."""

from __future__ import annotations

import hashlib
import json
import time
from pathlib import Path

import numpy as np

from .config import MappingConfig, SensorConfig
from .grid import GridMap, create_map, recenter
from .io import write_map
from .pipeline import prepare_layers, update_from_cloud, update_from_image
from .plugins import run_plugins
from .scene import Scene, render_depth_cloud, render_image


def initial_map(mapping: MappingConfig, center=None) -> GridMap:
    geom = mapping.geometry if center is None else mapping.geometry.with_center(center)
    gmap = create_map(geom, mapping.layers)
    return prepare_layers(gmap, mapping.fusion)


def simulate(
    scene: Scene,
    sensors: SensorConfig,
    mapping: MappingConfig,
    steps: int,
    workers: int = 1,
    gmap: GridMap | None = None,
) -> tuple[GridMap, list[dict]]:
    """Run ``steps`` updates; returns the map and one log record per step.

    Each sensor render draws from its own generator seeded by
    ``(seed, step, sensor)``, so results do not depend on ``workers``.
    """
    if steps < 0:
        raise ValueError("steps must be >= 0")
    if gmap is None:
        start = sensors.robot_pose(0).translation[:2]
        gmap = initial_map(mapping, center=tuple(start))
    logs = []
    for k in range(steps):
        robot = sensors.robot_pose(k)
        recenter(gmap, robot.translation[:2])
        rec = {"step": k, "robot": [float(x) for x in robot.translation], "sensors": []}
        for i, sensor in enumerate(sensors.sensors):
            rng = np.random.default_rng([sensors.seed, k, i])
            cam = robot.compose(sensor.mount)
            configs = mapping.for_source(sensor.source)
            timings: dict = {}
            t0 = time.perf_counter()
            if sensor.kind == "cloud":
                cloud = render_depth_cloud(
                    scene, sensor.intrinsics, cam, sigma_z=sensor.sigma_z, channels=sensor.channels,
                    label_eps=sensor.label_eps, flip_prob=sensor.flip_prob, seed=rng,
                )
                update_from_cloud(gmap, cloud, cam, configs, mapping.sigma_z2, workers, timings)
                n_obs = len(cloud)
            else:
                image = render_image(
                    scene, sensor.intrinsics, cam, channels=sensor.channels,
                    label_eps=sensor.label_eps, flip_prob=sensor.flip_prob, seed=rng,
                )
                update_from_image(gmap, image, configs, workers, timings)
                n_obs = image.intrinsics.width * image.intrinsics.height
            rec["sensors"].append({
                "source": sensor.source, "type": sensor.kind, "observations": n_obs,
                "update_ms": (time.perf_counter() - t0) * 1e3, "stages_ms": timings,
            })
        run_plugins(gmap, mapping.plugins, update_index=k + 1)
        rec["valid_cells"] = int(gmap.valid_mask.sum())
        logs.append(rec)
    return gmap, logs


def write_run(out_dir, gmap: GridMap, logs: list[dict], manifest: dict) -> Path:
    """Write ``map.mmem``, ``steps.jsonl`` and ``manifest.json`` into ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    map_path = out / "map.mmem"
    write_map(gmap, map_path)
    with open(out / "steps.jsonl", "w") as f:
        for rec in logs:
            f.write(json.dumps(rec) + "\n")
    manifest = dict(manifest)
    manifest["map"] = map_path.name
    manifest["map_sha256"] = hashlib.sha256(map_path.read_bytes()).hexdigest()
    manifest["layers"] = gmap.layer_names
    manifest["valid_cells"] = int(gmap.valid_mask.sum())
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return map_path
