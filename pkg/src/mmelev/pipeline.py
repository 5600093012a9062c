"""Map updates from point clouds and images.

A message is applied to a working copy of the map and swapped in at the
end, so a failure part-way leaves the caller's map untouched.
"""

from __future__ import annotations

import time
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from .association import bin_points, visible_cells
from .errors import ChannelError
from .fusion import (
    DEFAULT_SIGMA_Z2,
    FusionConfig,
    check_configs,
    fuse_dirichlet,
    fuse_exponential,
    fuse_gaussian,
    fuse_height,
    fuse_latest,
)
from .grid import GridMap
from .sensors import SIMPLEX_TOL, MultiModalImage, MultiModalPointCloud, Pose, transform_points

CLASS_TAGS = ("probability", "one_hot")


@contextmanager
def _stage(timings, name):
    if timings is None:
        yield
        return
    t0 = time.perf_counter()
    yield
    timings[name] = timings.get(name, 0.0) + (time.perf_counter() - t0) * 1e3


def prepare_layers(gmap: GridMap, configs: Sequence[FusionConfig]) -> GridMap:
    """Create missing target and state layers for ``configs``."""
    check_configs(configs)
    for cfg in configs:
        for name in cfg.layers + cfg.state_layers():
            gmap.ensure_layer(name, "multimodal")
    return gmap


def init_priors(gmap: GridMap, configs: Sequence[FusionConfig]) -> None:
    """Give valid cells without state the prior of their Bayesian layers."""
    valid = gmap.valid_mask
    for cfg in configs:
        if cfg.algorithm == "dirichlet":
            alphas = [gmap[f"{l}:alpha"] for l in cfg.layers]
            fresh = valid & ~(np.sum(alphas, axis=0) > 0)
            if not fresh.any():
                continue
            a0 = np.asarray(cfg.alpha0, dtype=np.float64)
            for k, layer in enumerate(cfg.layers):
                alphas[k][fresh] = a0[k]
                gmap[layer][fresh] = a0[k] / a0.sum()
        elif cfg.algorithm == "gaussian":
            for d, layer in enumerate(cfg.layers):
                var = gmap[f"{layer}:var"]
                fresh = valid & ~(var > 0)
                var[fresh] = cfg.sigma02[d]
                gmap[layer][fresh] = cfg.mu0[d]


def _check_inputs(configs, channels: dict, tags: dict, what: str) -> None:
    for cfg in configs:
        for ch in cfg.channels:
            if ch not in channels:
                raise ChannelError(f"{what} has no channel {ch!r} (source {cfg.source!r}); available: {', '.join(channels)}")
        if cfg.algorithm == "dirichlet":
            bad = [ch for ch in cfg.channels if tags.get(ch, "raw") not in CLASS_TAGS]
            if bad:
                raise ChannelError(
                    f"dirichlet fusion needs probability or one_hot channels; {bad} are tagged "
                    f"{[tags.get(ch, 'raw') for ch in bad]}"
                )
            stack = np.stack([channels[ch] for ch in cfg.channels]).astype(np.float64)
            finite = np.all(np.isfinite(stack), axis=0)
            if np.any(stack[:, finite] < -SIMPLEX_TOL):
                raise ChannelError(f"negative class probability in source {cfg.source!r}")
            if np.any(np.abs(stack[:, finite].sum(axis=0) - 1.0) > SIMPLEX_TOL):
                raise ChannelError(f"class channels of source {cfg.source!r} do not sum to 1")


def apply_fusion(gmap: GridMap, count: np.ndarray, channel_sums: Callable[[str], np.ndarray], configs) -> None:
    """Run every config against per-cell ``count`` and ``channel_sums(name)``."""
    for cfg in configs:
        if cfg.algorithm == "latest":
            for ch, layer in zip(cfg.channels, cfg.layers):
                fuse_latest(gmap[layer], count, channel_sums(ch))
        elif cfg.algorithm == "exponential":
            for ch, layer in zip(cfg.channels, cfg.layers):
                fuse_exponential(gmap[layer], count, channel_sums(ch), cfg.weight, seen=gmap[f"{layer}:seen"])
        elif cfg.algorithm == "gaussian":
            for d, (ch, layer) in enumerate(zip(cfg.channels, cfg.layers)):
                fuse_gaussian(
                    gmap[layer], gmap[f"{layer}:var"], count, channel_sums(ch),
                    cfg.sigma_f2[d], cfg.mu0[d], cfg.sigma02[d],
                )
        else:
            theta = np.stack([gmap[l] for l in cfg.layers])
            alpha = np.stack([gmap[f"{l}:alpha"] for l in cfg.layers])
            sums = np.stack([channel_sums(ch) for ch in cfg.channels])
            fuse_dirichlet(theta, alpha, count, sums, cfg.alpha0)
            for k, l in enumerate(cfg.layers):
                gmap[l] = theta[k]
                gmap[f"{l}:alpha"] = alpha[k]


def update_from_cloud(
    gmap: GridMap,
    cloud: MultiModalPointCloud,
    pose: Pose,
    configs: Sequence[FusionConfig] = (),
    sigma_z2: float = DEFAULT_SIGMA_Z2,
    workers: int = 1,
    timings: dict | None = None,
) -> GridMap:
    """Fuse one sensor-frame cloud: transform, bin, height update, multimodal fusion."""
    _check_inputs(configs, cloud.channels, cloud.tags, "point cloud")
    work = prepare_layers(gmap.copy(), configs)
    with _stage(timings, "transform"):
        cloud_map = transform_points(cloud, pose)
    with _stage(timings, "bin"):
        acc = bin_points(work, cloud_map, channels=(), workers=workers)
    with _stage(timings, "height_update"):
        fuse_height(work["elevation"], work["variance"], work["valid"], acc.count, acc.z_sum, sigma_z2)
        init_priors(work, configs)
    with _stage(timings, "multimodal_update"):
        apply_fusion(work, acc.count, lambda ch: acc.add_channel(ch, cloud.channels[ch]), configs)
    gmap.geometry = work.geometry
    gmap.layers = work.layers
    return gmap


def update_from_image(
    gmap: GridMap,
    image: MultiModalImage,
    configs: Sequence[FusionConfig] = (),
    workers: int = 1,
    timings: dict | None = None,
) -> GridMap:
    """Fuse one image through the cell-to-pixel association.

    Each visible cell takes the value of its nearest pixel as a single
    observation. Geometry layers are not touched.
    """
    _check_inputs(configs, image.channels, image.tags, "image")
    work = prepare_layers(gmap.copy(), configs)
    init_priors(work, configs)
    with _stage(timings, "raycast"):
        corr = visible_cells(work, image.intrinsics, image.pose, workers=workers).visible()
    with _stage(timings, "multimodal_update"):
        shape = work.geometry.shape
        count = np.zeros(shape, dtype=np.int64)
        count[corr.rows, corr.cols] = 1

        def sums(ch):
            out = np.zeros(shape, dtype=np.float64)
            out[corr.rows, corr.cols] = image.channels[ch][corr.v, corr.u]
            return out

        apply_fusion(work, count, sums, configs)
    gmap.layers = work.layers
    return gmap
