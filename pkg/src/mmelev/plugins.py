"""Post-processing plugins.

A plugin is a callable ``fn(inputs, valid, geometry, **params)`` that gets
read-only input arrays (in the order of the entry's ``inputs``) and returns
one array per output layer. Register new ones with :func:`register_plugin`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, UnknownLayerError
from .grid import GridMap, MapGeometry


@dataclass
class PluginDef:
    fn: Callable
    inputs: list[str] | None
    outputs: list[str] | None


_REGISTRY: dict[str, PluginDef] = {}


def register_plugin(name: str, fn: Callable, inputs=None, outputs=None) -> None:
    """Make ``fn`` available under ``name``; ``inputs``/``outputs`` are defaults."""
    _REGISTRY[name] = PluginDef(fn, list(inputs) if inputs else None, list(outputs) if outputs else None)


def available_plugins() -> list[str]:
    return sorted(_REGISTRY)


@dataclass
class PluginSpec:
    """One configured plugin run.

    ``every`` is the trigger period in map updates; ``None`` means the
    plugin only runs on demand.
    """

    name: str
    inputs: list[str] = field(default_factory=list)
    outputs: list[str] = field(default_factory=list)
    every: int | None = None
    params: dict = field(default_factory=dict)
    plugin: str | None = None

    def __post_init__(self):
        kind = self.plugin or self.name
        if kind not in _REGISTRY:
            raise ConfigError(f"unknown plugin {kind!r}; registered: {', '.join(available_plugins())}")
        d = _REGISTRY[kind]
        self.plugin = kind
        self.inputs = list(self.inputs) or list(d.inputs or [])
        self.outputs = list(self.outputs) or list(d.outputs or [])
        if not self.inputs:
            raise ConfigError(f"plugin {self.name!r} needs input layers")
        if not self.outputs:
            raise ConfigError(f"plugin {self.name!r} needs output layers")
        if len(set(self.outputs)) != len(self.outputs):
            raise ConfigError(f"plugin {self.name!r} has duplicate outputs")
        if self.every is not None and int(self.every) < 1:
            raise ConfigError(f"plugin {self.name!r}: every must be >= 1")

    def due(self, update_index: int | None) -> bool:
        if update_index is None:
            return True
        return self.every is not None and update_index % int(self.every) == 0


def run_plugins(gmap: GridMap, specs: Sequence[PluginSpec], update_index: int | None = None) -> GridMap:
    """Run due plugins in order, writing their outputs as plugin-output layers.

    With ``update_index=None`` every entry runs (on demand); otherwise only
    those whose ``every`` divides the index.
    """
    for spec in specs:
        if not spec.due(update_index):
            continue
        arrays = []
        for name in spec.inputs:
            if name not in gmap:
                raise UnknownLayerError(
                    f"plugin {spec.name!r}: missing input layer {name!r}; available: {', '.join(gmap.layer_names)}"
                )
            view = gmap[name].view()
            view.flags.writeable = False
            arrays.append(view)
        valid = gmap.valid_mask
        valid.flags.writeable = False
        outs = _REGISTRY[spec.plugin].fn(arrays, valid, gmap.geometry, **spec.params)
        if len(outs) != len(spec.outputs):
            raise ConfigError(f"plugin {spec.name!r} returned {len(outs)} layers, expected {len(spec.outputs)}")
        for name, values in zip(spec.outputs, outs):
            if name in gmap and gmap.kind(name) != "plugin-output":
                raise ConfigError(f"plugin {spec.name!r} may not overwrite layer {name!r}")
            gmap.ensure_layer(name, "plugin-output")
            gmap[name] = values
    return gmap


def normals(inputs, valid, geometry: MapGeometry):
    """Unit surface normals from central differences.

    A normal needs the cell and both neighbours along each axis to be
    valid; elsewhere the output is the zero vector.
    """
    elevation = np.asarray(inputs[0], dtype=np.float64)
    if len(inputs) > 1:
        valid = np.asarray(inputs[1]) > 0.5
    r = geometry.resolution
    h = np.where(valid, elevation, 0.0)
    ok = np.zeros_like(valid)
    ok[1:-1, 1:-1] = (
        valid[1:-1, 1:-1] & valid[2:, 1:-1] & valid[:-2, 1:-1] & valid[1:-1, 2:] & valid[1:-1, :-2]
    )
    dzdx = np.zeros_like(h)
    dzdy = np.zeros_like(h)
    dzdx[1:-1, :] = (h[2:, :] - h[:-2, :]) / (2 * r)
    dzdy[:, 1:-1] = (h[:, 2:] - h[:, :-2]) / (2 * r)
    n = np.stack([-dzdx, -dzdy, np.ones_like(h)])
    n /= np.linalg.norm(n, axis=0, keepdims=True)
    n[:, ~ok] = 0.0
    return [n[0], n[1], n[2]]


def traversability(inputs, valid, geometry: MapGeometry, slope_max: float = 30.0, step_max: float = 0.2):
    """Score in [0, 1]: the worse of a slope term and a step-height term.

    ``slope_max`` is in degrees. The step term compares the largest
    elevation difference to any valid 8-neighbour against ``step_max``.
    Invalid cells score 0.
    """
    normal_z = np.asarray(inputs[0], dtype=np.float64)
    elevation = np.asarray(inputs[1], dtype=np.float64)
    c = np.cos(np.radians(slope_max))
    slope_score = (normal_z - c) / (1.0 - c)
    h = np.where(valid, elevation, np.nan)
    padded = np.pad(h, 1, constant_values=np.nan)
    n_rows, n_cols = h.shape
    step = np.zeros_like(h)
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr == 0 and dc == 0:
                continue
            nb = padded[1 + dr : 1 + dr + n_rows, 1 + dc : 1 + dc + n_cols]
            diff = np.abs(nb - h)
            step = np.fmax(step, np.where(np.isnan(diff), 0.0, diff))
    step_score = 1.0 - step / step_max
    score = np.clip(np.minimum(slope_score, step_score), 0.0, 1.0)
    return [np.where(valid, score, 0.0)]


def pca_features(inputs, valid, geometry: MapGeometry, n_components: int = 3):
    """Project valid cells' feature vectors on their top principal axes.

    Each component is min-max scaled to [0, 1]; components with no spread
    (constant features, rank deficiency) come out as zeros.
    """
    if len(inputs) < 3:
        raise ConfigError("pca plugin needs at least 3 feature layers")
    F = np.stack([np.asarray(a, dtype=np.float64)[valid] for a in inputs], axis=1)
    shape = valid.shape
    outs = [np.zeros(shape) for _ in range(n_components)]
    if F.shape[0] < 3:
        return outs
    X = F - F.mean(axis=0)
    cov = X.T @ X / (len(X) - 1)
    w, V = np.linalg.eigh(cov)
    order = np.argsort(w)[::-1]
    w, V = w[order], V[:, order]
    tol = max(w[0], 0.0) * 1e-9 + 1e-12
    for k in range(min(n_components, V.shape[1])):
        if w[k] <= tol:
            continue
        v = V[:, k]
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        proj = X @ v
        lo, hi = proj.min(), proj.max()
        if hi - lo <= 0:
            continue
        outs[k][valid] = (proj - lo) / (hi - lo)
    return outs


def semantic_argmax(inputs, valid, geometry: MapGeometry):
    """Most probable class per cell (ties go to the lowest index).

    Invalid cells get class -1 and confidence 0.
    """
    P = np.stack([np.asarray(a, dtype=np.float64) for a in inputs])
    cls = np.argmax(P, axis=0)
    conf = np.max(P, axis=0)
    return [np.where(valid, cls, -1), np.where(valid, conf, 0.0)]


register_plugin("normals", normals, ["elevation"], ["normal_x", "normal_y", "normal_z"])
register_plugin("traversability", traversability, ["normal_z", "elevation"], ["traversability"])
register_plugin("pca", pca_features, None, ["pca_0", "pca_1", "pca_2"])
register_plugin("semantic_argmax", semantic_argmax, None, ["class_id", "confidence"])
