"""YAML configuration for mapping runs and simulated sensors.

Mapping config::

    map:
      resolution: 0.04        # meters per cell
      width: 250              # cells along y
      height: 250             # cells along x
      center: [0.0, 0.0]
      sigma_z2: 0.01          # height measurement variance per point
    sources:
      - name: front
        fusion:
          - algorithm: dirichlet          # latest | exponential | gaussian | dirichlet
            channels: [class_grass, class_person]
            layers: [grass, person]       # defaults to the channel names
            alpha0: 1.0
          - algorithm: exponential
            channels: [r, g, b]
            weight: 0.3
    plugins:
      - name: normals
        every: 1                          # omit for on-demand only
      - name: classes
        plugin: semantic_argmax
        inputs: [grass, person]
        every: 1

Gaussian fusion takes ``sigma_f2``, ``mu0`` and ``sigma02`` (scalar or one per
channel); plugin parameters go under ``params``.

Sensor config (simulation only)::

    seed: 0
    trajectory:
      start: [0.0, 0.0, 0.0]              # x, y, yaw (deg)
      step: [0.1, 0.0, 0.0]               # added per step
    sensors:
      - source: front                     # must match a mapping source
        type: cloud                       # cloud | image
        intrinsics: {width: 160, height: 90, hfov: 90}
        mount: {position: [0.0, 0.0, 1.0], pitch: 30, yaw: 0}
        sigma_z: 0.01
        label_eps: 0.1
        flip_prob: 0.0
        channels: [rgb, class]
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .errors import ConfigError, ParseError
from .fusion import DEFAULT_SIGMA_Z2, FusionConfig, check_configs
from .grid import MapGeometry
from .plugins import PluginSpec
from .sensors import CameraIntrinsics, Pose

LINE = "__line__"


class _LineLoader(yaml.SafeLoader):
    pass


def _construct_mapping(loader, node, deep=False):
    mapping = loader.construct_mapping(node, deep=deep)
    mapping[LINE] = node.start_mark.line + 1
    return mapping


_LineLoader.add_constructor(yaml.resolver.BaseResolver.DEFAULT_MAPPING_TAG, _construct_mapping)


def _load_yaml(text: str, source):
    try:
        data = yaml.load(text, Loader=_LineLoader)
    except yaml.MarkedYAMLError as e:
        mark = e.problem_mark
        raise ParseError(str(e.problem), mark.line + 1 if mark else None, source) from None
    if data is None:
        data = {LINE: 1}
    if not isinstance(data, dict):
        raise ParseError("top level must be a mapping", 1, source)
    return data


def _strip(obj):
    if isinstance(obj, dict):
        return {k: _strip(v) for k, v in obj.items() if k != LINE}
    if isinstance(obj, list):
        return [_strip(v) for v in obj]
    return obj


def _take(d: dict, key, default=None, required=False, source=None):
    if key in d:
        return d.pop(key)
    if required:
        raise ParseError(f"missing key {key!r}", d.get(LINE), source)
    return default


def _no_extra(d: dict, what, source):
    line = d.pop(LINE, None)
    if d:
        raise ParseError(f"unknown keys in {what}: {sorted(d)}", line, source)


@dataclass
class MappingConfig:
    geometry: MapGeometry
    sigma_z2: float = DEFAULT_SIGMA_Z2
    layers: list[str] = field(default_factory=list)
    fusion: list[FusionConfig] = field(default_factory=list)
    plugins: list[PluginSpec] = field(default_factory=list)

    def for_source(self, name: str) -> list[FusionConfig]:
        return [c for c in self.fusion if c.source == name]

    @property
    def sources(self) -> list[str]:
        return list(dict.fromkeys(c.source for c in self.fusion))


def parse_mapping_config(text: str, source=None) -> MappingConfig:
    data = _load_yaml(text, source)
    m = dict(_take(data, "map", required=True, source=source))
    line = m.get(LINE)
    try:
        geom = MapGeometry(
            float(_take(m, "resolution", required=True, source=source)),
            int(_take(m, "width", required=True, source=source)),
            int(_take(m, "height", required=True, source=source)),
            tuple(_take(m, "center", [0.0, 0.0])),
        )
        sigma_z2 = float(_take(m, "sigma_z2", DEFAULT_SIGMA_Z2))
    except (TypeError, ValueError) as e:
        if isinstance(e, ParseError):
            raise
        raise ParseError(f"map: {e}", line, source) from None
    layers = list(_take(m, "layers", []))
    _no_extra(m, "map", source)

    fusion = []
    for src in _take(data, "sources", []) or []:
        src = dict(src)
        name = _take(src, "name", required=True, source=source)
        for entry in _take(src, "fusion", [], source=source) or []:
            entry = dict(entry)
            eline = entry.get(LINE)
            kwargs = _strip(entry)
            try:
                fusion.append(FusionConfig(source=str(name), **kwargs))
            except TypeError as e:
                raise ParseError(f"fusion entry: {e}", eline, source) from None
            except ConfigError as e:
                raise ParseError(str(e), eline, source) from None
        _no_extra(src, f"source {name!r}", source)
    try:
        check_configs(fusion)
    except ConfigError as e:
        raise ParseError(str(e), None, source) from None

    plugins = []
    for p in _take(data, "plugins", []) or []:
        p = dict(p)
        pline = p.pop(LINE, None)
        try:
            plugins.append(PluginSpec(**_strip(p)))
        except (TypeError, ConfigError) as e:
            raise ParseError(f"plugin: {e}", pline, source) from None
    _no_extra(data, "config", source)
    return MappingConfig(geom, sigma_z2, layers, fusion, plugins)


def load_mapping_config(path) -> MappingConfig:
    path = Path(path)
    return parse_mapping_config(path.read_text(), str(path))


@dataclass
class SimSensor:
    source: str
    kind: str
    intrinsics: CameraIntrinsics
    mount: Pose
    sigma_z: float = 0.0
    label_eps: float = 0.0
    flip_prob: float = 0.0
    channels: list[str] = field(default_factory=lambda: ["rgb", "class"])


@dataclass
class SensorConfig:
    sensors: list[SimSensor]
    start: tuple[float, float, float] = (0.0, 0.0, 0.0)
    step: tuple[float, float, float] = (0.0, 0.0, 0.0)
    seed: int = 0

    def robot_pose(self, k: int) -> Pose:
        x = self.start[0] + k * self.step[0]
        y = self.start[1] + k * self.step[1]
        yaw = np.radians(self.start[2] + k * self.step[2])
        return Pose.from_rpy(0.0, 0.0, yaw, (x, y, 0.0))


def mount_pose(position, pitch_deg: float, yaw_deg: float = 0.0) -> Pose:
    """Optical camera frame on the robot, looking along +x turned by ``yaw``
    and tilted down by ``pitch``."""
    p, y = np.radians(pitch_deg), np.radians(yaw_deg)
    fwd = np.array([np.cos(p) * np.cos(y), np.cos(p) * np.sin(y), -np.sin(p)])
    pos = np.asarray(position, dtype=np.float64)
    return Pose.look_at(pos, pos + fwd)


def _intrinsics(d, source):
    d = dict(d)
    line = d.get(LINE)
    try:
        w, h = int(_take(d, "width", required=True, source=source)), int(_take(d, "height", required=True, source=source))
        if "hfov" in d:
            intr = CameraIntrinsics.from_fov(w, h, float(d.pop("hfov")))
        else:
            intr = CameraIntrinsics(float(d.pop("fx")), float(d.pop("fy")), float(d.pop("cx")), float(d.pop("cy")), w, h)
    except KeyError as e:
        raise ParseError(f"intrinsics missing {e.args[0]}", line, source) from None
    except ValueError as e:
        if isinstance(e, ParseError):
            raise
        raise ParseError(f"intrinsics: {e}", line, source) from None
    _no_extra(d, "intrinsics", source)
    return intr


def parse_sensor_config(text: str, source=None) -> SensorConfig:
    data = _load_yaml(text, source)
    seed = int(_take(data, "seed", 0))
    traj = dict(_take(data, "trajectory", {LINE: None}) or {LINE: None})
    start = tuple(float(x) for x in _take(traj, "start", [0.0, 0.0, 0.0]))
    step = tuple(float(x) for x in _take(traj, "step", [0.0, 0.0, 0.0]))
    if len(start) != 3 or len(step) != 3:
        raise ParseError("trajectory start/step need [x, y, yaw]", traj.get(LINE), source)
    _no_extra(traj, "trajectory", source)
    sensors = []
    for s in _take(data, "sensors", [], source=source) or []:
        s = dict(s)
        line = s.get(LINE)
        kind = str(_take(s, "type", "cloud"))
        if kind not in ("cloud", "image"):
            raise ParseError(f"sensor type must be cloud or image, got {kind!r}", line, source)
        mount = dict(_take(s, "mount", {LINE: line}) or {LINE: line})
        pose = mount_pose(_take(mount, "position", [0.0, 0.0, 1.0]), float(_take(mount, "pitch", 30.0)),
                          float(_take(mount, "yaw", 0.0)))
        _no_extra(mount, "mount", source)
        sensors.append(SimSensor(
            source=str(_take(s, "source", required=True, source=source)),
            kind=kind,
            intrinsics=_intrinsics(_take(s, "intrinsics", required=True, source=source), source),
            mount=pose,
            sigma_z=float(_take(s, "sigma_z", 0.0)),
            label_eps=float(_take(s, "label_eps", 0.0)),
            flip_prob=float(_take(s, "flip_prob", 0.0)),
            channels=list(_take(s, "channels", ["rgb", "class"])),
        ))
        _no_extra(s, "sensor", source)
    _no_extra(data, "sensor config", source)
    if not sensors:
        raise ParseError("no sensors configured", None, source)
    return SensorConfig(sensors, start, step, seed)


def load_sensor_config(path) -> SensorConfig:
    path = Path(path)
    return parse_sensor_config(path.read_text(), str(path))
