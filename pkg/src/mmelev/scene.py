"""Synthetic 2.5D scenes and sensor simulation.

A scene is a height field built from primitives (plane, ramp, box, wall).
Where primitives overlap the highest one wins, and on equal height the one
listed later; its class and color label the surface. At least one plane is
required so the field is defined everywhere.

Scene text format, one primitive per line (``#`` starts a comment)::

    classes grass person
    features dim=8 seed=0 noise=0.05
    plane height=0 class=grass color=0.2,0.6,0.2
    box center=2,0 size=1.8,0.5 height=0.3 yaw=0 class=person color=1,0.5,0
    ramp center=0,3 size=2,1 yaw=0 height=0 slope=0.5 class=grass color=0.4,0.4,0.4
    wall from=3,-1 to=3,1 thickness=0.1 height=2 class=wall color=0.5,0.5,0.5

``size`` is the full footprint along the primitive's local x/y axes,
``yaw`` is in degrees and ramps rise along their local +x with ``slope``
(rise over run) starting at ``height``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numba
import numpy as np

from .errors import ParseError
from .sensors import CameraIntrinsics, MultiModalImage, MultiModalPointCloud, Pose

PLANE, RAMP, BOX = 0, 1, 2
_KINDS = {"plane": PLANE, "ramp": RAMP, "box": BOX, "wall": BOX}
CHANNEL_SETS = ("rgb", "class", "features")


@dataclass
class Primitive:
    kind: str
    cls: str
    height: float = 0.0
    center: tuple[float, float] = (0.0, 0.0)
    size: tuple[float, float] = (1.0, 1.0)
    yaw: float = 0.0  # degrees
    slope: float = 0.0
    color: tuple[float, float, float] = (0.5, 0.5, 0.5)

    @classmethod
    def wall(cls, start, end, thickness, height, cls_name, color=(0.5, 0.5, 0.5)):
        start, end = np.asarray(start, float), np.asarray(end, float)
        d = end - start
        length = float(np.hypot(*d))
        yaw = float(np.degrees(np.arctan2(d[1], d[0])))
        center = tuple(float(c) for c in (start + end) / 2.0)
        return cls("wall", cls_name, height, center, (length, thickness), yaw, 0.0, tuple(color))

    def top(self) -> float:
        if self.kind == "ramp":
            return max(self.height, self.height + self.slope * self.size[0])
        return self.height


@dataclass
class Scene:
    primitives: list[Primitive]
    classes: list[str] = field(default_factory=list)
    feature_dim: int = 8
    feature_seed: int = 0
    feature_noise: float = 0.05

    def __post_init__(self):
        for p in self.primitives:
            if p.cls not in self.classes:
                self.classes.append(p.cls)
        if not any(p.kind == "plane" for p in self.primitives):
            raise ValueError("a scene needs at least one plane")
        rows = []
        for p in self.primitives:
            rows.append([
                _KINDS[p.kind], p.center[0], p.center[1], p.size[0] / 2.0, p.size[1] / 2.0,
                np.radians(p.yaw), p.height, p.slope, self.classes.index(p.cls),
            ])
        self._table = np.array(rows, dtype=np.float64)
        self._colors = np.array([p.color for p in self.primitives], dtype=np.float64)
        self.z_top = max(p.top() for p in self.primitives)
        self.z_floor = max(p.height for p in self.primitives if p.kind == "plane")
        rng = np.random.default_rng(self.feature_seed)
        self.class_features = rng.normal(size=(len(self.classes), self.feature_dim))

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def surface(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        """Height and index of the labelling primitive at map-frame ``(x, y)``."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        bx, by = np.broadcast_arrays(x, y)
        h = np.empty(bx.size)
        idx = np.empty(bx.size, dtype=np.int64)
        _surface_many(self._table, np.ascontiguousarray(bx).ravel(), np.ascontiguousarray(by).ravel(), h, idx)
        return h.reshape(bx.shape), idx.reshape(bx.shape)

    def height(self, x, y) -> np.ndarray:
        return self.surface(x, y)[0]

    def class_index(self, x, y) -> np.ndarray:
        _, idx = self.surface(x, y)
        return self._table[idx, 8].astype(np.int64)

    def to_text(self) -> str:
        lines = ["classes " + " ".join(self.classes),
                 f"features dim={self.feature_dim} seed={self.feature_seed} noise={self.feature_noise!r}"]
        for p in self.primitives:
            color = ",".join(repr(float(c)) for c in p.color)
            if p.kind == "plane":
                lines.append(f"plane height={float(p.height)!r} class={p.cls} color={color}")
                continue
            kind = "box" if p.kind == "wall" else p.kind
            cx, cy = (float(c) for c in p.center)
            sx, sy = (float(c) for c in p.size)
            line = f"{kind} center={cx!r},{cy!r} size={sx!r},{sy!r} yaw={float(p.yaw)!r} height={float(p.height)!r}"
            if p.kind == "ramp":
                line += f" slope={float(p.slope)!r}"
            lines.append(line + f" class={p.cls} color={color}")
        return "\n".join(lines) + "\n"


@numba.njit(cache=True, nogil=True)
def _surface(table, x, y):
    best_h = -np.inf
    best_i = -1
    for i in range(table.shape[0]):
        kind = table[i, 0]
        if kind == PLANE:
            h = table[i, 6]
        else:
            dx = x - table[i, 1]
            dy = y - table[i, 2]
            c = np.cos(table[i, 5])
            s = np.sin(table[i, 5])
            lx = c * dx + s * dy
            ly = -s * dx + c * dy
            hx = table[i, 3]
            hy = table[i, 4]
            if lx < -hx or lx >= hx or ly < -hy or ly >= hy:
                continue
            if kind == RAMP:
                h = table[i, 6] + table[i, 7] * (lx + hx)
            else:
                h = table[i, 6]
        if h >= best_h:
            best_h = h
            best_i = i
    return best_h, best_i


@numba.njit(cache=True, nogil=True)
def _surface_many(table, xs, ys, h_out, i_out):
    for k in range(xs.shape[0]):
        h, i = _surface(table, xs[k], ys[k])
        h_out[k] = h
        i_out[k] = i


@numba.njit(cache=True, nogil=True)
def _march(table, origin, dirs, z_top, z_floor, step_xy, max_range, out_xyz, out_idx):
    ox, oy, oz = origin[0], origin[1], origin[2]
    for k in range(dirs.shape[0]):
        dx, dy, dz = dirs[k, 0], dirs[k, 1], dirs[k, 2]
        out_idx[k] = -1
        if dz >= 0.0 and oz >= z_top:
            continue
        s0 = 0.0
        s1 = max_range
        if dz < 0.0:
            if oz > z_top:
                s0 = max(0.0, (oz - z_top) / -dz - 1e-6)
            s1 = min(max_range, (oz - z_floor) / -dz + 1e-6)
        if s0 >= s1:
            continue
        hxy = np.sqrt(dx * dx + dy * dy)
        ds = step_xy / hxy if hxy > 1e-12 else s1 - s0
        ds = min(ds, s1 - s0)
        h0, _ = _surface(table, ox + s0 * dx, oy + s0 * dy)
        if oz + s0 * dz - h0 <= 0.0:
            # starts below the surface, e.g. camera inside an obstacle
            continue
        lo = s0
        hi = -1.0
        s = s0
        while s < s1:
            s = min(s + ds, s1)
            h, _ = _surface(table, ox + s * dx, oy + s * dy)
            if oz + s * dz - h <= 0.0:
                hi = s
                break
            lo = s
        if hi < 0.0:
            continue
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            h, _ = _surface(table, ox + mid * dx, oy + mid * dy)
            if oz + mid * dz - h <= 0.0:
                hi = mid
            else:
                lo = mid
        x = ox + hi * dx
        y = oy + hi * dy
        h, i = _surface(table, x, y)
        out_xyz[k, 0] = x
        out_xyz[k, 1] = y
        out_xyz[k, 2] = h
        out_idx[k] = i


def pixel_rays(intr: CameraIntrinsics, pose: Pose) -> np.ndarray:
    """Unit map-frame ray directions for every pixel, row-major ``(H*W, 3)``."""
    v, u = np.mgrid[0 : intr.height, 0 : intr.width].astype(np.float64)
    d = np.stack([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, np.ones_like(u)], axis=-1).reshape(-1, 3)
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d @ pose.rotation.T


def cast_rays(scene: Scene, intr: CameraIntrinsics, pose: Pose, step_xy: float = 0.02, max_range: float = 30.0):
    """Surface hit per pixel: ``(xyz (H*W, 3), primitive index or -1)``."""
    dirs = np.ascontiguousarray(pixel_rays(intr, pose))
    xyz = np.full((len(dirs), 3), np.nan)
    idx = np.empty(len(dirs), dtype=np.int64)
    _march(scene._table, np.ascontiguousarray(pose.translation), dirs, scene.z_top, scene.z_floor,
           step_xy, max_range, xyz, idx)
    return xyz, idx


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _labels(scene: Scene, cls_idx, label_eps, flip_prob, rng):
    K = scene.n_classes
    labels = cls_idx.copy()
    if flip_prob > 0 and K > 1:
        flip = rng.random(len(labels)) < flip_prob
        shift = rng.integers(1, K, size=int(flip.sum()))
        labels[flip] = (labels[flip] + shift) % K
    if K == 1:
        probs = np.ones((1, len(labels)))
    else:
        probs = np.full((K, len(labels)), label_eps / (K - 1))
        probs[labels, np.arange(len(labels))] = 1.0 - label_eps
    return probs


def _channels(scene, prim_idx, channels, label_eps, flip_prob, rng):
    if not channels:
        raise ValueError("empty-channel-set: request at least one of " + ", ".join(CHANNEL_SETS))
    unknown = [c for c in channels if c not in CHANNEL_SETS]
    if unknown:
        raise ValueError(f"unknown channel sets {unknown}; choose from {CHANNEL_SETS}")
    hit = prim_idx >= 0
    safe = np.where(hit, prim_idx, 0)
    out, tags, groups = {}, {}, {}
    if "rgb" in channels:
        col = np.where(hit[:, None], scene._colors[safe], 0.0)
        for j, name in enumerate("rgb"):
            out[name] = col[:, j]
            tags[name] = "raw"
    if "class" in channels:
        cls_idx = scene._table[safe, 8].astype(np.int64)
        probs = _labels(scene, cls_idx, label_eps, flip_prob, rng)
        probs[:, ~hit] = 1.0 / scene.n_classes
        tag = "one_hot" if label_eps == 0 else "probability"
        names = [f"class_{c}" for c in scene.classes]
        for k, name in enumerate(names):
            out[name] = probs[k]
            tags[name] = tag
        groups["class"] = names
    if "features" in channels:
        cls_idx = scene._table[safe, 8].astype(np.int64)
        f = scene.class_features[cls_idx]
        if scene.feature_noise > 0:
            f = f + rng.normal(scale=scene.feature_noise, size=f.shape)
        f[~hit] = 0.0
        for j in range(scene.feature_dim):
            out[f"feat_{j}"] = f[:, j]
            tags[f"feat_{j}"] = "feature"
    return out, tags, groups


def render_depth_cloud(
    scene: Scene,
    intr: CameraIntrinsics,
    pose: Pose,
    sigma_z: float = 0.0,
    channels: Sequence[str] = ("rgb", "class"),
    label_eps: float = 0.0,
    flip_prob: float = 0.0,
    seed=None,
    step_xy: float = 0.02,
    max_range: float = 30.0,
) -> MultiModalPointCloud:
    """Simulated depth camera: one sensor-frame point per pixel that hits the scene.

    Heights get N(0, sigma_z) noise in the map frame. Class channels are
    softened so the observed label carries ``1 - label_eps``; with
    ``flip_prob`` the observed label is first swapped for a random wrong one.
    """
    rng = _rng(seed)
    xyz, idx = cast_rays(scene, intr, pose, step_xy, max_range)
    hit = idx >= 0
    pts = xyz[hit]
    if sigma_z > 0:
        pts[:, 2] += rng.normal(scale=sigma_z, size=len(pts))
    ch, tags, groups = _channels(scene, idx[hit], channels, label_eps, flip_prob, rng)
    p_cam = (pts - pose.translation) @ pose.rotation
    return MultiModalPointCloud(p_cam, ch, tags, groups)


def render_image(
    scene: Scene,
    intr: CameraIntrinsics,
    pose: Pose,
    channels: Sequence[str] = ("rgb", "class"),
    label_eps: float = 0.0,
    flip_prob: float = 0.0,
    seed=None,
    step_xy: float = 0.02,
    max_range: float = 30.0,
) -> MultiModalImage:
    """Simulated monocular multi-modal image; pixels that miss hold zeros
    (uniform probabilities for class channels)."""
    rng = _rng(seed)
    if not channels:
        raise ValueError("empty-channel-set: request at least one of " + ", ".join(CHANNEL_SETS))
    _, idx = cast_rays(scene, intr, pose, step_xy, max_range)
    ch, tags, groups = _channels(scene, idx, channels, label_eps, flip_prob, rng)
    shape = (intr.height, intr.width)
    return MultiModalImage({k: v.reshape(shape) for k, v in ch.items()}, intr, pose, tags, groups)


def _floats(value, n, key, line, source):
    try:
        vals = [float(x) for x in value.split(",")]
    except ValueError:
        raise ParseError(f"{key}: expected {n} comma-separated numbers, got {value!r}", line, source) from None
    if len(vals) != n:
        raise ParseError(f"{key}: expected {n} numbers, got {len(vals)}", line, source)
    return vals


def parse_scene(text: str, source: str | None = None) -> Scene:
    prims: list[Primitive] = []
    classes: list[str] = []
    feat = {"dim": 8, "seed": 0, "noise": 0.05}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        head, *rest = line.split()
        if head == "classes":
            classes.extend(rest)
            continue
        kv = {}
        for tok in rest:
            if "=" not in tok:
                raise ParseError(f"expected key=value, got {tok!r}", lineno, source)
            k, v = tok.split("=", 1)
            kv[k] = v
        try:
            if head == "features":
                feat["dim"] = int(kv.pop("dim", feat["dim"]))
                feat["seed"] = int(kv.pop("seed", feat["seed"]))
                feat["noise"] = float(kv.pop("noise", feat["noise"]))
            elif head in ("plane", "box", "ramp", "wall"):
                if "class" not in kv:
                    raise ParseError(f"{head} needs class=", lineno, source)
                cls = kv.pop("class")
                color = tuple(_floats(kv.pop("color", "0.5,0.5,0.5"), 3, "color", lineno, source))
                height = float(kv.pop("height", 0.0))
                if head == "plane":
                    prims.append(Primitive("plane", cls, height, color=color))
                elif head == "wall":
                    a = _floats(kv.pop("from"), 2, "from", lineno, source)
                    b = _floats(kv.pop("to"), 2, "to", lineno, source)
                    prims.append(Primitive.wall(a, b, float(kv.pop("thickness", 0.1)), height, cls, color))
                else:
                    center = tuple(_floats(kv.pop("center"), 2, "center", lineno, source))
                    size = tuple(_floats(kv.pop("size"), 2, "size", lineno, source))
                    if min(size) <= 0:
                        raise ParseError("size must be positive", lineno, source)
                    yaw = float(kv.pop("yaw", 0.0))
                    slope = float(kv.pop("slope", 0.0)) if head == "ramp" else 0.0
                    prims.append(Primitive(head, cls, height, center, size, yaw, slope, color))
            else:
                raise ParseError(f"unknown primitive {head!r}", lineno, source)
        except KeyError as e:
            raise ParseError(f"{head} is missing {e.args[0]}=", lineno, source) from None
        except ValueError as e:
            if isinstance(e, ParseError):
                raise
            raise ParseError(str(e), lineno, source) from None
        if kv:
            raise ParseError(f"unknown keys for {head}: {sorted(kv)}", lineno, source)
    if not prims:
        raise ParseError("scene has no primitives", None, source)
    try:
        return Scene(prims, classes, feat["dim"], feat["seed"], feat["noise"])
    except ValueError as e:
        raise ParseError(str(e), None, source) from None


def load_scene(path) -> Scene:
    path = Path(path)
    return parse_scene(path.read_text(), str(path))
