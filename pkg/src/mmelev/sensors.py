"""Sensor inputs: poses, pinhole intrinsics, multi-modal clouds and images.

Camera frames follow the optical convention: +z forward, +x right, +y down.
A :class:`Pose` maps sensor coordinates to the map frame, ``p_map = R p + t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import ChannelError, PoseError

Z_MIN = 1e-6
CHANNEL_TAGS = ("raw", "probability", "one_hot", "feature")
SIMPLEX_TOL = 1e-4
OTHER_CLASS = "other"


@dataclass(frozen=True)
class Pose:
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        R = np.array(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise PoseError("pose contains non-finite values")
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-6, rtol=0):
            raise PoseError("rotation is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > 1e-6:
            raise PoseError("rotation is not proper (det != +1)")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def from_rpy(cls, roll=0.0, pitch=0.0, yaw=0.0, translation=(0.0, 0.0, 0.0)) -> "Pose":
        """Fixed-axis roll/pitch/yaw in radians, ``R = Rz(yaw) Ry(pitch) Rx(roll)``."""
        cr, sr = np.cos(roll), np.sin(roll)
        cp, sp = np.cos(pitch), np.sin(pitch)
        cy, sy = np.cos(yaw), np.sin(yaw)
        Rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]])
        Ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]])
        Rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]])
        return cls(Rz @ Ry @ Rx, translation)

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0)) -> "Pose":
        """Optical-frame camera at ``eye`` with its +z axis pointing at ``target``."""
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(right) < 1e-9:
            # looking straight along `up`; pick any perpendicular right vector
            right = np.cross(fwd, [1.0, 0.0, 0.0])
            if np.linalg.norm(right) < 1e-9:
                right = np.cross(fwd, [0.0, 1.0, 0.0])
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        return cls(np.column_stack([right, down, fwd]), eye)

    def compose(self, other: "Pose") -> "Pose":
        """``self * other``: apply ``other`` first, then ``self``."""
        return Pose(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def apply(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64)
        return points @ self.rotation.T + self.translation


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if int(self.width) != self.width or int(self.height) != self.height or self.width < 1 or self.height < 1:
            raise ValueError("image size must be positive integers")
        object.__setattr__(self, "width", int(self.width))
        object.__setattr__(self, "height", int(self.height))
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @classmethod
    def from_fov(cls, width: int, height: int, hfov_deg: float) -> "CameraIntrinsics":
        f = (width / 2.0) / np.tan(np.radians(hfov_deg) / 2.0)
        return cls(f, f, (width - 1) / 2.0, (height - 1) / 2.0, width, height)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0, self.cx], [0, self.fy, self.cy], [0, 0, 1.0]])


def _check_channels(channels: Mapping[str, np.ndarray], tags, groups, shape, what):
    tags = dict(tags or {})
    for name, values in channels.items():
        if values.shape != shape:
            raise ChannelError(f"{what} channel {name!r} has shape {values.shape}, expected {shape}")
        tag = tags.setdefault(name, "raw")
        if tag not in CHANNEL_TAGS:
            raise ChannelError(f"channel {name!r}: unknown tag {tag!r}")
        if tag in ("probability", "one_hot"):
            v = values[np.isfinite(values)]
            if v.size and (v.min() < -SIMPLEX_TOL or v.max() > 1 + SIMPLEX_TOL):
                raise ChannelError(f"channel {name!r} tagged {tag} has values outside [0, 1]")
    for name in tags:
        if name not in channels:
            raise ChannelError(f"tag given for missing channel {name!r}")
    groups = {g: list(members) for g, members in (groups or {}).items()}
    for g, members in groups.items():
        missing = [m for m in members if m not in channels]
        if missing:
            raise ChannelError(f"class group {g!r} refers to missing channels {missing}")
        if members:
            total = np.sum([channels[m].astype(np.float64) for m in members], axis=0)
            if np.any(np.abs(total - 1.0) > SIMPLEX_TOL):
                raise ChannelError(f"class group {g!r} does not sum to 1 within {SIMPLEX_TOL}")
    return tags, groups


@dataclass
class MultiModalPointCloud:
    """``N`` sensor-frame points with named per-point channels.

    ``tags`` gives each channel's semantics (``raw`` when omitted) and
    ``groups`` lists channels that together form a class distribution.
    """

    points: np.ndarray
    channels: dict[str, np.ndarray] = field(default_factory=dict)
    tags: dict[str, str] = field(default_factory=dict)
    groups: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.channels = {k: np.asarray(v, dtype=np.float32).reshape(-1) for k, v in self.channels.items()}
        self.tags, self.groups = _check_channels(
            self.channels, self.tags, self.groups, (len(self.points),), "point cloud"
        )

    def __len__(self):
        return len(self.points)

    @property
    def channel_names(self) -> list[str]:
        return list(self.channels)

    def with_points(self, points) -> "MultiModalPointCloud":
        return MultiModalPointCloud(points, self.channels, self.tags, self.groups)


@dataclass
class MultiModalImage:
    channels: dict[str, np.ndarray]
    intrinsics: CameraIntrinsics
    pose: Pose
    tags: dict[str, str] = field(default_factory=dict)
    groups: dict[str, list[str]] = field(default_factory=dict)

    def __post_init__(self):
        shape = (self.intrinsics.height, self.intrinsics.width)
        self.channels = {k: np.asarray(v, dtype=np.float32) for k, v in self.channels.items()}
        self.tags, self.groups = _check_channels(self.channels, self.tags, self.groups, shape, "image")

    @property
    def channel_names(self) -> list[str]:
        return list(self.channels)


@dataclass(frozen=True)
class TopKClassChannels:
    """``k`` (class id, probability) channel pairs over a class vocabulary."""

    class_ids: np.ndarray  # (k, ...) integer-valued
    probabilities: np.ndarray  # (k, ...)
    vocabulary: tuple[str, ...]

    def __post_init__(self):
        ids = np.asarray(self.class_ids)
        probs = np.asarray(self.probabilities, dtype=np.float64)
        if ids.shape != probs.shape:
            raise ChannelError("class id and probability channels differ in shape")
        object.__setattr__(self, "class_ids", ids)
        object.__setattr__(self, "probabilities", probs)
        object.__setattr__(self, "vocabulary", tuple(self.vocabulary))


def transform_points(cloud: MultiModalPointCloud, pose: Pose) -> MultiModalPointCloud:
    if not isinstance(pose, Pose):
        pose = Pose(*pose)
    return cloud.with_points(pose.apply(cloud.points))


def project_points(intr: CameraIntrinsics, p_cam) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised pinhole projection: ``(u, v, in_front)``; u/v are NaN behind the camera."""
    p = np.asarray(p_cam, dtype=np.float64)
    z = p[..., 2]
    front = z > Z_MIN
    with np.errstate(divide="ignore", invalid="ignore"):
        zs = np.where(front, z, np.nan)
        u = intr.fx * p[..., 0] / zs + intr.cx
        v = intr.fy * p[..., 1] / zs + intr.cy
    return u, v, front


def pixel_of_point(intr: CameraIntrinsics, p_cam) -> tuple[float, float] | None:
    """Continuous pixel ``(u, v)`` of a camera-frame point, or ``None`` if behind."""
    u, v, front = project_points(intr, np.asarray(p_cam, dtype=np.float64)[None, :])
    if not front[0]:
        return None
    return float(u[0]), float(v[0])


def expand_topk(topk: TopKClassChannels, vocabulary: Sequence[str] | None = None) -> dict[str, np.ndarray]:
    """Dense class probabilities from top-k channels.

    The unassigned mass ``1 - sum(p)`` goes to an extra ``"other"`` class
    appended to the vocabulary, so the output always sums to one.
    """
    vocab = tuple(vocabulary) if vocabulary is not None else topk.vocabulary
    K = len(vocab)
    ids = topk.class_ids
    probs = topk.probabilities
    if ids.size:
        if not np.all(ids == np.round(ids)):
            raise ChannelError("class ids must be integers")
        if ids.min() < 0 or ids.max() >= K:
            raise ChannelError(f"class id out of range [0, {K})")
        if probs.min() < -SIMPLEX_TOL:
            raise ChannelError("negative class probability")
    total = probs.sum(axis=0)
    if np.any(total > 1 + SIMPLEX_TOL):
        raise ChannelError("top-k probabilities sum to more than 1")
    dense = np.zeros((K,) + probs.shape[1:], dtype=np.float64)
    ids = ids.astype(np.int64)
    for j in range(probs.shape[0]):
        # np.put_along_axis on the class axis, one rank at a time
        np.put_along_axis(
            dense,
            ids[j][None, ...],
            np.take_along_axis(dense, ids[j][None, ...], axis=0) + probs[j][None, ...],
            axis=0,
        )
    out = {name: dense[k] for k, name in enumerate(vocab)}
    out[OTHER_CLASS] = np.clip(1.0 - total, 0.0, None)
    return out
