"""Per-cell fusion rules.

Every function works on whole layers at once: ``count`` is the number of
observations that fell into each cell in the current message and ``sums``
their per-cell total. Cells with ``count == 0`` are returned bit-identical.
Arithmetic is done in float64 and written back in the dtype of the
state arrays, which are modified in place and also returned.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError

ALGORITHMS = ("latest", "exponential", "gaussian", "dirichlet")
DEFAULT_SIGMA_Z2 = 0.01


def _touched(count) -> np.ndarray:
    return np.asarray(count) > 0


def fuse_latest(layer: np.ndarray, count, sums) -> np.ndarray:
    """Replace touched cells with this message's per-cell average."""
    m = _touched(count)
    layer[m] = np.asarray(sums, dtype=np.float64)[m] / np.asarray(count)[m]
    return layer


def fuse_exponential(layer: np.ndarray, count, sums, w: float, seen: np.ndarray | None = None):
    """``theta <- w * a + (1 - w) * theta`` on touched cells.

    ``seen`` flags cells that already hold a value. A cell seen for the
    first time is set to the measurement instead of being blended with the
    zero fill. Without ``seen`` every cell is treated as initialised.
    Returns ``(layer, seen)``.
    """
    if not (0.0 < w <= 1.0):
        raise ValueError(f"exponential weight must be in (0, 1], got {w}")
    m = _touched(count)
    a = np.asarray(sums, dtype=np.float64)[m] / np.asarray(count)[m]
    old = layer[m].astype(np.float64)
    blended = w * a + (1.0 - w) * old
    if seen is not None:
        first = ~(seen[m] > 0)
        blended = np.where(first, a, blended)
        seen[m] = 1
    layer[m] = blended
    return layer, seen


def fuse_gaussian(mean: np.ndarray, var: np.ndarray, count, sums, sigma_f2: float, mu0: float, sigma02: float):
    """Conjugate update of one feature dimension with known noise ``sigma_f2``.

    The current posterior acts as the prior; cells with ``var <= 0`` have not
    been initialised yet and start from ``(mu0, sigma02)``. The message's
    ``N`` points enter as one batch with mean ``sums / N``.
    """
    if not (sigma_f2 > 0 and sigma02 > 0):
        raise ValueError("gaussian fusion variances must be positive")
    m = _touched(count)
    n = np.asarray(count, dtype=np.float64)[m]
    mu_ml = np.asarray(sums, dtype=np.float64)[m] / n
    v0 = var[m].astype(np.float64)
    m0 = mean[m].astype(np.float64)
    fresh = ~(v0 > 0)
    v0 = np.where(fresh, sigma02, v0)
    m0 = np.where(fresh, mu0, m0)
    denom = n * v0 + sigma_f2
    mean[m] = (sigma_f2 / denom) * m0 + (n * v0 / denom) * mu_ml
    var[m] = sigma_f2 * v0 / denom
    return mean, var


def fuse_dirichlet(theta: np.ndarray, alpha: np.ndarray, count, sums, alpha0):
    """Dirichlet concentration update and posterior class probabilities.

    ``theta``, ``alpha`` and ``sums`` are stacked class-first, shape
    ``(K, ...)``. ``sums[k]`` is the summed probability of class ``k`` over
    the cell's observations (one-hot or soft). Cells with all-zero alpha
    start from ``alpha0``. Returns ``(theta, alpha)``.
    """
    sums = np.asarray(sums, dtype=np.float64)
    alpha0 = np.asarray(alpha0, dtype=np.float64).reshape(-1)
    K = theta.shape[0]
    if alpha0.size == 1:
        alpha0 = np.full(K, alpha0[0])
    if alpha0.size != K or np.any(alpha0 <= 0):
        raise ValueError("alpha0 must be positive with one entry per class")
    if np.any(sums < 0):
        raise ValueError("negative class probability in dirichlet input")
    m = _touched(count)
    a = alpha[:, m].astype(np.float64)
    fresh = ~(a.sum(axis=0) > 0)
    a = np.where(fresh[None, :], alpha0[:, None], a)
    a += sums[:, m]
    alpha[:, m] = a
    theta[:, m] = a / a.sum(axis=0, keepdims=True)
    return theta, alpha


def fuse_height(h: np.ndarray, var: np.ndarray, valid: np.ndarray, count, z_sum, sigma_z2: float = DEFAULT_SIGMA_Z2):
    """Precision-weighted scalar height update.

    A message contributes its mean height with variance ``sigma_z2 / N``.
    The first touch of an invalid cell adopts that directly and marks the
    cell valid. Returns ``(h, var, valid)``.
    """
    if not sigma_z2 > 0:
        raise ValueError("sigma_z2 must be positive")
    m = _touched(count)
    n = np.asarray(count, dtype=np.float64)[m]
    zbar = np.asarray(z_sum, dtype=np.float64)[m] / n
    meas_var = sigma_z2 / n
    was_valid = valid[m] > 0.5
    h_old = np.where(was_valid, h[m].astype(np.float64), 0.0)
    v_old = np.where(was_valid, var[m].astype(np.float64), 1.0)
    denom = v_old + meas_var
    h_new = (v_old * zbar + meas_var * h_old) / denom
    v_new = v_old * meas_var / denom
    h[m] = np.where(was_valid, h_new, zbar)
    var[m] = np.where(was_valid, v_new, meas_var)
    valid[m] = 1
    return h, var, valid


@dataclass
class FusionConfig:
    """Fuses ``channels`` of one input source into ``layers`` with ``algorithm``."""

    source: str
    algorithm: str
    channels: list[str]
    layers: list[str] = field(default_factory=list)
    weight: float = 0.5
    sigma_f2: list[float] = field(default_factory=lambda: [1.0])
    mu0: list[float] = field(default_factory=lambda: [0.0])
    sigma02: list[float] = field(default_factory=lambda: [1.0])
    alpha0: list[float] = field(default_factory=lambda: [1.0])

    def __post_init__(self):
        self.channels = list(self.channels)
        self.layers = list(self.layers) if self.layers else list(self.channels)
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"unknown fusion algorithm {self.algorithm!r}; choose from {ALGORITHMS}")
        if not self.channels:
            raise ConfigError(f"source {self.source!r}: no channels given")
        if len(self.layers) != len(self.channels):
            raise ConfigError(f"source {self.source!r}: {len(self.channels)} channels but {len(self.layers)} layers")
        if len(set(self.layers)) != len(self.layers):
            raise ConfigError(f"source {self.source!r}: duplicate target layer")
        n = len(self.channels)
        for name in ("sigma_f2", "mu0", "sigma02", "alpha0"):
            vals = getattr(self, name)
            vals = [float(vals)] if np.isscalar(vals) else [float(x) for x in vals]
            if len(vals) == 1:
                vals = vals * n
            if len(vals) != n:
                raise ConfigError(f"source {self.source!r}: {name} needs 1 or {n} values")
            setattr(self, name, vals)
        self.weight = float(self.weight)
        if self.algorithm == "exponential" and not (0.0 < self.weight <= 1.0):
            raise ConfigError(f"source {self.source!r}: weight must be in (0, 1]")
        if self.algorithm == "gaussian" and (min(self.sigma_f2) <= 0 or min(self.sigma02) <= 0):
            raise ConfigError(f"source {self.source!r}: gaussian variances must be positive")
        if self.algorithm == "dirichlet" and min(self.alpha0) <= 0:
            raise ConfigError(f"source {self.source!r}: alpha0 must be positive")

    def state_layers(self) -> list[str]:
        """Auxiliary layers this config keeps next to its target layers."""
        if self.algorithm == "exponential":
            return [f"{l}:seen" for l in self.layers]
        if self.algorithm == "gaussian":
            return [f"{l}:var" for l in self.layers]
        if self.algorithm == "dirichlet":
            return [f"{l}:alpha" for l in self.layers]
        return []


def check_configs(configs: Sequence[FusionConfig]) -> None:
    """Reject layer sets that two algorithms would both write to."""
    owner: dict[str, str] = {}
    for cfg in configs:
        for layer in cfg.layers:
            prev = owner.setdefault(layer, cfg.algorithm)
            if prev != cfg.algorithm:
                raise ConfigError(
                    f"layer {layer!r} is targeted by both {prev} and {cfg.algorithm} fusion"
                )
