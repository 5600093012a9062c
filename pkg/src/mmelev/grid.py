"""Robot-centric multi-layer grid map.

Axis convention (used everywhere in the package): the layer arrays have
shape ``(height_cells, width_cells)``; the row index grows with +x and the
column index grows with +y of the map frame. Row ``0``/column ``0`` is the
cell at the most negative x/y corner of the window.

Cells with ``valid == 0`` hold NaN in ``elevation`` and zeros elsewhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

from .errors import DuplicateLayerError, GeometryError, UnknownLayerError

BASE_LAYERS = ("elevation", "variance", "valid")
LAYER_KINDS = ("geometric", "multimodal", "plugin-output")
CELL_DTYPE = np.float32


class CellIndex(NamedTuple):
    row: int
    col: int


@dataclass(frozen=True)
class MapGeometry:
    resolution: float
    width_cells: int
    height_cells: int
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not (self.resolution > 0 and np.isfinite(self.resolution)):
            raise GeometryError(f"resolution must be positive, got {self.resolution}")
        for name in ("width_cells", "height_cells"):
            n = getattr(self, name)
            if int(n) != n or n < 1:
                raise GeometryError(f"{name} must be a positive integer, got {n}")
        object.__setattr__(self, "width_cells", int(self.width_cells))
        object.__setattr__(self, "height_cells", int(self.height_cells))
        cx, cy = self.center
        object.__setattr__(self, "center", (float(cx), float(cy)))

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height_cells, self.width_cells)

    @property
    def n_cells(self) -> int:
        return self.width_cells * self.height_cells

    @property
    def extent(self) -> tuple[float, float]:
        """Window size ``(x_extent, y_extent)`` in meters."""
        return (self.height_cells * self.resolution, self.width_cells * self.resolution)

    @property
    def origin(self) -> tuple[float, float]:
        """Map-frame position of the lower corner of cell (0, 0)."""
        ex, ey = self.extent
        return (self.center[0] - ex / 2.0, self.center[1] - ey / 2.0)

    def with_center(self, center) -> "MapGeometry":
        return MapGeometry(self.resolution, self.width_cells, self.height_cells, tuple(center))


@dataclass
class Layer:
    name: str
    values: np.ndarray
    kind: str = "multimodal"

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")


@dataclass
class GridMap:
    """Named float32 layers over a shared :class:`MapGeometry`.

    Index with ``gmap["elevation"]`` to get the raw array. Layer order is
    insertion order and is preserved by the file format.
    """

    geometry: MapGeometry
    layers: dict[str, Layer] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self.layers[name].values
        except KeyError:
            raise UnknownLayerError(
                f"unknown layer {name!r}; available: {', '.join(self.layers)}"
            ) from None

    def __setitem__(self, name: str, values) -> None:
        layer = self.layers.get(name)
        if layer is None:
            raise UnknownLayerError(f"unknown layer {name!r}; use add_layer first")
        values = np.asarray(values, dtype=CELL_DTYPE)
        if values.ndim == 0:
            values = np.full(self.geometry.shape, values, dtype=CELL_DTYPE)
        if values.shape != self.geometry.shape:
            raise GeometryError(
                f"layer {name!r} must have shape {self.geometry.shape}, got {values.shape}"
            )
        layer.values = values

    def __contains__(self, name: str) -> bool:
        return name in self.layers

    @property
    def layer_names(self) -> list[str]:
        return list(self.layers)

    @property
    def valid_mask(self) -> np.ndarray:
        return self["valid"] > 0.5

    def kind(self, name: str) -> str:
        self[name]
        return self.layers[name].kind

    def add_layer(self, name: str, kind: str = "multimodal", fill: float = 0.0) -> np.ndarray:
        if name in self.layers:
            raise DuplicateLayerError(f"layer {name!r} already exists")
        _check_name(name)
        values = np.full(self.geometry.shape, fill, dtype=CELL_DTYPE)
        self.layers[name] = Layer(name, values, kind)
        return values

    def ensure_layer(self, name: str, kind: str = "multimodal", fill: float = 0.0) -> np.ndarray:
        if name in self.layers:
            return self.layers[name].values
        return self.add_layer(name, kind, fill)

    def remove_layer(self, name: str) -> None:
        if name in BASE_LAYERS:
            raise ValueError(f"base layer {name!r} cannot be removed")
        self[name]
        del self.layers[name]

    def copy(self) -> "GridMap":
        return GridMap(
            self.geometry,
            {k: Layer(v.name, v.values.copy(), v.kind) for k, v in self.layers.items()},
        )

    def equals(self, other: "GridMap") -> bool:
        """Bit-for-bit comparison of geometry, layer order, kinds and values."""
        if self.geometry != other.geometry or self.layer_names != other.layer_names:
            return False
        for name, layer in self.layers.items():
            o = other.layers[name]
            if layer.kind != o.kind:
                return False
            if layer.values.tobytes() != o.values.tobytes():
                return False
        return True


def _check_name(name: str) -> None:
    if not name or any(c.isspace() for c in name) or name.startswith("#"):
        raise ValueError(f"invalid layer name {name!r}")


def _blank_layer_fill(name: str) -> float:
    return np.nan if name == "elevation" else 0.0


def create_map(geometry: MapGeometry, multimodal_layer_names: Iterable[str] = ()) -> GridMap:
    """Allocate a map with all cells invalid and zero-filled multimodal layers."""
    names = list(multimodal_layer_names)
    seen = set(BASE_LAYERS)
    for name in names:
        if name in seen:
            raise DuplicateLayerError(f"duplicate layer name {name!r}")
        seen.add(name)
    gmap = GridMap(geometry)
    for name in BASE_LAYERS:
        gmap.add_layer(name, "geometric", _blank_layer_fill(name))
    for name in names:
        gmap.add_layer(name, "multimodal")
    return gmap


def cell_indices(geometry: MapGeometry, xy) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorised cell lookup.

    Returns ``(rows, cols, inside)``; rows/cols are unclipped integer lattice
    coordinates, so they are meaningful even for points outside the window.
    Non-finite inputs are reported as outside.
    """
    xy = np.asarray(xy, dtype=np.float64)
    x0, y0 = geometry.origin
    r = geometry.resolution
    with np.errstate(invalid="ignore"):
        fr = np.floor((xy[..., 0] - x0) / r)
        fc = np.floor((xy[..., 1] - y0) / r)
    finite = np.isfinite(fr) & np.isfinite(fc)
    fr = np.where(finite, fr, -1.0)
    fc = np.where(finite, fc, -1.0)
    # clamp huge values before the integer cast
    lim = 2.0**40
    rows = np.clip(fr, -lim, lim).astype(np.int64)
    cols = np.clip(fc, -lim, lim).astype(np.int64)
    inside = (
        finite
        & (rows >= 0)
        & (rows < geometry.height_cells)
        & (cols >= 0)
        & (cols < geometry.width_cells)
    )
    return rows, cols, inside


def cell_index(gmap: GridMap | MapGeometry, xy) -> CellIndex | None:
    """Cell containing ``xy`` (half-open footprints), or ``None`` if outside."""
    geometry = gmap.geometry if isinstance(gmap, GridMap) else gmap
    rows, cols, inside = cell_indices(geometry, np.asarray(xy, dtype=np.float64)[None, :])
    if not inside[0]:
        return None
    return CellIndex(int(rows[0]), int(cols[0]))


def cell_center(gmap: GridMap | MapGeometry, idx) -> tuple[float, float]:
    geometry = gmap.geometry if isinstance(gmap, GridMap) else gmap
    row, col = idx
    if not (0 <= row < geometry.height_cells and 0 <= col < geometry.width_cells):
        raise IndexError(f"cell {tuple(idx)} outside {geometry.shape} grid")
    x0, y0 = geometry.origin
    r = geometry.resolution
    return (x0 + (row + 0.5) * r, y0 + (col + 0.5) * r)


def cell_centers(geometry: MapGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Map-frame x and y of every cell center, each shaped like a layer."""
    x0, y0 = geometry.origin
    r = geometry.resolution
    xs = x0 + (np.arange(geometry.height_cells) + 0.5) * r
    ys = y0 + (np.arange(geometry.width_cells) + 0.5) * r
    return np.meshgrid(xs, ys, indexing="ij")


def snap_shift(geometry: MapGeometry, new_center) -> tuple[int, int]:
    """Whole-cell shift (rows, cols) that brings the center closest to ``new_center``."""
    r = geometry.resolution
    dx = (float(new_center[0]) - geometry.center[0]) / r
    dy = (float(new_center[1]) - geometry.center[1]) / r
    return int(np.floor(dx + 0.5)), int(np.floor(dy + 0.5))


def recenter(gmap: GridMap, new_center) -> GridMap:
    """Move the window in whole-cell steps toward ``new_center`` (in place).

    Cells still inside the window keep their data; cells that scroll in are
    reset to the blank state of :func:`create_map`.
    """
    geom = gmap.geometry
    dr, dc = snap_shift(geom, new_center)
    if dr == 0 and dc == 0:
        return gmap
    r = geom.resolution
    n_rows, n_cols = geom.shape
    # new[i, j] = old[i + dr, j + dc]
    src_r = slice(max(dr, 0), min(n_rows, n_rows + dr))
    dst_r = slice(max(-dr, 0), min(n_rows, n_rows - dr))
    src_c = slice(max(dc, 0), min(n_cols, n_cols + dc))
    dst_c = slice(max(-dc, 0), min(n_cols, n_cols - dc))
    overlap = abs(dr) < n_rows and abs(dc) < n_cols
    for name, layer in gmap.layers.items():
        fresh = np.full(geom.shape, _blank_layer_fill(name), dtype=CELL_DTYPE)
        if overlap:
            fresh[dst_r, dst_c] = layer.values[src_r, src_c]
        layer.values = fresh
    gmap.geometry = geom.with_center(
        (geom.center[0] + dr * r, geom.center[1] + dc * r)
    )
    return gmap


def memory_footprint(gmap: GridMap) -> int:
    """Bytes held by layer storage: layers x cells x 4."""
    g = gmap.geometry
    return len(gmap.layers) * g.width_cells * g.height_cells * np.dtype(CELL_DTYPE).itemsize
