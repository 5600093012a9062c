"""Cell/data association.

Point clouds are binned into cells by their horizontal position. Images go
the other way: every valid cell is projected into the camera and kept only
if no intermediate cell on its Bresenham line towards the camera footprint
sticks out above the straight ray between focal point and cell.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from . import parallel
from .grid import CellIndex, GridMap, MapGeometry, cell_centers, cell_indices
from .sensors import CameraIntrinsics, MultiModalPointCloud, Pose, project_points

OCCLUSION_EPS = 1e-4


@dataclass
class CellAccumulator:
    """Per-message sufficient statistics for every cell of the grid.

    ``cells`` holds the flat cell index of each kept point and ``kept`` the
    index of that point in the source cloud, so channel sums can be added
    after the geometric binning pass.
    """

    geometry: MapGeometry
    cells: np.ndarray
    kept: np.ndarray
    count: np.ndarray
    z_sum: np.ndarray
    dropped: int = 0
    sums: dict[str, np.ndarray] = field(default_factory=dict)
    workers: int = 1

    @property
    def touched(self) -> np.ndarray:
        return self.count > 0

    def add_channel(self, name: str, values: np.ndarray) -> np.ndarray:
        """Accumulate a per-point channel (indexed like the source cloud)."""
        if name not in self.sums:
            w = np.asarray(values, dtype=np.float64)[self.kept]
            s = parallel.bincount(self.cells, w, self.geometry.n_cells, self.workers)
            self.sums[name] = s.reshape(self.geometry.shape)
        return self.sums[name]

    def mean(self, name: str) -> np.ndarray:
        """Per-cell average of a channel; NaN where no point landed."""
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.sums[name] / self.count

    @property
    def z_mean(self) -> np.ndarray:
        with np.errstate(invalid="ignore", divide="ignore"):
            return self.z_sum / self.count


def bin_points(gmap: GridMap | MapGeometry, cloud: MultiModalPointCloud, channels=None, workers: int = 1) -> CellAccumulator:
    """Bin a map-frame cloud into cells.

    Points outside the window or with non-finite coordinates are dropped and
    counted in ``dropped``. ``channels=None`` accumulates every channel.
    """
    geometry = gmap.geometry if isinstance(gmap, GridMap) else gmap
    pts = cloud.points
    rows, cols, inside = cell_indices(geometry, pts[:, :2])
    inside &= np.isfinite(pts[:, 2])
    kept = np.flatnonzero(inside)
    cells = rows[kept] * geometry.width_cells + cols[kept]
    n = geometry.n_cells
    count = parallel.bincount(cells, None, n, workers).reshape(geometry.shape)
    z_sum = parallel.bincount(cells, pts[kept, 2], n, workers).reshape(geometry.shape)
    acc = CellAccumulator(
        geometry, cells, kept, count, z_sum, dropped=int(len(pts) - len(kept)), workers=workers
    )
    names = cloud.channel_names if channels is None else channels
    for name in names:
        acc.add_channel(name, cloud.channels[name])
    return acc


def _line_cells(a, b):
    """Intermediate cells from canonical start ``a`` to ``b`` (a <= b lexicographically)."""
    ar, ac = a
    dr, dc = b[0] - ar, b[1] - ac
    adr, adc = abs(dr), abs(dc)
    D = max(adr, adc)
    if D <= 1:
        return np.empty((0, 2), dtype=np.int64)
    s = np.arange(1, D, dtype=np.int64)
    sr, sc = np.sign(dr), np.sign(dc)
    if adr >= adc:
        rr = ar + sr * s
        cc = ac + sc * ((2 * s * adc + D) // (2 * D))
    else:
        cc = ac + sc * s
        rr = ar + sr * ((2 * s * adr + D) // (2 * D))
    return np.stack([rr, cc], axis=1)


def bresenham_cells(a, b) -> list[CellIndex]:
    """8-connected Bresenham cells strictly between ``a`` and ``b``.

    The minor coordinate is the major step's exact position rounded half up,
    always measured from the lexicographically smaller endpoint; swapping
    the endpoints therefore returns the same cells in reverse order.
    """
    a = (int(a[0]), int(a[1]))
    b = (int(b[0]), int(b[1]))
    if a <= b:
        out = _line_cells(a, b)
    else:
        out = _line_cells(b, a)[::-1]
    return [CellIndex(int(r), int(c)) for r, c in out]


@numba.njit(cache=True, nogil=True)
def _axis_range(start, step, lo, hi, s_max):
    # s in [1, s_max] such that lo <= start + step * s < hi
    if step == 0:
        if lo <= start < hi:
            return 1, s_max
        return 1, 0
    if step > 0:
        s_lo = lo - start
        s_hi = hi - 1 - start
    else:
        s_lo = start - (hi - 1)
        s_hi = start - lo
    return max(s_lo, 1), min(s_hi, s_max)


@numba.njit(cache=True, nogil=True)
def _ray_clear(elev, valid, t_rows, t_cols, cam_r, cam_c, cam_x, cam_y, cam_z, x0, y0, res, eps, out):
    n_rows, n_cols = elev.shape
    for k in range(t_rows.shape[0]):
        r1 = t_rows[k]
        c1 = t_cols[k]
        tx = x0 + (r1 + 0.5) * res
        ty = y0 + (c1 + 0.5) * res
        tz = elev[r1, c1]
        dxs = tx - cam_x
        dys = ty - cam_y
        L2 = dxs * dxs + dys * dys
        if cam_r < r1 or (cam_r == r1 and cam_c <= c1):
            ar, ac, br, bc = cam_r, cam_c, r1, c1
        else:
            ar, ac, br, bc = r1, c1, cam_r, cam_c
        dr = br - ar
        dc = bc - ac
        adr = abs(dr)
        adc = abs(dc)
        D = max(adr, adc)
        sr = 1 if dr > 0 else (-1 if dr < 0 else 0)
        sc = 1 if dc > 0 else (-1 if dc < 0 else 0)
        rows_major = adr >= adc
        if rows_major:
            s_lo, s_hi = _axis_range(ar, sr, 0, n_rows, D - 1)
        else:
            s_lo, s_hi = _axis_range(ac, sc, 0, n_cols, D - 1)
        ok = True
        for s in range(s_lo, s_hi + 1):
            if rows_major:
                rr = ar + sr * s
                cc = ac + sc * ((2 * s * adc + D) // (2 * D))
            else:
                cc = ac + sc * s
                rr = ar + sr * ((2 * s * adr + D) // (2 * D))
            if rr < 0 or rr >= n_rows or cc < 0 or cc >= n_cols:
                continue
            if not valid[rr, cc]:
                continue
            px = x0 + (rr + 0.5) * res - cam_x
            py = y0 + (cc + 0.5) * res - cam_y
            t = (px * dxs + py * dys) / L2 if L2 > 0.0 else 0.0
            if t < 0.0:
                t = 0.0
            elif t > 1.0:
                t = 1.0
            h = cam_z + t * (tz - cam_z)
            if elev[rr, cc] > h + eps:
                ok = False
                break
        out[k] = ok


@dataclass
class Correspondences:
    """In-frustum cells (row-major order) with their nearest pixel.

    ``ray_ok`` marks the cells whose ray to the camera is unobstructed;
    only those form an association.
    """

    rows: np.ndarray
    cols: np.ndarray
    u: np.ndarray
    v: np.ndarray
    ray_ok: np.ndarray

    def __len__(self):
        return len(self.rows)

    def visible(self) -> "Correspondences":
        m = self.ray_ok
        return Correspondences(self.rows[m], self.cols[m], self.u[m], self.v[m], self.ray_ok[m])


def frustum_cells(gmap: GridMap, intr: CameraIntrinsics, pose: Pose):
    """Valid cells whose 3D point lands on an image pixel: ``(rows, cols, u, v)``."""
    valid = gmap.valid_mask
    rows, cols = np.nonzero(valid)
    xs, ys = cell_centers(gmap.geometry)
    p_map = np.stack([xs[rows, cols], ys[rows, cols], gmap["elevation"][rows, cols].astype(np.float64)], axis=1)
    p_cam = (p_map - pose.translation) @ pose.rotation
    u, v, front = project_points(intr, p_cam)
    with np.errstate(invalid="ignore"):
        ui = np.floor(u + 0.5)
        vi = np.floor(v + 0.5)
        inside = front & (ui >= 0) & (ui < intr.width) & (vi >= 0) & (vi < intr.height)
    return rows[inside], cols[inside], ui[inside].astype(np.int64), vi[inside].astype(np.int64)


def visible_cells(
    gmap: GridMap,
    intr: CameraIntrinsics,
    pose: Pose,
    workers: int = 1,
    eps: float = OCCLUSION_EPS,
) -> Correspondences:
    rows, cols, u, v = frustum_cells(gmap, intr, pose)
    geom = gmap.geometry
    cam = pose.translation
    cr, cc, _ = cell_indices(geom, cam[None, :2])
    x0, y0 = geom.origin
    elev = np.ascontiguousarray(gmap["elevation"])
    valid = np.ascontiguousarray(gmap.valid_mask)
    ok = np.zeros(len(rows), dtype=np.bool_)

    def run(a, b):
        _ray_clear(
            elev, valid, rows[a:b], cols[a:b], int(cr[0]), int(cc[0]),
            float(cam[0]), float(cam[1]), float(cam[2]),
            float(x0), float(y0), float(geom.resolution), float(eps), ok[a:b],
        )

    if len(rows):
        parallel.map_chunks(run, len(rows), workers)
    return Correspondences(rows, cols, u, v, ok)
