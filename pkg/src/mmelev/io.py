"""Map, point cloud and image files, plus layer export.

All three binary formats share one layout: ASCII header line, one ASCII
line per layer/channel, then raw little-endian float32 data.

* ``MMEM1 <width> <height> <resolution> <center_x> <center_y> <n_layers>``
  then ``<name> <kind>`` lines; data is layer-major, row-major.
* ``MMPC1 <N> <n_channels>`` then ``<name> <tag> [<group>]`` lines; data
  is one row ``x y z ch...`` per point.
* ``MMIM1 <H> <W> <n_channels> <fx> <fy> <cx> <cy> <R row-major x9> <t x3>``
  then channel lines as for MMPC1; data is channel-major, row-major.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .errors import ParseError, UnknownLayerError
from .grid import CELL_DTYPE, LAYER_KINDS, GridMap, Layer, MapGeometry
from .sensors import CHANNEL_TAGS, CameraIntrinsics, MultiModalImage, MultiModalPointCloud, Pose

LE_F32 = np.dtype("<f4")


def _num(x) -> str:
    return repr(float(x))


def _read_header(f, magic, source):
    line = f.readline().decode("ascii", errors="replace").split()
    if not line or line[0] != magic:
        raise ParseError(f"not a {magic} file", 1, source)
    return line[1:]


def _read_names(f, n, source, first_line, min_fields, max_fields):
    entries = []
    for i in range(n):
        parts = f.readline().decode("ascii", errors="replace").split()
        if not (min_fields <= len(parts) <= max_fields):
            raise ParseError(f"bad entry line {parts!r}", first_line + i, source)
        entries.append(parts)
    return entries


def _read_data(f, count, source):
    raw = f.read()
    need = count * LE_F32.itemsize
    if len(raw) != need:
        raise ParseError(f"expected {need} data bytes, found {len(raw)}", None, source)
    return np.frombuffer(raw, dtype=LE_F32)


def write_map(gmap: GridMap, path) -> None:
    g = gmap.geometry
    header = (f"MMEM1 {g.width_cells} {g.height_cells} {_num(g.resolution)} "
              f"{_num(g.center[0])} {_num(g.center[1])} {len(gmap.layers)}\n")
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        for layer in gmap.layers.values():
            f.write(f"{layer.name} {layer.kind}\n".encode("ascii"))
        for layer in gmap.layers.values():
            f.write(np.ascontiguousarray(layer.values, dtype=LE_F32).tobytes())


def read_map(path) -> GridMap:
    source = str(path)
    with open(path, "rb") as f:
        fields = _read_header(f, "MMEM1", source)
        try:
            w, h, res, cx, cy, n = fields
            geom = MapGeometry(float(res), int(w), int(h), (float(cx), float(cy)))
            n = int(n)
        except (ValueError, TypeError) as e:
            raise ParseError(f"bad MMEM1 header: {e}", 1, source) from None
        entries = _read_names(f, n, source, 2, 2, 2)
        data = _read_data(f, n * geom.n_cells, source)
    gmap = GridMap(geom)
    for k, (name, kind) in enumerate(entries):
        if kind not in LAYER_KINDS:
            raise ParseError(f"unknown layer kind {kind!r}", 2 + k, source)
        if name in gmap.layers:
            raise ParseError(f"duplicate layer {name!r}", 2 + k, source)
        vals = data[k * geom.n_cells : (k + 1) * geom.n_cells].astype(CELL_DTYPE).reshape(geom.shape)
        gmap.layers[name] = Layer(name, vals, kind)
    return gmap


def _channel_lines(names, tags, groups):
    member = {m: g for g, ms in groups.items() for m in ms}
    lines = []
    for name in names:
        parts = [name, tags.get(name, "raw")]
        if name in member:
            parts.append(member[name])
        lines.append(" ".join(parts) + "\n")
    return lines


def _parse_channel_entries(entries, source, first_line):
    names, tags, groups = [], {}, {}
    for i, parts in enumerate(entries):
        name, tag = parts[0], parts[1]
        if tag not in CHANNEL_TAGS:
            raise ParseError(f"unknown channel tag {tag!r}", first_line + i, source)
        names.append(name)
        tags[name] = tag
        if len(parts) == 3:
            groups.setdefault(parts[2], []).append(name)
    return names, tags, groups


def write_cloud(cloud: MultiModalPointCloud, path) -> None:
    names = cloud.channel_names
    with open(path, "wb") as f:
        f.write(f"MMPC1 {len(cloud)} {len(names)}\n".encode("ascii"))
        for line in _channel_lines(names, cloud.tags, cloud.groups):
            f.write(line.encode("ascii"))
        rows = np.empty((len(cloud), 3 + len(names)), dtype=LE_F32)
        rows[:, :3] = cloud.points
        for j, name in enumerate(names):
            rows[:, 3 + j] = cloud.channels[name]
        f.write(rows.tobytes())


def read_cloud(path) -> MultiModalPointCloud:
    source = str(path)
    with open(path, "rb") as f:
        fields = _read_header(f, "MMPC1", source)
        try:
            n, c = (int(x) for x in fields)
        except ValueError:
            raise ParseError("bad MMPC1 header", 1, source) from None
        names, tags, groups = _parse_channel_entries(_read_names(f, c, source, 2, 2, 3), source, 2)
        data = _read_data(f, n * (3 + c), source).reshape(n, 3 + c)
    channels = {name: data[:, 3 + j].copy() for j, name in enumerate(names)}
    return MultiModalPointCloud(data[:, :3].astype(np.float64), channels, tags, groups)


def write_image(image: MultiModalImage, path) -> None:
    intr, pose = image.intrinsics, image.pose
    names = image.channel_names
    nums = [intr.fx, intr.fy, intr.cx, intr.cy, *pose.rotation.ravel(), *pose.translation]
    header = f"MMIM1 {intr.height} {intr.width} {len(names)} " + " ".join(_num(x) for x in nums) + "\n"
    with open(path, "wb") as f:
        f.write(header.encode("ascii"))
        for line in _channel_lines(names, image.tags, image.groups):
            f.write(line.encode("ascii"))
        for name in names:
            f.write(np.ascontiguousarray(image.channels[name], dtype=LE_F32).tobytes())


def read_image(path) -> MultiModalImage:
    source = str(path)
    with open(path, "rb") as f:
        fields = _read_header(f, "MMIM1", source)
        if len(fields) != 3 + 4 + 12:
            raise ParseError("bad MMIM1 header", 1, source)
        try:
            h, w, c = (int(x) for x in fields[:3])
            nums = [float(x) for x in fields[3:]]
        except ValueError:
            raise ParseError("bad MMIM1 header", 1, source) from None
        names, tags, groups = _parse_channel_entries(_read_names(f, c, source, 2, 2, 3), source, 2)
        data = _read_data(f, c * h * w, source).reshape(c, h, w)
    intr = CameraIntrinsics(nums[0], nums[1], nums[2], nums[3], w, h)
    pose = Pose(np.array(nums[4:13]).reshape(3, 3), nums[13:16])
    channels = {name: data[j].copy() for j, name in enumerate(names)}
    return MultiModalImage(channels, intr, pose, tags, groups)


def _layer(gmap: GridMap, name: str) -> np.ndarray:
    if name not in gmap:
        raise UnknownLayerError(f"unknown layer {name!r}; available: {', '.join(gmap.layer_names)}")
    return gmap[name]


def export_csv(gmap: GridMap, layer: str, path) -> None:
    """Long-format ``row,col,value`` in row-major order; invalid cells are empty."""
    values = _layer(gmap, layer)
    valid = gmap.valid_mask
    n_rows, n_cols = values.shape
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["row", "col", layer])
        for r in range(n_rows):
            for c in range(n_cols):
                w.writerow([r, c, repr(float(values[r, c])) if valid[r, c] else ""])


def import_csv(path, shape, fill: float = np.nan) -> np.ndarray:
    """Read a layer written by :func:`export_csv`; empty cells become ``fill``."""
    out = np.full(shape, fill, dtype=CELL_DTYPE)
    with open(path, newline="") as f:
        reader = csv.reader(f)
        next(reader)
        for lineno, row in enumerate(reader, start=2):
            try:
                r, c, v = int(row[0]), int(row[1]), row[2]
            except (ValueError, IndexError):
                raise ParseError(f"bad CSV row {row!r}", lineno, str(path)) from None
            if v != "":
                out[r, c] = float(v)
    return out


def export_png(gmap: GridMap, layers, path) -> None:
    """8-bit image of one layer (grayscale) or three layers (RGB).

    Each layer is min-max scaled over valid cells; invalid cells are black.
    Rows map to image rows, so +x points down the image.
    """
    from PIL import Image

    names = [layers] if isinstance(layers, str) else list(layers)
    if len(names) not in (1, 3):
        raise ValueError("export needs one layer or three layers for RGB")
    valid = gmap.valid_mask
    planes = []
    for name in names:
        vals = _layer(gmap, name).astype(np.float64)
        out = np.zeros(vals.shape, dtype=np.uint8)
        v = vals[valid]
        if v.size:
            lo, hi = np.nanmin(v), np.nanmax(v)
            scaled = np.zeros_like(v) if hi <= lo else (v - lo) / (hi - lo)
            out[valid] = np.round(scaled * 255).astype(np.uint8)
        planes.append(out)
    if len(planes) == 1:
        Image.fromarray(planes[0]).save(path)
    else:
        Image.fromarray(np.stack(planes, axis=-1)).save(path)
