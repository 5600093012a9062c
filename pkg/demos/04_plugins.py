"""Post-processing plugins on a ramp, plus a custom plugin.

The ramp scene rises 0.25 m per metre (about 14 degrees). After mapping it, the normals and
traversability plugins run, and a user-registered plugin computes height
above the lowest observed cell.

Run:  python demos/04_plugins.py
"""

from pathlib import Path

import numpy as np

from mmelev.config import load_mapping_config, load_sensor_config
from mmelev.plugins import PluginSpec, register_plugin, run_plugins
from mmelev.scene import load_scene
from mmelev.simulate import simulate

DATA = Path(__file__).parent / "data"

scene = load_scene(DATA / "ramp.scene")
mapping = load_mapping_config(DATA / "ramp_mapping.yaml")
gmap, _ = simulate(scene, load_sensor_config(DATA / "ramp_sensors.yaml"), mapping, steps=3)
run_plugins(gmap, mapping.plugins)  # these are on demand in the config


def height_above_min(inputs, valid, geometry):
    (elev,) = inputs
    low = np.nanmin(np.where(valid, elev, np.nan)) if valid.any() else 0.0
    return [np.where(valid, elev - low, 0.0)]


register_plugin("relative_height", height_above_min, inputs=["elevation"], outputs=["height_above_min"])
run_plugins(gmap, [PluginSpec("relative_height")])

valid = gmap.valid_mask
rows = np.arange(gmap.geometry.height_cells)
for r in rows[::8]:
    cells = valid[r]
    if cells.any():
        # medians, so the ramp's side edges do not dominate the row
        nz = np.median(gmap["normal_z"][r][cells])
        tr = np.median(gmap["traversability"][r][cells])
        h = np.median(gmap["height_above_min"][r][cells])
        print(f"row {r:3d}: height {h:5.2f} m, slope {np.degrees(np.arccos(min(nz, 1.0))):5.1f} deg, "
              f"traversability {tr:.2f}")
