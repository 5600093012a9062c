"""Which map cells can the camera see?

A 2 m wall crosses a flat 10 m x 10 m map. Cells behind the wall project
into the image but are hidden, so they must not receive colour. The
Bresenham ray test marks them; an image painted red is then fused and only
the cells in front of the wall turn red.

Run:  python demos/03_visibility.py
"""

import numpy as np

from mmelev.association import bresenham_cells, visible_cells
from mmelev.fusion import FusionConfig
from mmelev.grid import MapGeometry, create_map
from mmelev.pipeline import update_from_image
from mmelev.sensors import CameraIntrinsics, MultiModalImage, Pose

print("cells crossed between (0, 0) and (3, 7):", [tuple(c) for c in bresenham_cells((0, 0), (3, 7))])

gmap = create_map(MapGeometry(0.04, 250, 250))
gmap["valid"] = 1.0
gmap["elevation"] = 0.0
gmap["elevation"][150, :] = 2.0  # wall at x = 1.02 m

intr = CameraIntrinsics.from_fov(640, 360, 90.0)
pose = Pose.look_at((-2.6, 0.1, 1.0), (3.0, 0.0, 0.0))
corr = visible_cells(gmap, intr, pose, workers=4)
behind = corr.rows > 150
print(f"{len(corr)} cells project into the image; {corr.ray_ok[~behind].sum()} in front of the wall are visible, "
      f"{(~corr.ray_ok[behind]).sum()} of {behind.sum()} behind it are occluded")

red = MultiModalImage({"r": np.ones((360, 640)), "g": np.zeros((360, 640)), "b": np.zeros((360, 640))}, intr, pose)
update_from_image(gmap, red, [FusionConfig("camera", "latest", ["r", "g", "b"])])
painted = gmap["r"] > 0
print(f"after fusing a red image: {painted[:151].sum()} cells up to and including the wall painted, "
      f"{painted[151:].sum()} behind")
