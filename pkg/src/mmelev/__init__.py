"""Robot-centric multi-modal 2.5D elevation mapping."""

__version__ = "0.1.0"

from .association import (
    CellAccumulator,
    Correspondences,
    bin_points,
    bresenham_cells,
    visible_cells,
)
from .fusion import (
    FusionConfig,
    fuse_dirichlet,
    fuse_exponential,
    fuse_gaussian,
    fuse_height,
    fuse_latest,
)
from .grid import (
    CellIndex,
    GridMap,
    Layer,
    MapGeometry,
    cell_center,
    cell_index,
    create_map,
    memory_footprint,
    recenter,
)
from .pipeline import update_from_cloud, update_from_image
from .plugins import PluginSpec, register_plugin, run_plugins
from .sensors import (
    CameraIntrinsics,
    MultiModalImage,
    MultiModalPointCloud,
    Pose,
    TopKClassChannels,
    expand_topk,
    pixel_of_point,
    transform_points,
)
