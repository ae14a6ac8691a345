"""Panorama pair blending driven by asymmetric bidirectional optical flow."""
from . import _parallel  # noqa: F401  (must run before numba compiles anything)
from ._parallel import get_threads, set_threads, threads
from .blender import BlendParams, blend_pair, feather_blend
from .blendfield import BlendField, DistanceField, compute_blend, distance_transform
from .errors import (
    ContractError,
    EmptyRegionError,
    FlowStitchError,
    ImageFormatError,
    LayoutError,
    NoOverlapError,
    NoTextureError,
)
from .imagecore import (
    ImageBuf,
    Region,
    RegionPartition,
    bilinear_sample,
    compute_partition,
    crop_overlap,
    load_image,
    save_image,
)
from .optflow import (
    FlowField,
    FlowParams,
    bidirectional_flow,
    build_pyramid,
    dense_pyr_lk,
    flow_magnitude,
    read_flo,
    write_flo,
)
from .pipeline import (
    CanvasLayout,
    StitchReport,
    estimate_translation,
    misalignment_score,
    parse_layout,
    stitch_all,
)

__version__ = "0.1.0"
