"""Non-neural core of self-supervised multi-view stereo.

Cross-view warping, self-supervision losses with analytic gradients,
asymmetric view selection, region-aware depth-consistency masking via
online cross-view checking, depth-map fusion, a synthetic ground-truth
scene generator, and a gradient-descent depth refiner tying it together.
"""

from .cross_view import (
    CheckConfig,
    DepthGallery,
    QualityMask,
    quality_mask,
    reprojection_errors,
)
from .errors import ContractError, MvsKitError, ParseError, RefinementDiverged
from .fusion import PointCloud, fuse, write_ply
from .geometry import Camera, Pixel, Point3, backproject, project, relative_transform
from .losses import (
    LossReport,
    LossWeights,
    depth_consistency_loss,
    image_gradient,
    photometric_loss,
    smoothness_loss,
    ssim_loss,
    total_loss,
)
from .maps import DepthMap, ImageGrid
from .refine import (
    MemoryReport,
    NoisyGroundTruthTeacher,
    RefineConfig,
    WarpMedianTeacher,
    memory_probe,
    refine_depth,
)
from .synthetic import RigSpec, Scene, SceneSpec, SceneView, render, stereo_pair
from .view_selection import (
    ViewScoreMatrix,
    compute_view_scores,
    sample_by_score,
    select_top_k,
)
from .warping import WarpResult, bilinear_sample, warp_coordinates, warp_image

__version__ = "0.1.0"
