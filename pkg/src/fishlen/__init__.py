"""Fish length measurement from instance masks on a calibrated conveyor belt."""

from .dataset_io import DatasetIndex, Regime, SplitConfig, load_dataset, load_predictions, select
from .evallen import aggregation_curve, length_report, match_lengths
from .evalseg import evaluate_segmentation
from .geometry import CameraModel, Homography, calibrate_planar, estimate_homography, pixel_to_belt
from .length_skl import LengthEstimate, fit_centerline, measure_mask, run_skl
from .maskops import BinaryMask, convex_hull, principal_axis, rasterize, skeletonize

__all__ = [
    "BinaryMask",
    "CameraModel",
    "DatasetIndex",
    "Homography",
    "LengthEstimate",
    "Regime",
    "SplitConfig",
    "aggregation_curve",
    "calibrate_planar",
    "convex_hull",
    "estimate_homography",
    "evaluate_segmentation",
    "fit_centerline",
    "length_report",
    "load_dataset",
    "load_predictions",
    "match_lengths",
    "measure_mask",
    "pixel_to_belt",
    "principal_axis",
    "rasterize",
    "run_skl",
    "select",
    "skeletonize",
]
