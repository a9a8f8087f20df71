"""crowdloc: globally consistent 3D crowd localization from 2D annotations.

The package reconstructs absolute 3D positions of people in a large-scene
pinhole camera frame from 2D labels alone: it solves an adaptive crop layout,
calibrates the scene camera and ground plane from standing pedestrians, lifts
per-person torso/ground-point pixels to 3D, merges duplicates across
overlapping crops, and evaluates crowd-distribution metrics against ground
truth. A seeded synthetic-scene generator provides the oracle for all of it.
"""

__version__ = "0.1.0"

from .calibration import (CalibrationOptions, CalibrationResult, StandingObservation,
                          calibrate, calibration_loss, predict_shoulder, select_standing)
from .cropping import (CropLayout, CropParams, Patch, cropping_score, estimate_crop_params,
                       generate_patches, local_to_global, solve_layout, uniform_layout)
from .geometry import (CameraIntrinsics, GroundPlane, ground_intersect, offset_plane,
                       project, signed_distance, vanishing_point)
from .localization import (LocatedPerson, PersonObservation, conditioning,
                           ground_normal_loss, locate, out_of_bound_loss, place_body,
                           resolve_hvip_pixel)
from .merging import MergeConfig, match_duplicates, merge, merge_duplicates
from .metrics import MatchedCrowd, match_instances, oks, pa_ppds, pcod, ppds, procrustes_align
from .pipeline import SceneConfig, run_pipeline
from .simulate import SceneSpec, generate, render_annotations

__all__ = [
    "__version__",
    # geometry
    "CameraIntrinsics", "GroundPlane", "project", "ground_intersect",
    "signed_distance", "vanishing_point", "offset_plane",
    # cropping
    "CropParams", "CropLayout", "Patch", "solve_layout", "generate_patches",
    "uniform_layout", "local_to_global", "cropping_score", "estimate_crop_params",
    # calibration
    "StandingObservation", "CalibrationOptions", "CalibrationResult",
    "select_standing", "predict_shoulder", "calibration_loss", "calibrate",
    # localization
    "PersonObservation", "LocatedPerson", "resolve_hvip_pixel", "locate",
    "place_body", "ground_normal_loss", "out_of_bound_loss", "conditioning",
    # merging
    "MergeConfig", "match_duplicates", "merge", "merge_duplicates",
    # metrics
    "MatchedCrowd", "ppds", "pa_ppds", "pcod", "oks", "procrustes_align",
    "match_instances",
    # pipeline + simulator
    "SceneConfig", "run_pipeline", "SceneSpec", "generate", "render_annotations",
]
