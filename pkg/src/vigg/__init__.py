"""
vigg | Copyright (c) The vigg developers
"""
from .bench import EvalThresholds, MetricsReport, Suite, compute_metrics, run_ablation  # noqa
from .config import PipelineConfig, resolve_config  # noqa
from .exceptions import *  # noqa
from .features import DescriptorParams, FeatureSet, describe, global_feature_match  # noqa
from .geometry import (  # noqa
    CorrespondenceSet,
    PointCloud,
    Provenance,
    RigidTransform,
    fit_weighted,
    rotation_error,
    translation_error,
    voxel_downsample,
)
from .gvca import gvca_estimate  # noqa
from .pipeline import RegistrationResult, Status, register  # noqa
from .synth import SceneSpec, generate_scene  # noqa
from .vgm import vgm_extract  # noqa


__version__ = "0.5"
