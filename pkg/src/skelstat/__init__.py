"""Statistical shape analysis of discrete skeletal representations (ds-reps)."""
from .dsrep import (DsRepError, FrameHierarchy, GpDsRep, GridLayout, LpDsRep, NodeRole, SpokeKind,
                    gp_size, load_gp, load_lp, lp_size, pre_shape, save_gp, save_lp, scale_lp)
from .experiment import ReplicationResult, run_replication
from .frames import build_hierarchy, estimate_normals, fit_frames
from .inference import run_study
from .population import LpPopulation, frame_mean, gpa_align, lp_distance, mean_lp
from .reparam import gp_to_lp, lp_to_gp
from .simulation import (DeformSpec, NoiseSpec, StudyConfig, build_study, ellipsoid_template,
                         perturb_lp, rotate_frames, study_template)

__version__ = "0.1.0"

__all__ = [
    "DsRepError", "FrameHierarchy", "GpDsRep", "GridLayout", "LpDsRep", "NodeRole", "SpokeKind",
    "gp_size", "load_gp", "load_lp", "lp_size", "pre_shape", "save_gp", "save_lp", "scale_lp",
    "ReplicationResult", "run_replication", "build_hierarchy", "estimate_normals", "fit_frames", "run_study", "LpPopulation", "frame_mean",
    "gpa_align", "lp_distance", "mean_lp", "gp_to_lp", "lp_to_gp", "DeformSpec", "NoiseSpec",
    "StudyConfig", "build_study", "ellipsoid_template", "perturb_lp", "rotate_frames",
    "study_template",
]
