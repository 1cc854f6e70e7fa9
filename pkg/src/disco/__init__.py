"""Distribution-aware calibration of noisy bounding-box supervision.

The core models the spatial distribution of the proposals assigned to a
noisy ground truth (temperature-softmax weights over classification
scores, weighted 4-D diagonal Gaussian), then calibrates supervision
from it: Gaussian proposal augmentation with a best-score loss,
score-gated fusion of the noisy box toward the modeled mean, and
variance-supervised confidence estimation feeding a variance-aware
suppression variant. A synthetic harness with an analytic surrogate
detection head exercises the whole loop end to end; a FastAPI service
and a thin CLI wrap it.
"""

__version__ = "0.1.0"

from disco.distribution import (
    ProposalGroup,
    SpatialDistribution,
    model_distribution,
    softmax_weights,
    weighted_mean,
    weighted_std,
)
from disco.estimation import Detection, LinearEstimator, softer_nms, standard_nms
from disco.experiment import (
    ExperimentConfig,
    ExperimentReport,
    TrialReport,
    run_experiment,
    run_trial,
    sweep_experiment,
)
from disco.noise import AnnotationRecord, NoiseConfig, perturb_box, perturb_dataset
from disco.pipeline import assign_proposals, run_disco_iteration
from disco.surrogate import Scene, SurrogateHeadConfig, generate_scene

__all__ = [
    "AnnotationRecord",
    "Detection",
    "ExperimentConfig",
    "ExperimentReport",
    "LinearEstimator",
    "NoiseConfig",
    "ProposalGroup",
    "Scene",
    "SpatialDistribution",
    "SurrogateHeadConfig",
    "TrialReport",
    "assign_proposals",
    "generate_scene",
    "model_distribution",
    "perturb_box",
    "perturb_dataset",
    "run_disco_iteration",
    "run_experiment",
    "run_trial",
    "softer_nms",
    "softmax_weights",
    "standard_nms",
    "sweep_experiment",
    "weighted_mean",
    "weighted_std",
]
