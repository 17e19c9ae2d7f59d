"""Motion-boundary action region proposals and scene-conditioned abnormality detection."""
from .abnormality import (AbnormalityDecision, AbnormalityDetector, ColorHistogramSceneClassifier,
                          ScenePrior, ScenePriorTable, abd_decision, evaluate_abnormality,
                          learn_scene_prior, posterior_action_given_scene)
from .classifier import Distribution, LinearActionClassifier, describe_region
from .detector import MotionBoundaryDetector
from .exceptions import (ActionRegionError, DataError, DimensionMismatchError, FormatError,
                         NumericalError, ProviderError)
from .features import assemble_feature_stack
from .flow import FlowParams, estimate_flow, estimate_flow_pair
from .forest import BoundaryForest, ForestParams
from .io import BoxProposal, SequenceManifest
from .pipeline import Pipeline, PipelineConfig, run_pipeline
from .proposals import ActionRegionProposer, ProposalParams, nms, propose

__version__ = "0.1.0"

__all__ = [
    "AbnormalityDecision", "AbnormalityDetector", "ActionRegionError", "ActionRegionProposer",
    "BoundaryForest", "BoxProposal", "ColorHistogramSceneClassifier", "DataError",
    "DimensionMismatchError", "Distribution", "FlowParams", "ForestParams", "FormatError",
    "LinearActionClassifier", "MotionBoundaryDetector", "NumericalError", "Pipeline",
    "PipelineConfig", "ProposalParams", "ProviderError", "ScenePrior", "ScenePriorTable",
    "SequenceManifest", "abd_decision", "assemble_feature_stack", "describe_region",
    "estimate_flow", "estimate_flow_pair", "evaluate_abnormality", "learn_scene_prior", "nms",
    "posterior_action_given_scene", "propose", "run_pipeline",
]
