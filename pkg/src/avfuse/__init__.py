"""Audio-visual person verification: recursive joint cross-attention fusion,
temporal pooling, angular-margin training, and trial-based evaluation."""

from avfuse.autodiff import Tape, Tensor
from avfuse.config import TrainConfig
from avfuse.fusion import FusedFeatures, JcaStepParams, RjcaConfig, jca_step, rjca_forward
from avfuse.metrics import DcfParams, ScoreSet, compute_report, eer, min_dcf
from avfuse.model import VerificationModel

__all__ = [
    "DcfParams",
    "FusedFeatures",
    "JcaStepParams",
    "RjcaConfig",
    "ScoreSet",
    "Tape",
    "Tensor",
    "TrainConfig",
    "VerificationModel",
    "compute_report",
    "eer",
    "jca_step",
    "min_dcf",
    "rjca_forward",
]

__version__ = "0.1.0"
