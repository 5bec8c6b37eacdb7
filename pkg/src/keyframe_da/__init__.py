"""Online keyframe acquisition and teacher/student adaptation for streaming detectors."""
from .acquisition import AcquisitionConfig, AcquisitionDecision, AcquisitionState, RareCategoryMode, Source
from .checkpoint import load_checkpoint, save_checkpoint
from .cluster import ClusterBank, cosine
from .config import EngineConfig, Mode
from .engine import Engine, StepResult
from .errors import (
    CheckpointError,
    ConfigError,
    DataError,
    KeyframeDAError,
    NumericDivergenceError,
    StreamFormatError,
)
from .mean_teacher import KLDirection, TeacherStudentPair, adapt_on_keyframe, ema_step, finalize, kl_alignment_loss
from .stream import Detection, Frame, read_stream, write_stream
from .toy_detector import AugmentConfig, ToyDetector

__version__ = "0.1.0"

__all__ = [
    "AcquisitionConfig", "AcquisitionDecision", "AcquisitionState", "AugmentConfig", "CheckpointError",
    "ClusterBank", "ConfigError", "DataError", "Detection", "Engine", "EngineConfig", "Frame",
    "KLDirection", "KeyframeDAError", "Mode", "NumericDivergenceError", "RareCategoryMode", "Source",
    "StepResult", "StreamFormatError", "TeacherStudentPair", "ToyDetector", "adapt_on_keyframe",
    "cosine", "ema_step", "finalize", "kl_alignment_loss", "load_checkpoint", "read_stream",
    "save_checkpoint", "write_stream",
]
