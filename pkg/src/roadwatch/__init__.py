"""Batch detection of stalled-vehicle and crash anomalies in fixed-camera
traffic video, scored with the S4 temporal metric."""

from .background import BACKEND as MOG_BACKEND
from .config import PipelineConfig, load_config
from .imops import BoundingBox, GrayFrame, ScoredBox
from .pipeline import process_video, run_pipeline
from .postproc import AnomalyEvent
from .scoring import EvalReport, GroundTruthEvent, PredictionEvent, evaluate

__version__ = "0.1.0"

__all__ = [
    "MOG_BACKEND", "PipelineConfig", "load_config", "BoundingBox", "GrayFrame",
    "ScoredBox", "process_video", "run_pipeline", "AnomalyEvent", "EvalReport",
    "GroundTruthEvent", "PredictionEvent", "evaluate", "__version__",
]
