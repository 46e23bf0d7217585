"""Adaptive anomaly detection for fixed-camera video.

Dense optical flow is pooled into 4x4 cells whose motion history is kept as
streaming statistics; observations outside a k-sigma window, optionally
fused with rare object classes from an external detector, mark a cell and
its frame as anomalous.
"""
from .detector import AnomalyMap, DetectorConfig, Label, detect_frame
from .errors import (
    AADError,
    ConfigError,
    FormatError,
    InsufficientDataError,
    InputError,
    InvariantError,
    LengthError,
    NoHistoryError,
    ParseError,
    RangeError,
    ShapeError,
    StateError,
)
from .evaluation import RocPoint, auc, confusion, roc_sweep
from .fields import FlowField, FrameBuffer
from .motion_stats import CellStats, StatsGrid, update_grid
from .object_map import DetectionRecord, ObjectMap
from .optical_flow import FlowParams, farneback_flow
from .pipeline import run_frames
from .pooling import BlockFlowGrid, pool_flow
from .synthetic import Intruder, SceneSpec, render_sequence

__version__ = "0.1.0"
