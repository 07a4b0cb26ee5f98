"""Desk-scale RGB-D teacher / RGB student transformer feature matching."""

from deskmatch._version import __version__
from deskmatch.config import (
    EvalConfig,
    LossWeights,
    MatcherConfig,
    RunConfig,
    SceneConfig,
    TrainConfig,
)
from deskmatch.errors import DeskmatchError
from deskmatch.evaluation import eval_homography, eval_pose, mma, param_count
from deskmatch.model import Matcher, load_checkpoint, save_checkpoint
from deskmatch.protocol import PairSource
from deskmatch.reports import EvalReport, RunManifest, TrainLogEntry
from deskmatch.training import train_baseline, train_student, train_teacher

__all__ = [
    "__version__",
    "DeskmatchError",
    "EvalConfig",
    "EvalReport",
    "LossWeights",
    "Matcher",
    "MatcherConfig",
    "PairSource",
    "RunConfig",
    "RunManifest",
    "SceneConfig",
    "TrainConfig",
    "TrainLogEntry",
    "eval_homography",
    "eval_pose",
    "load_checkpoint",
    "mma",
    "param_count",
    "save_checkpoint",
    "train_baseline",
    "train_student",
    "train_teacher",
]
