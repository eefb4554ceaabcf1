"""Student performance prediction on interactive question pools.

Mouse-interaction feature extraction, student-interaction-question graph
construction, a residual relational graph network trained per student, the
feature-only baselines, and a seeded synthetic benchmark.
"""

from .baselines import LogisticRegressionBaseline, MajorityClassBaseline
from .estimators import R2GCNClassifier
from .features import FeatureConfig, FeatureVocab
from .graph import SIQGraph, SnapshotSpec, build_personal_snapshot, edge2node
from .model import ModelConfig
from .synth import SynthConfig, generate
from .training import TrainConfig, run_experiment, train_one

__version__ = "0.1.0"

__all__ = [
    "FeatureConfig",
    "FeatureVocab",
    "LogisticRegressionBaseline",
    "MajorityClassBaseline",
    "ModelConfig",
    "R2GCNClassifier",
    "SIQGraph",
    "SnapshotSpec",
    "SynthConfig",
    "TrainConfig",
    "build_personal_snapshot",
    "edge2node",
    "generate",
    "run_experiment",
    "train_one",
    "__version__",
]
