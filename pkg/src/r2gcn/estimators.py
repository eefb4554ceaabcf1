"""Scikit-learn style front door for the graph model.

The classifier is transductive: ``fit`` consumes one student's SIQ graph
(labels and masks included) and ``predict`` scores question nodes of a
graph with the trained parameters. Constructor arguments follow sklearn
conventions, so ``get_params``/``set_params``/``clone`` work as usual.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import metrics
from .graph import SIQGraph
from .model import ModelConfig, forward, logits_to_levels, wiring_for
from .training import TrainConfig, train_one


class R2GCNClassifier(BaseEstimator):
    """Residual relational graph classifier over the four score levels."""

    def __init__(
        self,
        hidden: int = 128,
        readout_hidden: int = 128,
        num_layers: int = 3,
        variant: str = "r2gcn",
        lr: float = 1e-4,
        weight_decay: float = 1e-2,
        max_epochs: int = 400,
        patience: int = 100,
        seed: int = 0,
        label_fraction: float = 1.0,
    ):
        self.hidden = hidden
        self.readout_hidden = readout_hidden
        self.num_layers = num_layers
        self.variant = variant
        self.lr = lr
        self.weight_decay = weight_decay
        self.max_epochs = max_epochs
        self.patience = patience
        self.seed = seed
        self.label_fraction = label_fraction

    def _model_config(self) -> ModelConfig:
        return ModelConfig(
            hidden=self.hidden,
            readout_hidden=self.readout_hidden,
            num_layers=self.num_layers,
            variant=self.variant,
        )

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.lr,
            weight_decay=self.weight_decay,
            max_epochs=self.max_epochs,
            patience=self.patience,
            runs=1,
            seed=self.seed,
            label_fraction=self.label_fraction,
        )

    def fit(self, graph: SIQGraph, y=None):
        """Train on the graph's train mask, early-stopping on its val mask."""
        if not isinstance(graph, SIQGraph):
            raise TypeError(f"expected an SIQGraph, got {type(graph).__name__}")
        graph.validate()
        config = self._model_config()
        result = train_one(graph, config, self._train_config())
        self.model_config_ = config
        self.params_ = result.params
        self.best_epoch_ = result.best_epoch
        self.val_acc_ = result.best_val_acc
        self.epochs_run_ = result.epochs_run
        return self

    def _logits(self, graph: SIQGraph) -> np.ndarray:
        check_is_fitted(self)
        wiring = wiring_for(graph, self.model_config_.variant)
        return forward(wiring, self.params_, self.model_config_).data

    def predict(self, graph: SIQGraph, nodes: np.ndarray | None = None) -> np.ndarray:
        """Predicted score level per question node (all questions by default)."""
        logits = self._logits(graph)
        if nodes is not None:
            logits = logits[np.asarray(nodes, dtype=np.intp)]
        return logits_to_levels(logits)

    def predict_proba(self, graph: SIQGraph, nodes: np.ndarray | None = None) -> np.ndarray:
        logits = self._logits(graph)
        if nodes is not None:
            logits = logits[np.asarray(nodes, dtype=np.intp)]
        shifted = np.exp(logits - logits.max(axis=1, keepdims=True))
        return shifted / shifted.sum(axis=1, keepdims=True)

    def score(self, graph: SIQGraph, nodes: np.ndarray | None = None) -> float:
        """Accuracy on the given labeled nodes (the graph's test mask by default)."""
        if nodes is None:
            nodes = graph.test_nodes
        nodes = np.asarray(nodes, dtype=np.intp)
        labels = graph.labels[nodes]
        if np.any(labels < 0):
            raise ValueError("score() needs labeled nodes")
        return metrics.accuracy(labels, self.predict(graph, nodes))
