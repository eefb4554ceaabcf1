"""Feature-only baselines over concatenated student/question statistics.

These models never see the interaction graph: each example is the
concatenation of one student's statistical feature vector with one
question's, labelled by the student's first-trial score level. They run on
exactly the same per-student splits and metrics as the graph model.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import metrics
from .autodiff import Tape, backward, constant, cross_entropy, linear
from .graph import SIQGraph
from .optim import ParamSet, adam_step
from .training import StudentRunResult, effective_train_nodes

NUM_CLASSES = 4


def logistic_regression_train(
    X: np.ndarray, y: np.ndarray, lr: float = 0.1, epochs: int = 500, l2: float = 1e-3
) -> tuple[np.ndarray, np.ndarray]:
    """Multinomial logistic regression by full-batch gradient descent.

    Uses the same optimizer core as the graph model (Adam on the cross
    entropy, with the L2 penalty entering through the weight gradient).
    Weights start at zero, so the fit is deterministic. Returns the
    (num_classes, d) weight matrix and the bias vector.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError(f"bad example shapes {X.shape} vs {y.shape}")
    if len(X) == 0:
        raise ValueError("cannot fit on an empty dataset")
    params = ParamSet()
    w = params.add("weight", np.zeros((X.shape[1], NUM_CLASSES)))
    b = params.add("bias", np.zeros(NUM_CLASSES))
    features = constant(X)
    for _ in range(epochs):
        with Tape() as tape:
            loss = cross_entropy(linear(features, w, b), y)
        params.zero_grad()
        backward(loss, tape)
        grads = params.gradients()
        grads["weight"] = grads["weight"] + l2 * w.data
        adam_step(params, grads, lr=lr)
    return w.data.T.copy(), b.data.copy()


class LogisticRegressionBaseline(BaseEstimator, ClassifierMixin):
    """Linear classifier over the four score levels; ties predict the lowest."""

    def __init__(self, lr: float = 0.1, epochs: int = 500, l2: float = 1e-3):
        self.lr = lr
        self.epochs = epochs
        self.l2 = l2

    def fit(self, X, y):
        coef, intercept = logistic_regression_train(X, y, self.lr, self.epochs, self.l2)
        self.coef_ = coef
        self.intercept_ = intercept
        self.n_features_in_ = coef.shape[1]
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self)
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got shape {X.shape}")
        return X @ self.coef_.T + self.intercept_

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.decision_function(X), axis=1)

    def predict_proba(self, X) -> np.ndarray:
        scores = self.decision_function(X)
        shifted = np.exp(scores - scores.max(axis=1, keepdims=True))
        return shifted / shifted.sum(axis=1, keepdims=True)


class MajorityClassBaseline(BaseEstimator, ClassifierMixin):
    """Predicts the most frequent training label; ties go to the lowest level."""

    def __init__(self):
        pass

    def fit(self, X, y):
        y = np.asarray(y, dtype=np.int64)
        if len(y) == 0:
            raise ValueError("cannot fit on an empty dataset")
        self.majority_ = int(np.argmax(np.bincount(y, minlength=NUM_CLASSES)))
        return self

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self)
        return np.full(len(X), self.majority_, dtype=np.int64)


def pair_feature_matrix(graph: SIQGraph, student_id: str, question_nodes: np.ndarray) -> np.ndarray:
    """Concatenate the student's stats vector with each question's stats vector.

    The graph's static feature scales are applied, matching the
    conditioning the graph model sees.
    """
    s_idx = graph.students.index(student_id)
    s_row = graph.s_features[s_idx]
    q_rows = graph.q_features[question_nodes]
    if graph.s_scale is not None:
        s_row = s_row / graph.s_scale
    if graph.q_scale is not None:
        q_rows = q_rows / graph.q_scale
    return np.hstack([np.tile(s_row, (len(q_rows), 1)), q_rows])


def run_baseline(
    student_id: str,
    graph: SIQGraph,
    estimator,
    *,
    name: str,
    label_fraction: float = 1.0,
) -> StudentRunResult:
    """Fit on the student's training pairs and score the test mask.

    Reuses the graph's node feature matrices and split masks, so the
    baseline sees exactly the statistical features and splits the graph
    model does.
    """
    train_idx = effective_train_nodes(graph, label_fraction)
    X_train = pair_feature_matrix(graph, student_id, train_idx)
    estimator.fit(X_train, graph.labels[train_idx])
    y_val_pred = estimator.predict(pair_feature_matrix(graph, student_id, graph.val_nodes))
    y_pred = estimator.predict(pair_feature_matrix(graph, student_id, graph.test_nodes))
    y_true = graph.labels[graph.test_nodes]
    return StudentRunResult(
        student_id=student_id,
        run_index=0,
        seed=0,
        variant=name,
        n_train=len(train_idx),
        n_val=len(graph.val_nodes),
        n_test=len(graph.test_nodes),
        best_epoch=0,
        epochs_run=0,
        val_acc=metrics.accuracy(graph.labels[graph.val_nodes], y_val_pred),
        test_acc=metrics.accuracy(y_true, y_pred),
        test_wf1=metrics.weighted_f1(y_true, y_pred),
        y_true=y_true,
        y_pred=np.asarray(y_pred, dtype=np.int64),
    )
