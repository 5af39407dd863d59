"""scikit-learn style estimator facade over the training/scoring pipeline."""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator

from .aggregate import GoodConfig, good_aggregate
from .graph import Graph
from .harness import ScorerConfig, ThresholdSpec, apply_threshold, check_compatibility, \
    compute_scores, Task
from .models import BackboneConfig, HeadConfig, TrainConfig, predict_classes, train
from .thresholds import naive_threshold
from .scores import ScoreVector


class GraphOODDetector(BaseEstimator):
    """Graph OOD detector with a fit / score_samples / predict surface.

    ``fit(graph, train_mask)`` trains the backbone+head on the given graph;
    ``score_samples(graph)`` returns per-vertex OOD scores in [0, 1] (after
    neighborhood aggregation when ``alpha_ood > 0``); ``predict(graph)``
    returns +1 for in-distribution and -1 for OOD vertices, following the
    sklearn outlier-detection convention.
    """

    def __init__(self, backbone: str = "gcn", layers: int = 2, hidden_dim: int = 16,
                 dropout_rate: float = 0.5, head: str = "softmax_ce",
                 scorer: str = "msp", temperature: float = 1.0, epsilon: float = 0.0,
                 alpha_ood: float = 0.0, delta: float = 0.5, epochs: int = 200,
                 learning_rate: float = 0.01, seed: int = 0):
        self.backbone = backbone
        self.layers = layers
        self.hidden_dim = hidden_dim
        self.dropout_rate = dropout_rate
        self.head = head
        self.scorer = scorer
        self.temperature = temperature
        self.epsilon = epsilon
        self.alpha_ood = alpha_ood
        self.delta = delta
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.seed = seed

    def _configs(self):
        backbone = BackboneConfig(kind=self.backbone, layers=self.layers,
                                  hidden_dim=self.hidden_dim,
                                  dropout_rate=self.dropout_rate)
        head = HeadConfig(kind=self.head)
        scorer = ScorerConfig(kind=self.scorer, temperature=self.temperature,
                              epsilon=self.epsilon)
        check_compatibility(head, scorer)
        return backbone, head, scorer

    def fit(self, graph: Graph, train_mask: Optional[np.ndarray] = None):
        backbone, head, scorer = self._configs()
        cfg = TrainConfig(epochs=self.epochs, learning_rate=self.learning_rate,
                          seed=self.seed)
        self.state_, self.loss_trace_ = train(graph, backbone, head, cfg, train_mask)
        self.scorer_ = scorer
        return self

    def _check_fitted(self):
        if not hasattr(self, "state_"):
            raise RuntimeError("detector is not fitted; call fit() first")

    def score_samples(self, graph: Graph) -> np.ndarray:
        self._check_fitted()
        scores = compute_scores(self.state_, graph, self.scorer_)
        if self.alpha_ood > 0:
            scores = good_aggregate(graph, scores, GoodConfig(self.alpha_ood))
        return scores.values

    def predict(self, graph: Graph) -> np.ndarray:
        """+1 in-distribution, -1 OOD (score above delta)."""
        self._check_fitted()
        decision = naive_threshold(ScoreVector(self.score_samples(graph)), self.delta)
        return np.where(decision.ood_mask, -1, 1)

    def predict_classes(self, graph: Graph) -> np.ndarray:
        self._check_fitted()
        return predict_classes(self.state_, graph)
