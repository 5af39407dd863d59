"""From scores to crisp OOD decisions: naive, gDOC, OpenWGL-style, and Open-WRF."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .graph import Graph
from .models import BackboneConfig, HeadConfig, forward_backbone, init_params, \
    propagation_weights
from .optim import AdamState, adam_step
from .scores import ScoreVector

log = logging.getLogger("graphood")

FEATURE_MODES = ("features+score", "features", "score")


class ThresholdError(ValueError):
    pass


@dataclass(frozen=True)
class ThresholdDecision:
    ood_mask: np.ndarray
    thresholds_used: Union[float, np.ndarray]
    method: str


@dataclass
class OpenWrfConfig:
    q: float = 0.1
    hidden_dim: int = 16
    epochs: int = 200
    learning_rate: float = 0.01
    dropout_rate: float = 0.5
    seed: int = 0
    class_weighting: bool = True
    feature_mode: str = "features+score"

    def __post_init__(self):
        if not 0.0 < self.q < 1.0:
            raise ThresholdError("q must be in (0, 1)")
        if self.feature_mode not in FEATURE_MODES:
            raise ThresholdError(f"feature_mode must be one of {FEATURE_MODES}")


def naive_threshold(scores: ScoreVector, delta: float) -> ThresholdDecision:
    """OOD iff S(x) > delta."""
    if not 0.0 <= delta <= 1.0:
        raise ThresholdError("delta must be in [0, 1]")
    return ThresholdDecision(scores.values > delta, delta, "naive")


def gdoc_thresholds(sigmoid_outputs: np.ndarray, labels: np.ndarray,
                    alpha_doc: float = 3.0, delta_min: float = 0.1) -> np.ndarray:
    """Per-class risk-reduction thresholds from a mirrored Gaussian fit.

    For class k the sigmoid outputs y of its training vertices are mirrored
    around 1 ({y} union {2 - y}); delta_k = max(delta_min, 1 - alpha_doc * sigma_k)
    with sigma_k the population standard deviation of the mirrored sample.
    """
    outputs = np.asarray(sigmoid_outputs, dtype=np.float64)
    labels = np.asarray(labels)
    num_classes = outputs.shape[1]
    deltas = np.empty(num_classes)
    for k in range(num_classes):
        y = outputs[labels == k, k]
        if y.size == 0:
            log.warning("gdoc: class %d has no training vertices, using delta_min", k)
            deltas[k] = delta_min
            continue
        mirrored = np.concatenate([y, 2.0 - y])
        sigma = float(mirrored.std())  # population std; mirrored mean is exactly 1
        deltas[k] = max(delta_min, 1.0 - alpha_doc * sigma)
    return deltas


def gdoc_decide(sigmoid_outputs: np.ndarray, per_class_thresholds: np.ndarray):
    """OOD iff every class output falls below its threshold.

    Returns (ThresholdDecision, predicted class index per vertex).
    """
    outputs = np.asarray(sigmoid_outputs, dtype=np.float64)
    deltas = np.asarray(per_class_thresholds, dtype=np.float64)
    ood = (outputs < deltas[None, :]).all(axis=1)
    preds = outputs.argmax(axis=1)
    return ThresholdDecision(ood, deltas, "gdoc"), preds


def openwgl_threshold(prob_matrix: np.ndarray) -> float:
    """Average of the mean max-probability over all samples and over the
    ceil(10%) samples with the largest prediction entropy."""
    p = np.asarray(prob_matrix, dtype=np.float64)
    n = p.shape[0]
    if n < 10:
        raise ThresholdError("openwgl threshold needs at least 10 samples")
    maxp = p.max(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0, p * np.log(p), 0.0)
    entropy = -plogp.sum(axis=1)
    k = int(np.ceil(0.1 * n))
    order = np.lexsort((np.arange(n), -entropy))  # entropy desc, ties by vertex id
    top = order[:k]
    return float((maxp.mean() + maxp[top].mean()) / 2.0)


def openwgl_decide(prob_matrix: np.ndarray) -> ThresholdDecision:
    """OOD iff max-probability is strictly below the OpenWGL threshold."""
    delta = openwgl_threshold(prob_matrix)
    maxp = np.asarray(prob_matrix, dtype=np.float64).max(axis=1)
    return ThresholdDecision(maxp < delta, delta, "openwgl")


def wrf_pseudo_labels(scores: ScoreVector, q: float) -> np.ndarray:
    """Top-q fraction by score labeled 1 (OOD), rest 0; ties broken by vertex id."""
    n = len(scores)
    order = np.lexsort((np.arange(n), scores.values))  # ascending, stable in id
    cut = int(np.floor(n * (1.0 - q)))
    pseudo = np.zeros(n, dtype=np.int64)
    pseudo[order[cut:]] = 1
    if pseudo.sum() == 0:
        raise ThresholdError("q yields zero pseudo-OOD vertices; increase q or add data")
    return pseudo


def open_wrf(g: Graph, scores: ScoreVector, cfg: OpenWrfConfig) -> ThresholdDecision:
    """Weakly-supervised relevance feedback.

    Pseudo-labels the top-q score fraction as OOD, trains a 2-layer GCN on the
    graph with class-weighted BCE, and returns its decisions (output > 0.5).
    """
    if len(scores) != g.num_vertices:
        raise ThresholdError("scores must cover all graph vertices")
    pseudo = wrf_pseudo_labels(scores, cfg.q)

    if cfg.feature_mode == "features+score":
        feats = np.hstack([g.features, scores.values[:, None]])
    elif cfg.feature_mode == "features":
        feats = g.features
    else:
        feats = scores.values[:, None]

    n = g.num_vertices
    n_pos = int(pseudo.sum())
    if cfg.class_weighting:
        pos_w = np.array([(n - n_pos) / n])
        neg_w = np.array([n_pos / n])
    else:
        pos_w = np.array([1.0])
        neg_w = np.array([1.0])

    backbone = BackboneConfig(kind="gcn", layers=2, hidden_dim=cfg.hidden_dim,
                              dropout_rate=cfg.dropout_rate)
    head = HeadConfig(kind="sigmoid_bce_weighted")
    rng = np.random.default_rng(cfg.seed)
    params = init_params(backbone, head, feats.shape[1], 1, rng)
    adj = propagation_weights(backbone, g)
    targets = pseudo[:, None].astype(np.float64)

    opt = AdamState(learning_rate=cfg.learning_rate)
    for _ in range(cfg.epochs):
        tape = Tape()
        x = tape.var(feats)
        vals = tape.var(adj.weights)
        _, logits, pvars = forward_backbone(tape, backbone, head, params, x, adj, vals,
                                            rng=rng, training=True)
        per = ad.bce_with_logits(logits, targets, pos_weight=pos_w, neg_weight=neg_w)
        ad.backward(tape, ad.mean_all(per))
        grads = {name: v.grad if v.grad is not None else np.zeros_like(v.data)
                 for name, v in pvars.items()}
        adam_step(opt, params, grads)

    tape = Tape()
    x = tape.var(feats)
    vals = tape.var(adj.weights)
    _, logits, _ = forward_backbone(tape, backbone, head, params, x, adj, vals,
                                    training=False)
    prob = 1.0 / (1.0 + np.exp(-logits.data[:, 0]))
    return ThresholdDecision(prob > 0.5, 0.5, "open_wrf")


def write_decisions_tsv(path, scores: ScoreVector, decision: ThresholdDecision) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for i, (s, d) in enumerate(zip(scores.values, decision.ood_mask)):
            f.write(f"{i}\t{s:.6f}\t{int(d)}\n")
