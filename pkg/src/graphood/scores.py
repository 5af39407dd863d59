"""Per-vertex OOD scores, all oriented 0 = in-distribution, 1 = OOD."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .graph import Graph
from .models import ConfigError, ModelState, forward_backbone, propagation_weights, \
    prototype_distances, run_model


@dataclass(frozen=True)
class ScoreVector:
    """OOD scores in [0, 1], one per scored vertex (1 = OOD)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError("scores must be a vector")
        if v.size and (v.min() < 0.0 or v.max() > 1.0):
            raise ValueError("scores must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    def __len__(self):
        return self.values.shape[0]


@dataclass(frozen=True)
class OdinConfig:
    temperature: float = 1.0
    epsilon: float = 0.0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def score_msp(logits: np.ndarray) -> ScoreVector:
    """1 - maximum softmax probability."""
    return ScoreVector(1.0 - _softmax(np.asarray(logits, dtype=np.float64)).max(axis=1))


def score_gdoc(logits: np.ndarray) -> ScoreVector:
    """1 - maximum sigmoid activation (for sigmoid-BCE heads)."""
    z = np.asarray(logits, dtype=np.float64)
    return ScoreVector(1.0 - (1.0 / (1.0 + np.exp(-z))).max(axis=1))


def score_isomax(embeddings: np.ndarray, prototypes: np.ndarray,
                 score_min: float = 0.0, score_max: float = 2.0) -> ScoreVector:
    """Minimum normalized-prototype distance, min-max mapped to [0, 1].

    score_min/score_max come from the training-set raw scores; values outside
    are clamped.  The map is strictly increasing, so AUROC is unaffected.
    """
    p = np.asarray(prototypes, dtype=np.float64)
    if p.shape[0] == 0:
        raise ValueError("empty prototype set")
    h = np.asarray(embeddings, dtype=np.float64)
    p = p / np.sqrt((p * p).sum(axis=1, keepdims=True) + ad.EPS_NORM)
    h = h / np.sqrt((h * h).sum(axis=1, keepdims=True) + ad.EPS_NORM)
    raw = np.sqrt(((h[:, None, :] - p[None, :, :]) ** 2).sum(axis=2)).min(axis=1)
    span = score_max - score_min
    if span <= 0:
        return ScoreVector((raw > score_max).astype(np.float64))
    return ScoreVector(np.clip((raw - score_min) / span, 0.0, 1.0))


def score_isomax_state(state: ModelState, g: Graph) -> ScoreVector:
    emb, _ = run_model(state, g)
    return score_isomax(emb, state.params["prototypes"],
                        state.iso_score_min, state.iso_score_max)


def _transpose_permutation(offsets: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Index of entry (j, i) for each CSR entry (i, j); requires symmetric structure."""
    rows = np.repeat(np.arange(offsets.shape[0] - 1), np.diff(offsets))
    return np.lexsort((rows, targets))


def score_odin(state: ModelState, g: Graph, cfg: OdinConfig) -> ScoreVector:
    """Temperature-scaled max-softmax after sign-gradient input perturbation.

    Both the feature matrix and the nonzero weights of the model's sparse
    propagation operator are perturbed; adjacency symmetry is preserved by
    symmetrizing the edge gradient before taking the sign.
    """
    if state.head.kind == "isomax_plus":
        raise ConfigError("ODIN operates on softmax logits; IsoMax+ head is incompatible")
    t = cfg.temperature
    adj = propagation_weights(state.backbone, g)

    tape = Tape()
    x = tape.var(g.features, requires_grad=True)
    x.grad = np.zeros_like(x.data)
    vals = None
    if adj is not None:
        vals = tape.var(adj.weights, requires_grad=True)
        vals.grad = np.zeros_like(vals.data)
    _, logits, _ = forward_backbone(tape, state.backbone, state.head, state.params,
                                    x, adj, vals, training=False)
    if cfg.epsilon > 0:
        scaled = ad.scale(logits, 1.0 / t)
        s_y = ad.row_max(ad.row_softmax(scaled))
        ad.backward(tape, ad.sum_all(s_y))
        x_pert = g.features + cfg.epsilon * np.sign(x.grad)
        vals_pert = None
        if vals is not None:
            perm = _transpose_permutation(adj.offsets, adj.targets)
            g_sym = 0.5 * (vals.grad + vals.grad[perm])
            vals_pert = adj.weights + cfg.epsilon * np.sign(g_sym)

        tape2 = Tape()
        x2 = tape2.var(x_pert)
        v2 = tape2.var(vals_pert) if vals_pert is not None else None
        _, logits, _ = forward_backbone(tape2, state.backbone, state.head, state.params,
                                        x2, adj, v2, training=False)
    probs = _softmax(logits.data / t)
    return ScoreVector(1.0 - probs.max(axis=1))


def write_scores_tsv(path, scores: ScoreVector) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for i, s in enumerate(scores.values):
            f.write(f"{i}\t{s:.6f}\n")
