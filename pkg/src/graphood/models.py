"""GNN backbones (GCN, GraphSAGE-mean, Graph-MLP), output heads, and training."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var
from .graph import Graph, mean_aggregation_weights, r_hop_mask, symmetric_normalize
from .optim import AdamState, adam_step

log = logging.getLogger("graphood")

BACKBONES = ("gcn", "sage_mean", "graph_mlp")
HEADS = ("softmax_ce", "sigmoid_bce_weighted", "isomax_plus")


class ConfigError(ValueError):
    pass


@dataclass
class BackboneConfig:
    kind: str = "gcn"
    layers: int = 2
    hidden_dim: int = 16
    dropout_rate: float = 0.5
    # graph_mlp extras
    r: int = 2
    tau: float = 1.0
    beta: float = 1.0
    batch_size: int = 64

    def __post_init__(self):
        if self.kind not in BACKBONES:
            raise ConfigError(f"unknown backbone {self.kind!r}")
        if self.layers < 2:
            raise ConfigError("layers must be >= 2")
        if self.r not in (1, 2, 3):
            raise ConfigError("r must be in {1, 2, 3}")
        if self.tau <= 0 or self.beta < 0:
            raise ConfigError("need tau > 0 and beta >= 0")


@dataclass
class HeadConfig:
    kind: str = "softmax_ce"
    entropic_scale: float = 10.0

    def __post_init__(self):
        if self.kind not in HEADS:
            raise ConfigError(f"unknown head {self.kind!r}")
        if self.entropic_scale < 1:
            raise ConfigError("entropic_scale must be >= 1")


@dataclass
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 0.01
    seed: int = 0
    class_weighting: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")


@dataclass
class ModelState:
    backbone: BackboneConfig
    head: HeadConfig
    params: dict
    known_class_ids: list
    # IsoMax+ score normalization, fitted on the train set
    iso_score_min: float = 0.0
    iso_score_max: float = 2.0

    @property
    def num_known(self) -> int:
        return len(self.known_class_ids)


# ---------------------------------------------------------------------------
# initialization

def _glorot(rng, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def init_params(backbone: BackboneConfig, head: HeadConfig, feature_dim: int,
                num_known: int, rng: np.random.Generator) -> dict:
    params = {}
    L = backbone.layers
    has_output_layer = head.kind != "isomax_plus"
    dims_in = feature_dim
    n_hidden = L - 1 if has_output_layer else L - 1
    for i in range(n_hidden):
        fan_in = dims_in if backbone.kind != "sage_mean" else 2 * dims_in
        params[f"W{i}"] = _glorot(rng, fan_in, backbone.hidden_dim)
        params[f"b{i}"] = np.zeros(backbone.hidden_dim)
        dims_in = backbone.hidden_dim
    if has_output_layer:
        fan_in = dims_in if backbone.kind != "sage_mean" else 2 * dims_in
        params[f"W{n_hidden}"] = _glorot(rng, fan_in, num_known)
        params[f"b{n_hidden}"] = np.zeros(num_known)
    else:
        params["prototypes"] = rng.normal(0.0, 0.01, size=(num_known, backbone.hidden_dim))
        params["dist_scale"] = np.asarray(1.0)
    return params


# ---------------------------------------------------------------------------
# forwards

def propagation_weights(backbone: BackboneConfig, g: Graph):
    """The sparse operator each backbone multiplies with (None for Graph-MLP)."""
    if backbone.kind == "gcn":
        return symmetric_normalize(g)
    if backbone.kind == "sage_mean":
        return mean_aggregation_weights(g)
    return None


def forward_backbone(tape: Tape, backbone: BackboneConfig, head: HeadConfig,
                     params: dict, x: Var, adj=None, adj_values: Optional[Var] = None,
                     rng: Optional[np.random.Generator] = None, training: bool = False):
    """Run a backbone + head, returning (embeddings, logits) as tape Vars.

    ``adj``/``adj_values`` carry the sparse operator from propagation_weights();
    the values are a Var so input gradients (for ODIN) can flow into edges.
    For IsoMax+ heads the logits are -E*d*dist at train time (E=1 otherwise).
    """
    if rng is None:
        rng = np.random.default_rng(0)
    has_output_layer = head.kind != "isomax_plus"
    n_hidden = backbone.layers - 1

    def layer(h: Var, i: int, out_is_logits: bool) -> Var:
        w = tape.var(params[f"W{i}"], requires_grad=True)
        b = tape.var(params[f"b{i}"], requires_grad=True)
        _layer_vars.append((f"W{i}", w))
        _layer_vars.append((f"b{i}", b))
        if backbone.kind == "gcn":
            h = ad.spmm(adj_values, adj.offsets, adj.targets, h, adj.num_vertices)
            h = ad.bias_add(ad.matmul(h, w), b)
        elif backbone.kind == "sage_mean":
            nbr = ad.spmm(adj_values, adj.offsets, adj.targets, h, adj.num_vertices)
            h = ad.bias_add(ad.matmul(ad.concat_cols(h, nbr), w), b)
        else:  # graph_mlp: structure-free forward
            h = ad.bias_add(ad.matmul(h, w), b)
        if out_is_logits:
            return h
        if backbone.kind == "graph_mlp":
            h = ad.layer_norm(ad.relu(h))
        else:
            h = ad.relu(h)
        return ad.dropout(h, backbone.dropout_rate, rng, training)

    _layer_vars: list = []
    h = ad.dropout(x, backbone.dropout_rate, rng, training) if training else x
    emb_pre = None
    for i in range(n_hidden):
        if backbone.kind == "graph_mlp" and i == n_hidden - 1:
            # penultimate linear output, pre-activation: contrastive loss attaches here
            w = tape.var(params[f"W{i}"], requires_grad=True)
            b = tape.var(params[f"b{i}"], requires_grad=True)
            _layer_vars.append((f"W{i}", w))
            _layer_vars.append((f"b{i}", b))
            emb_pre = ad.bias_add(ad.matmul(h, w), b)
            h = ad.dropout(ad.layer_norm(ad.relu(emb_pre)), backbone.dropout_rate, rng, training)
        else:
            h = layer(h, i, out_is_logits=False)
    embeddings = emb_pre if emb_pre is not None else h

    if has_output_layer:
        logits = layer(h, n_hidden, out_is_logits=True)
    else:
        protos = tape.var(params["prototypes"], requires_grad=True)
        dscale = tape.var(params["dist_scale"], requires_grad=True)
        _layer_vars.append(("prototypes", protos))
        _layer_vars.append(("dist_scale", dscale))
        dist = ad.pairwise_distance(ad.l2_normalize_rows(embeddings),
                                    ad.l2_normalize_rows(protos))
        e = head.entropic_scale if training else 1.0
        logits = ad.scale_by(ad.scale(dist, -e), dscale)

    return embeddings, logits, dict(_layer_vars)


def prototype_distances(state: ModelState, embeddings: np.ndarray) -> np.ndarray:
    """Distances between L2-normalized embeddings and normalized prototypes."""
    p = state.params["prototypes"]
    p = p / np.sqrt((p * p).sum(axis=1, keepdims=True) + ad.EPS_NORM)
    h = embeddings / np.sqrt((embeddings * embeddings).sum(axis=1, keepdims=True) + ad.EPS_NORM)
    diff = h[:, None, :] - p[None, :, :]
    return np.sqrt((diff * diff).sum(axis=2))


def run_model(state: ModelState, g: Graph):
    """Inference pass on a graph.  Returns (embeddings, logits) as arrays."""
    tape = Tape()
    adj = propagation_weights(state.backbone, g)
    x = tape.var(g.features)
    vals = tape.var(adj.weights) if adj is not None else None
    emb, logits, _ = forward_backbone(tape, state.backbone, state.head, state.params,
                                      x, adj, vals, training=False)
    return emb.data, logits.data


def predict_classes(state: ModelState, g: Graph) -> np.ndarray:
    """Predicted class id (from the known-class set) per vertex."""
    emb, logits = run_model(state, g)
    if state.head.kind == "isomax_plus":
        idx = prototype_distances(state, emb).argmin(axis=1)
    elif state.head.kind == "sigmoid_bce_weighted":
        idx = logits.argmax(axis=1)
    else:
        idx = logits.argmax(axis=1)
    known = np.asarray(state.known_class_ids)
    return known[idx]


# ---------------------------------------------------------------------------
# losses

def _mask_indices(mask, n) -> np.ndarray:
    mask = np.asarray(mask)
    idx = np.flatnonzero(mask) if mask.dtype == bool else mask.astype(np.int64)
    if idx.size == 0:
        raise ConfigError("empty train mask")
    if idx.size and idx.max() >= n:
        raise ConfigError("mask index out of range")
    return idx


def loss_softmax_ce(logits: Var, labels: np.ndarray, mask) -> Var:
    """Mean negative log-softmax of the true class over masked vertices."""
    idx = _mask_indices(mask, logits.data.shape[0])
    lsm = ad.row_log_softmax(logits)
    picked = ad.gather_entries(lsm, idx, np.asarray(labels)[idx])
    return ad.scale(ad.mean_all(picked), -1.0)


def bce_class_weights(labels: np.ndarray, mask, num_known: int) -> np.ndarray:
    """Per-class positive weights (n - n_k+) / n on the masked train set."""
    idx = _mask_indices(mask, len(labels))
    n = idx.size
    counts = np.bincount(np.asarray(labels)[idx], minlength=num_known).astype(np.float64)
    w = (n - counts) / n
    if (w == 0).any():
        log.warning("bce class weight 0 for class(es) %s (all samples positive)",
                    np.flatnonzero(w == 0).tolist())
    return w


def loss_bce_weighted(logits: Var, labels: np.ndarray, mask,
                      weights: Optional[np.ndarray] = None) -> Var:
    """Class-weighted sigmoid BCE: positive term of class k weighted (n-n_k+)/n."""
    idx = _mask_indices(mask, logits.data.shape[0])
    num_known = logits.data.shape[1]
    if weights is None:
        weights = bce_class_weights(labels, mask, num_known)
    targets = np.zeros((idx.size, num_known))
    targets[np.arange(idx.size), np.asarray(labels)[idx]] = 1.0
    sub = ad.gather_rows(logits, idx)
    per_entry = ad.bce_with_logits(sub, targets, pos_weight=weights)
    return ad.mean_all(ad.row_sum(per_entry))


def loss_isomax(embeddings: Var, prototypes: Var, dist_scale: Var, entropic_scale: float,
                labels: np.ndarray, mask) -> Var:
    """Softmax CE over -E*d*||ĥ - p̂_k|| logits."""
    idx = _mask_indices(mask, embeddings.data.shape[0])
    hhat = ad.l2_normalize_rows(ad.gather_rows(embeddings, idx))
    phat = ad.l2_normalize_rows(prototypes)
    dist = ad.pairwise_distance(hhat, phat)
    logits = ad.scale_by(ad.scale(dist, -entropic_scale), dist_scale)
    lsm = ad.row_log_softmax(logits)
    picked = ad.gather_entries(lsm, np.arange(idx.size), np.asarray(labels)[idx])
    return ad.scale(ad.mean_all(picked), -1.0)


def loss_ncontrast(z: Var, hop_mask, tau: float, batch_indices: np.ndarray) -> Var:
    """Neighborhood-contrastive loss on a batch of penultimate representations.

    Samples without any in-batch neighbor contribute 0.
    """
    batch_indices = np.asarray(batch_indices)
    b = batch_indices.size
    if b < 2:
        raise ConfigError("contrastive batch needs >= 2 samples")
    tape = z.tape
    zb = ad.gather_rows(z, batch_indices)
    sim = ad.cosine_similarity_matrix(zb)
    e = ad.exp(ad.scale(sim, 1.0 / tau))
    offdiag = 1.0 - np.eye(b)
    gamma = hop_mask[batch_indices][:, batch_indices].toarray().astype(np.float64) * offdiag
    den = ad.row_sum(ad.mul(e, tape.constant(offdiag)))
    num = ad.row_sum(ad.mul(e, tape.constant(gamma)))
    valid = (gamma.sum(axis=1) > 0).astype(np.float64)
    # rows without neighbors: shift numerator to 1 so the log is defined, then zero out
    num_safe = ad.add(num, tape.constant(1.0 - valid))
    per = ad.mul(ad.sub(ad.log(den), ad.log(num_safe)), tape.constant(valid))
    return ad.mean_all(per)


# ---------------------------------------------------------------------------
# training

def train(g: Graph, backbone: BackboneConfig, head: HeadConfig, cfg: TrainConfig,
          train_mask=None):
    """Full-batch training.  Returns (ModelState, loss trace).

    Deterministic given cfg.seed: initialization, dropout and the Graph-MLP
    contrastive batch all draw from one seeded generator.
    """
    if train_mask is None:
        train_mask = np.ones(g.num_vertices, dtype=bool)
    idx = _mask_indices(train_mask, g.num_vertices)

    known = sorted(int(c) for c in np.unique(g.labels[idx]))
    label_to_head = {c: i for i, c in enumerate(known)}
    head_labels = np.array([label_to_head.get(int(c), -1) for c in g.labels])
    if (head_labels[idx] < 0).any():
        raise ConfigError("train mask contains labels outside the known classes")

    rng = np.random.default_rng(cfg.seed)
    params = init_params(backbone, head, g.features.shape[1], len(known), rng)
    adj = propagation_weights(backbone, g)
    hop = r_hop_mask(g, backbone.r) if backbone.kind == "graph_mlp" else None
    bce_w = (bce_class_weights(head_labels, train_mask, len(known))
             if head.kind == "sigmoid_bce_weighted" and cfg.class_weighting else
             np.ones(len(known)) if head.kind == "sigmoid_bce_weighted" else None)

    opt = AdamState(learning_rate=cfg.learning_rate)
    trace = []
    for _ in range(cfg.epochs):
        tape = Tape()
        x = tape.var(g.features)
        vals = tape.var(adj.weights) if adj is not None else None
        emb, logits, pvars = forward_backbone(tape, backbone, head, params, x,
                                              adj, vals, rng=rng, training=True)
        if head.kind == "softmax_ce":
            loss = loss_softmax_ce(logits, head_labels, train_mask)
        elif head.kind == "sigmoid_bce_weighted":
            loss = loss_bce_weighted(logits, head_labels, train_mask, weights=bce_w)
        else:
            loss = loss_isomax(emb, pvars["prototypes"], pvars["dist_scale"],
                               head.entropic_scale, head_labels, train_mask)
        if backbone.kind == "graph_mlp" and backbone.beta > 0:
            bsz = min(backbone.batch_size, idx.size)
            batch = rng.choice(idx, size=bsz, replace=False)
            loss = ad.add(loss, ad.scale(loss_ncontrast(emb, hop, backbone.tau, batch),
                                         backbone.beta))
        ad.backward(tape, loss)
        grads = {name: v.grad if v.grad is not None else np.zeros_like(v.data)
                 for name, v in pvars.items()}
        adam_step(opt, params, grads)
        trace.append(float(loss.data))

    state = ModelState(backbone=backbone, head=head, params=params,
                       known_class_ids=known)
    if head.kind == "isomax_plus":
        emb, _ = run_model(state, g)
        raw = prototype_distances(state, emb[idx]).min(axis=1)
        state.iso_score_min = float(raw.min())
        state.iso_score_max = float(raw.max())
    return state, trace
