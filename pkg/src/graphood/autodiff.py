"""Reverse-mode autodiff on dense/sparse numpy primitives (float64, tape-based)."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

EPS_NORM = 1e-12


class AutodiffError(ValueError):
    pass


class Var:
    """A tape node holding a value and, after backward(), its gradient."""

    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_fn", "tape")

    def __init__(self, data, tape, requires_grad=False, parents=(), backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self.parents = parents
        self.backward_fn = backward_fn
        self.tape = tape
        tape.nodes.append(self)

    @property
    def shape(self):
        return self.data.shape


class Tape:
    """Ordered record of primitive applications.

    Node creation order is a topological order of the computation graph;
    backward() walks it in exact reverse, so gradient accumulation is
    deterministic.
    """

    def __init__(self):
        self.nodes: list[Var] = []

    def var(self, data, requires_grad=False) -> Var:
        return Var(data, self, requires_grad=requires_grad)

    def constant(self, data) -> Var:
        return Var(data, self)


def _check_finite(out: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(out)):
        raise AutodiffError(f"non-finite output of {op}")
    return out


def _node(tape, data, parents, backward_fn, op):
    return Var(_check_finite(data, op), tape, parents=parents, backward_fn=backward_fn)


def _accum(parent: Var, grad: np.ndarray):
    if parent.grad is None:
        parent.grad = np.zeros_like(parent.data)
    parent.grad += grad


# ---------------------------------------------------------------------------
# primitives

def matmul(a: Var, b: Var) -> Var:
    if a.data.shape[-1] != b.data.shape[0]:
        raise AutodiffError("matmul shape mismatch")
    out_data = a.data @ b.data

    def bwd(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _node(a.tape, out_data, (a, b), bwd, "matmul")


def spmm(values: Var, offsets: np.ndarray, targets: np.ndarray, dense: Var,
         num_rows: int) -> Var:
    """Sparse (CSR) times dense.  Differentiable in the nnz values and the dense factor."""
    mat = sp.csr_matrix((values.data, targets, offsets),
                        shape=(num_rows, dense.data.shape[0]))
    out_data = mat @ dense.data
    rows = np.repeat(np.arange(num_rows), np.diff(offsets))

    def bwd(g):
        _accum(values, np.einsum("ij,ij->i", g[rows], dense.data[targets]))
        gm = sp.csr_matrix((values.data, targets, offsets),
                           shape=(num_rows, dense.data.shape[0]))
        _accum(dense, gm.T @ g)

    return _node(values.tape, out_data, (values, dense), bwd, "spmm")


def add(a: Var, b: Var) -> Var:
    if a.data.shape != b.data.shape:
        raise AutodiffError("add shape mismatch")

    def bwd(g):
        _accum(a, g)
        _accum(b, g)

    return _node(a.tape, a.data + b.data, (a, b), bwd, "add")


def sub(a: Var, b: Var) -> Var:
    if a.data.shape != b.data.shape:
        raise AutodiffError("sub shape mismatch")

    def bwd(g):
        _accum(a, g)
        _accum(b, -g)

    return _node(a.tape, a.data - b.data, (a, b), bwd, "sub")


def mul(a: Var, b: Var) -> Var:
    """Elementwise product (broadcasting not supported; shapes must match)."""
    if a.data.shape != b.data.shape:
        raise AutodiffError("mul shape mismatch")

    def bwd(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _node(a.tape, a.data * b.data, (a, b), bwd, "mul")


def scale(a: Var, c: float) -> Var:
    def bwd(g):
        _accum(a, g * c)

    return _node(a.tape, a.data * c, (a,), bwd, "scale")


def scale_by(a: Var, s: Var) -> Var:
    """Multiply by a scalar Var (for learnable scales)."""
    if s.data.ndim != 0 and s.data.size != 1:
        raise AutodiffError("scale_by expects a scalar")
    sval = float(s.data)

    def bwd(g):
        _accum(a, g * sval)
        _accum(s, np.asarray(np.sum(g * a.data)).reshape(s.data.shape))

    return _node(a.tape, a.data * sval, (a, s), bwd, "scale_by")


def bias_add(a: Var, b: Var) -> Var:
    """Matrix plus row vector."""
    if a.data.shape[-1] != b.data.shape[-1] or b.data.ndim != 1:
        raise AutodiffError("bias_add shape mismatch")

    def bwd(g):
        _accum(a, g)
        _accum(b, g.sum(axis=0))

    return _node(a.tape, a.data + b.data, (a, b), bwd, "bias_add")


def relu(a: Var) -> Var:
    mask = a.data > 0

    def bwd(g):
        _accum(a, g * mask)

    return _node(a.tape, np.where(mask, a.data, 0.0), (a,), bwd, "relu")


def sigmoid(a: Var) -> Var:
    out_data = np.where(a.data >= 0,
                        1.0 / (1.0 + np.exp(-np.clip(a.data, -700, 700))),
                        np.exp(np.clip(a.data, -700, 700)) / (1.0 + np.exp(np.clip(a.data, -700, 700))))

    def bwd(g):
        _accum(a, g * out_data * (1.0 - out_data))

    return _node(a.tape, out_data, (a,), bwd, "sigmoid")


def exp(a: Var) -> Var:
    out_data = np.exp(a.data)

    def bwd(g):
        _accum(a, g * out_data)

    return _node(a.tape, out_data, (a,), bwd, "exp")


def log(a: Var) -> Var:
    def bwd(g):
        _accum(a, g / a.data)

    return _node(a.tape, np.log(a.data), (a,), bwd, "log")


def row_softmax(a: Var) -> Var:
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=1, keepdims=True)

    def bwd(g):
        dot = np.sum(g * out_data, axis=1, keepdims=True)
        _accum(a, out_data * (g - dot))

    return _node(a.tape, out_data, (a,), bwd, "row_softmax")


def row_log_softmax(a: Var) -> Var:
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out_data = shifted - lse
    soft = np.exp(out_data)

    def bwd(g):
        _accum(a, g - soft * g.sum(axis=1, keepdims=True))

    return _node(a.tape, out_data, (a,), bwd, "row_log_softmax")


def dropout(a: Var, rate: float, rng: np.random.Generator, training: bool) -> Var:
    """Inverted dropout; identity at inference."""
    if not training or rate == 0.0:
        def bwd_id(g):
            _accum(a, g)
        return _node(a.tape, a.data.copy(), (a,), bwd_id, "dropout")
    keep = rng.random(a.data.shape) >= rate
    factor = keep / (1.0 - rate)

    def bwd(g):
        _accum(a, g * factor)

    return _node(a.tape, a.data * factor, (a,), bwd, "dropout")


def layer_norm(a: Var, eps: float = 1e-5) -> Var:
    """Row-wise layer normalization (no learned gain/bias)."""
    mu = a.data.mean(axis=1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out_data = xc * inv
    n = a.data.shape[1]

    def bwd(g):
        gm = g.mean(axis=1, keepdims=True)
        gx = np.sum(g * out_data, axis=1, keepdims=True) / n
        _accum(a, inv * (g - gm - out_data * gx))

    return _node(a.tape, out_data, (a,), bwd, "layer_norm")


def l2_normalize_rows(a: Var, eps: float = EPS_NORM) -> Var:
    norm = np.sqrt((a.data * a.data).sum(axis=1, keepdims=True) + eps)
    out_data = a.data / norm

    def bwd(g):
        dot = np.sum(g * a.data, axis=1, keepdims=True)
        _accum(a, g / norm - a.data * dot / norm**3)

    return _node(a.tape, out_data, (a,), bwd, "l2_normalize_rows")


def cosine_similarity_matrix(a: Var) -> Var:
    """Pairwise cosine similarity of the rows of a."""
    norm = np.sqrt((a.data * a.data).sum(axis=1, keepdims=True) + EPS_NORM)
    unit = a.data / norm
    out_data = unit @ unit.T

    def bwd(g):
        gs = g + g.T
        gu = gs @ unit
        # chain through the row normalization
        dot = np.sum(gu * a.data, axis=1, keepdims=True)
        _accum(a, gu / norm - a.data * dot / norm**3)

    return _node(a.tape, out_data, (a,), bwd, "cosine_similarity_matrix")


def pairwise_distance(a: Var, b: Var, eps: float = EPS_NORM) -> Var:
    """D[i, k] = ||a_i - b_k||_2 for row sets a (n, d) and b (m, d)."""
    diff = a.data[:, None, :] - b.data[None, :, :]
    out_data = np.sqrt((diff * diff).sum(axis=2) + eps)

    def bwd(g):
        w = (g / out_data)[:, :, None] * diff
        _accum(a, w.sum(axis=1))
        _accum(b, -w.sum(axis=0))

    return _node(a.tape, out_data, (a, b), bwd, "pairwise_distance")


def concat_cols(a: Var, b: Var) -> Var:
    if a.data.shape[0] != b.data.shape[0]:
        raise AutodiffError("concat_cols row mismatch")
    na = a.data.shape[1]

    def bwd(g):
        _accum(a, g[:, :na])
        _accum(b, g[:, na:])

    return _node(a.tape, np.hstack([a.data, b.data]), (a, b), bwd, "concat_cols")


def gather_rows(a: Var, idx: np.ndarray) -> Var:
    def bwd(g):
        acc = np.zeros_like(a.data)
        np.add.at(acc, idx, g)
        _accum(a, acc)

    return _node(a.tape, a.data[idx], (a,), bwd, "gather_rows")


def gather_entries(a: Var, rows: np.ndarray, cols: np.ndarray) -> Var:
    """Pick a[rows[i], cols[i]] into a vector."""
    def bwd(g):
        acc = np.zeros_like(a.data)
        np.add.at(acc, (rows, cols), g)
        _accum(a, acc)

    return _node(a.tape, a.data[rows, cols], (a,), bwd, "gather_entries")


def sum_all(a: Var) -> Var:
    def bwd(g):
        _accum(a, np.full_like(a.data, float(g)))

    return _node(a.tape, a.data.sum(), (a,), bwd, "sum_all")


def mean_all(a: Var) -> Var:
    n = a.data.size

    def bwd(g):
        _accum(a, np.full_like(a.data, float(g) / n))

    return _node(a.tape, a.data.mean(), (a,), bwd, "mean_all")


def row_sum(a: Var) -> Var:
    def bwd(g):
        _accum(a, np.repeat(g[:, None], a.data.shape[1], axis=1))

    return _node(a.tape, a.data.sum(axis=1), (a,), bwd, "row_sum")


def row_max(a: Var) -> Var:
    """Per-row maximum; ties route the gradient to the first argmax."""
    idx = a.data.argmax(axis=1)
    rows = np.arange(a.data.shape[0])

    def bwd(g):
        acc = np.zeros_like(a.data)
        acc[rows, idx] = g
        _accum(a, acc)

    return _node(a.tape, a.data[rows, idx], (a,), bwd, "row_max")


def bce_with_logits(logits: Var, targets: np.ndarray, pos_weight: np.ndarray,
                    neg_weight: Optional[np.ndarray] = None) -> Var:
    """Per-entry weighted binary cross-entropy from logits (stable form).

    loss[i, k] = pw[k] * t * softplus(-z) + nw[k] * (1 - t) * softplus(z)
    """
    z = logits.data
    t = targets
    pw = np.asarray(pos_weight, dtype=np.float64)
    nw = np.ones_like(pw) if neg_weight is None else np.asarray(neg_weight, dtype=np.float64)
    sp_pos = np.logaddexp(0.0, -z)   # softplus(-z) = -log sigmoid(z)
    sp_neg = np.logaddexp(0.0, z)    # softplus(z)  = -log (1 - sigmoid(z))
    out_data = pw * t * sp_pos + nw * (1 - t) * sp_neg
    sig = 1.0 / (1.0 + np.exp(-np.clip(z, -700, 700)))

    def bwd(g):
        _accum(logits, g * (pw * t * (sig - 1.0) + nw * (1 - t) * sig))

    return _node(logits.tape, out_data, (logits,), bwd, "bce_with_logits")


# ---------------------------------------------------------------------------
# backward pass

def backward(tape: Tape, loss: Var) -> None:
    """Accumulate gradients of a scalar loss into every reachable node."""
    if loss.data.ndim != 0 and loss.data.size != 1:
        raise AutodiffError("loss must be scalar")
    loss.grad = np.ones_like(loss.data)
    for node in reversed(tape.nodes):
        if node.grad is None or node.backward_fn is None:
            continue
        node.backward_fn(node.grad)


def finite_diff_check(build_loss: Callable[[Tape, Sequence[Var]], Var],
                      inputs: Sequence[np.ndarray],
                      h: float = 1e-4,
                      tolerance: float = 1e-4):
    """Compare backward() gradients against central finite differences.

    ``build_loss(tape, vars)`` must construct a scalar loss from the given
    input Vars.  Returns (passed, max_relative_error).
    """
    inputs = [np.asarray(x, dtype=np.float64) for x in inputs]
    tape = Tape()
    vs = [tape.var(x.copy(), requires_grad=True) for x in inputs]
    for v in vs:
        v.grad = np.zeros_like(v.data)  # mark so gradients are retained
    loss = build_loss(tape, vs)
    backward(tape, loss)
    analytic = [v.grad.copy() for v in vs]

    def eval_at(arrays):
        t = Tape()
        ws = [t.var(a) for a in arrays]
        return float(build_loss(t, ws).data)

    max_rel = 0.0
    for i, x in enumerate(inputs):
        num = np.zeros_like(x)
        flat = x.reshape(-1)
        nflat = num.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            fp = eval_at(inputs)
            flat[j] = orig - h
            fm = eval_at(inputs)
            flat[j] = orig
            nflat[j] = (fp - fm) / (2 * h)
        denom = np.maximum(np.abs(num), np.abs(analytic[i]))
        err = np.abs(num - analytic[i])
        rel = np.where(denom > 1e-8, err / np.maximum(denom, 1e-8), err)
        if rel.size:
            max_rel = max(max_rel, float(rel.max()))
    return max_rel <= tolerance, max_rel
