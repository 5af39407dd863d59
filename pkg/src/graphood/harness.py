"""Task streams (static leave-one-class-out, temporal), the evaluation loop,
and the alpha / q sweeps."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .aggregate import GoodConfig, good_aggregate
from .graph import Graph, induced_train_graph
from .metrics import MetricError, metric_auroc, metric_id_accuracy, metric_micro_f1
from .models import BackboneConfig, ConfigError, HeadConfig, ModelState, TrainConfig, \
    predict_classes, run_model, train
from .scores import OdinConfig, ScoreVector, score_gdoc, score_isomax_state, score_msp, \
    score_odin
from .thresholds import OpenWrfConfig, ThresholdDecision, gdoc_decide, gdoc_thresholds, \
    naive_threshold, openwgl_decide, open_wrf

log = logging.getLogger("graphood")

SCHEMA_VERSION = 1
SCORERS = ("msp", "odin", "isomax", "gdoc")
THRESHOLDS = ("naive", "gdoc", "openwgl", "open_wrf")

ALPHA_GRID = [round(0.1 * i, 1) for i in range(11)]


@dataclass
class ScorerConfig:
    kind: str = "msp"
    temperature: float = 1.0
    epsilon: float = 0.0

    def __post_init__(self):
        if self.kind not in SCORERS:
            raise ConfigError(f"unknown scorer {self.kind!r}")

    def required_head(self) -> str:
        return {"msp": "softmax_ce", "odin": "softmax_ce",
                "isomax": "isomax_plus", "gdoc": "sigmoid_bce_weighted"}[self.kind]


@dataclass
class ThresholdSpec:
    kind: str = "naive"
    delta: float = 0.1
    alpha_doc: float = 3.0
    delta_min: float = 0.1
    q: float = 0.1
    wrf_hidden_dim: int = 16
    wrf_epochs: int = 200
    wrf_learning_rate: float = 0.01
    wrf_feature_mode: str = "features+score"
    class_weighting: bool = True

    def __post_init__(self):
        if self.kind not in THRESHOLDS:
            raise ConfigError(f"unknown threshold method {self.kind!r}")


@dataclass
class Task:
    train_graph: Graph
    eval_graph: Graph
    eval_mask: np.ndarray
    known_classes: set
    ood_truth: np.ndarray
    name: str = ""

    def __post_init__(self):
        bad = set(int(c) for c in np.unique(self.train_graph.labels)) - set(self.known_classes)
        if bad:
            raise ConfigError(f"train graph contains unknown classes {sorted(bad)}")
        if int(self.eval_mask.sum()) != self.ood_truth.shape[0]:
            raise ConfigError("ood_truth must align with the eval mask")


@dataclass
class TaskStream:
    tasks: list
    origin: str  # static_loco | temporal
    holdout_class: Optional[int] = None


@dataclass
class EvalReport:
    origin: str
    per_task: list
    aggregates: dict
    config: dict
    schema_version: int = SCHEMA_VERSION

    def to_json(self) -> str:
        payload = {
            "schema_version": self.schema_version,
            "origin": self.origin,
            "config": self.config,
            "per_task": self.per_task,
            "aggregates": self.aggregates,
        }
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def to_tsv(self) -> str:
        cols = ["task", "id_accuracy", "auroc", "micro_f1", "alpha_used", "n_eval"]
        lines = ["\t".join(cols)]
        for row in self.per_task:
            lines.append("\t".join(
                "" if row.get(c) is None else
                (f"{row[c]:.6f}" if isinstance(row[c], float) else str(row[c]))
                for c in cols))
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# task stream construction

def stratified_split(labels: np.ndarray, fractions, seed: int):
    """Per-class largest-remainder split; returns (train, val, test) bool masks."""
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-9 or min(fractions) < 0:
        raise ConfigError("fractions must be three non-negative values summing to 1")
    rng = np.random.default_rng(seed)
    n = labels.shape[0]
    masks = [np.zeros(n, dtype=bool) for _ in range(3)]
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        rng.shuffle(idx)
        exact = np.array(fractions) * idx.size
        counts = np.floor(exact).astype(int)
        rema = exact - counts
        for _ in range(idx.size - counts.sum()):
            j = int(np.argmax(rema))
            counts[j] += 1
            rema[j] = -1.0
        start = 0
        for j in range(3):
            masks[j][idx[start:start + counts[j]]] = True
            start += counts[j]
    return masks


def make_static_tasks(g: Graph, holdout_class: int, fractions=(0.6, 0.2, 0.2),
                      seed: int = 0) -> TaskStream:
    """Leave-one-class-out stream: T0 train, T1 validation, T2 test.

    T0's graph is inductive: it holds only train vertices of the known
    classes.  T1 scores the validation vertices (the holdout class appears
    there only as evaluation targets, never in the train graph).  T2 scores
    the test vertices on the full graph.
    """
    if holdout_class not in set(int(c) for c in np.unique(g.labels)):
        raise ConfigError(f"holdout class {holdout_class} not present")
    train_m, val_m, test_m = stratified_split(g.labels, fractions, seed)
    known = set(int(c) for c in np.unique(g.labels)) - {holdout_class}
    is_ood = g.labels == holdout_class

    keep0 = train_m & ~is_ood
    if not keep0.any():
        raise ConfigError("split degenerates: no train vertices left")
    g0, _ = induced_train_graph(g, keep0)
    t0 = Task(train_graph=g0, eval_graph=g0,
              eval_mask=np.ones(g0.num_vertices, dtype=bool),
              known_classes=known,
              ood_truth=np.zeros(g0.num_vertices, dtype=bool), name="T0-train")

    keep1 = keep0 | val_m
    g1, map1 = induced_train_graph(g, keep1)
    eval1 = np.zeros(g1.num_vertices, dtype=bool)
    eval1[map1[val_m & (map1 >= 0)]] = True
    t1 = Task(train_graph=g0, eval_graph=g1, eval_mask=eval1, known_classes=known,
              ood_truth=is_ood[val_m], name="T1-validation")

    t2 = Task(train_graph=g0, eval_graph=g, eval_mask=test_m, known_classes=known,
              ood_truth=is_ood[test_m], name="T2-test")
    return TaskStream(tasks=[t0, t1, t2], origin="static_loco",
                      holdout_class=holdout_class)


def make_temporal_tasks(g: Graph, t0: int) -> TaskStream:
    """Cumulative-history stream: task i trains on years <= t_i, evaluates on t_{i+1}."""
    if g.timestamps is None:
        raise ConfigError("temporal stream needs vertex timestamps")
    years = np.unique(g.timestamps)
    if t0 not in years or t0 >= years.max():
        raise ConfigError(f"t0={t0} leaves no evaluation years")
    eval_years = [int(y) for y in years if y > t0]
    tasks = []
    prev = t0
    for y in eval_years:
        train_keep = g.timestamps <= prev
        eval_keep = g.timestamps <= y
        n_eval = int((g.timestamps == y).sum())
        if n_eval == 0:
            log.warning("temporal stream: year %d has no vertices, skipped", y)
            prev = y
            continue
        known = set(int(c) for c in np.unique(g.labels[train_keep]))
        train_g, _ = induced_train_graph(g, train_keep)
        eval_g, emap = induced_train_graph(g, eval_keep)
        eval_mask = np.zeros(eval_g.num_vertices, dtype=bool)
        eval_mask[emap[(g.timestamps == y) & (emap >= 0)]] = True
        truth = np.array([int(c) not in known for c in g.labels[g.timestamps == y]])
        tasks.append(Task(train_graph=train_g, eval_graph=eval_g, eval_mask=eval_mask,
                          known_classes=known, ood_truth=truth, name=f"year-{y}"))
        prev = y
    if not tasks:
        raise ConfigError("empty temporal stream")
    return TaskStream(tasks=tasks, origin="temporal")


# ---------------------------------------------------------------------------
# scoring pipeline

def check_compatibility(head: HeadConfig, scorer: ScorerConfig) -> None:
    need = scorer.required_head()
    if head.kind != need:
        raise ConfigError(
            f"scorer {scorer.kind!r} requires head {need!r}, got {head.kind!r}")


def compute_scores(state: ModelState, g: Graph, scorer: ScorerConfig) -> ScoreVector:
    """Base OOD scores for every vertex of a graph."""
    if scorer.kind == "odin":
        return score_odin(state, g, OdinConfig(scorer.temperature, scorer.epsilon))
    if scorer.kind == "isomax":
        return score_isomax_state(state, g)
    _, logits = run_model(state, g)
    if scorer.kind == "gdoc":
        return score_gdoc(logits)
    return score_msp(logits)


def tune_alpha(task: Task, state: ModelState, scorer: ScorerConfig,
               alphas: Sequence[float] = tuple(ALPHA_GRID)) -> float:
    """Pick the alpha maximizing AUROC on a validation task (ties: lowest alpha)."""
    truth = task.ood_truth
    if truth.all() or not truth.any():
        log.warning("alpha tuning impossible (single-class validation), using 0.0")
        return 0.0
    base = compute_scores(state, task.eval_graph, scorer)
    best_alpha, best = 0.0, -1.0
    for a in alphas:
        agg = good_aggregate(task.eval_graph, base, GoodConfig(a))
        auc = metric_auroc(agg.values[task.eval_mask], truth)
        if auc > best + 1e-12:
            best, best_alpha = auc, a
    return best_alpha


def _softmax_np(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def apply_threshold(task: Task, state: ModelState, eval_scores: np.ndarray,
                    full_scores: ScoreVector, spec: ThresholdSpec,
                    seed: int) -> ThresholdDecision:
    if spec.kind == "naive":
        return naive_threshold(ScoreVector(eval_scores), spec.delta)
    if spec.kind == "gdoc":
        if state.head.kind != "sigmoid_bce_weighted":
            raise ConfigError("gdoc thresholds need the sigmoid head")
        _, train_logits = run_model(state, state_train_graph(task))
        head_labels = _head_labels(state, state_train_graph(task).labels)
        train_sig = 1.0 / (1.0 + np.exp(-train_logits))
        deltas = gdoc_thresholds(train_sig, head_labels, spec.alpha_doc, spec.delta_min)
        _, eval_logits = run_model(state, task.eval_graph)
        eval_sig = 1.0 / (1.0 + np.exp(-eval_logits[task.eval_mask]))
        decision, _ = gdoc_decide(eval_sig, deltas)
        return decision
    if spec.kind == "openwgl":
        _, logits = run_model(state, task.eval_graph)
        probs = _softmax_np(logits[task.eval_mask])
        return openwgl_decide(probs)
    # open_wrf: transductive on the eval graph, then restricted to eval vertices
    cfg = OpenWrfConfig(q=spec.q, hidden_dim=spec.wrf_hidden_dim,
                        epochs=spec.wrf_epochs, learning_rate=spec.wrf_learning_rate,
                        seed=seed, class_weighting=spec.class_weighting,
                        feature_mode=spec.wrf_feature_mode)
    decision = open_wrf(task.eval_graph, full_scores, cfg)
    return ThresholdDecision(decision.ood_mask[task.eval_mask],
                             decision.thresholds_used, decision.method)


def state_train_graph(task: Task) -> Graph:
    return task.train_graph


def _head_labels(state: ModelState, labels: np.ndarray) -> np.ndarray:
    lookup = {c: i for i, c in enumerate(state.known_class_ids)}
    return np.array([lookup[int(c)] for c in labels], dtype=np.int64)


def derive_seed(master: int, index: int) -> int:
    return int(np.random.SeedSequence((master, index)).generate_state(1)[0])


def evaluate_task(task: Task, state: ModelState, scorer: ScorerConfig,
                  good_cfg: Optional[GoodConfig], threshold: Optional[ThresholdSpec],
                  seed: int, alpha_used: Optional[float]) -> dict:
    full = compute_scores(state, task.eval_graph, scorer)
    if good_cfg is not None:
        full = good_aggregate(task.eval_graph, full, good_cfg)
    eval_scores = full.values[task.eval_mask]
    truth = task.ood_truth

    preds = predict_classes(state, task.eval_graph)[task.eval_mask]
    labels = task.eval_graph.labels[task.eval_mask]
    row = {
        "task": task.name,
        "n_eval": int(task.eval_mask.sum()),
        "alpha_used": alpha_used,
        "id_accuracy": None,
        "auroc": None,
        "micro_f1": None,
    }
    if (~truth).any():
        row["id_accuracy"] = metric_id_accuracy(preds, labels, truth)
    try:
        row["auroc"] = metric_auroc(eval_scores, truth)
    except MetricError:
        row["auroc"] = None  # single-class task, excluded from AUROC averages
    if threshold is not None:
        decision = apply_threshold(task, state, eval_scores, full, threshold, seed)
        row["micro_f1"] = metric_micro_f1(decision.ood_mask, truth)
        row["ood_predicted"] = int(decision.ood_mask.sum())
    return row


def _aggregate(rows: list) -> dict:
    agg = {}
    for key in ("id_accuracy", "auroc", "micro_f1"):
        vals = [r[key] for r in rows if r.get(key) is not None]
        agg[key] = float(np.mean(vals)) if vals else None
        agg[f"{key}_n_tasks"] = len(vals)
    agg["auroc_excluded_tasks"] = sum(1 for r in rows if r.get("auroc") is None)
    return agg


def run_lifelong(stream: TaskStream, backbone: BackboneConfig, head: HeadConfig,
                 train_cfg: TrainConfig, scorer: ScorerConfig,
                 good_cfg: Optional[GoodConfig] = None,
                 threshold: Optional[ThresholdSpec] = None,
                 tune_alpha_on_validation: bool = False,
                 seed: int = 0) -> EvalReport:
    """Run the full train -> score -> aggregate -> threshold -> evaluate loop.

    Static streams train once on T0 and evaluate T2 (T1 is used to tune the
    aggregation weight when requested).  Temporal streams train and evaluate
    per task, tuning alpha on the first task that has both classes.
    """
    check_compatibility(head, scorer)
    rows = []
    config_echo = _config_echo(stream, backbone, head, train_cfg, scorer, good_cfg,
                               threshold, tune_alpha_on_validation, seed)

    if stream.origin == "static_loco":
        t0, t1, t2 = stream.tasks
        cfg = TrainConfig(train_cfg.epochs, train_cfg.learning_rate, seed,
                          train_cfg.class_weighting)
        state, _ = train(t0.train_graph, backbone, head, cfg)
        alpha = good_cfg.alpha_ood if good_cfg is not None else None
        if good_cfg is not None and tune_alpha_on_validation:
            alpha = tune_alpha(t1, state, scorer)
            good_cfg = GoodConfig(alpha)
        rows.append(evaluate_task(t2, state, scorer, good_cfg, threshold, seed, alpha))
    else:
        alpha = good_cfg.alpha_ood if good_cfg is not None else None
        tuned = not (good_cfg is not None and tune_alpha_on_validation)
        for i, task in enumerate(stream.tasks):
            cfg = TrainConfig(train_cfg.epochs, train_cfg.learning_rate,
                              derive_seed(seed, i), train_cfg.class_weighting)
            state, _ = train(task.train_graph, backbone, head, cfg)
            if not tuned and task.ood_truth.any() and not task.ood_truth.all():
                alpha = tune_alpha(task, state, scorer)
                good_cfg = GoodConfig(alpha)
                tuned = True
            rows.append(evaluate_task(task, state, scorer, good_cfg, threshold,
                                      derive_seed(seed, i), alpha))

    return EvalReport(origin=stream.origin, per_task=rows, aggregates=_aggregate(rows),
                      config=config_echo)


def run_static_cv(g: Graph, backbone: BackboneConfig, head: HeadConfig,
                  train_cfg: TrainConfig, scorer: ScorerConfig,
                  good_cfg: Optional[GoodConfig] = None,
                  threshold: Optional[ThresholdSpec] = None,
                  tune_alpha_on_validation: bool = False,
                  fractions=(0.6, 0.2, 0.2), seed: int = 0,
                  classes: Optional[Sequence[int]] = None,
                  threads: int = 1) -> EvalReport:
    """Leave-one-class-out cross-validation: one stream per class, averaged."""
    if classes is None:
        classes = [int(c) for c in np.unique(g.labels)]

    def run_fold(i_class):
        i, c = i_class
        stream = make_static_tasks(g, c, fractions, seed=derive_seed(seed, 1000 + i))
        report = run_lifelong(stream, backbone, head, train_cfg, scorer, good_cfg,
                              threshold, tune_alpha_on_validation,
                              seed=derive_seed(seed, i))
        row = dict(report.per_task[0])
        row["task"] = f"holdout-{c}"
        row["holdout_class"] = c
        return row

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run_fold, enumerate(classes)))
    else:
        rows = [run_fold(ic) for ic in enumerate(classes)]

    config_echo = _config_echo(None, backbone, head, train_cfg, scorer, good_cfg,
                               threshold, tune_alpha_on_validation, seed)
    config_echo["fractions"] = list(fractions)
    config_echo["classes"] = list(classes)
    return EvalReport(origin="static_cv", per_task=rows, aggregates=_aggregate(rows),
                      config=config_echo)


def sweep_alpha(stream: TaskStream, backbone: BackboneConfig, head: HeadConfig,
                train_cfg: TrainConfig, scorer: ScorerConfig,
                alphas: Sequence[float] = tuple(ALPHA_GRID), seed: int = 0):
    """AUROC as a function of the aggregation weight; base scores computed once."""
    check_compatibility(head, scorer)
    if stream.origin == "static_loco":
        eval_tasks = [(stream.tasks[2], seed)]
        trained = {0: train(stream.tasks[0].train_graph, backbone, head,
                            TrainConfig(train_cfg.epochs, train_cfg.learning_rate,
                                        seed, train_cfg.class_weighting))[0]}
        states = [trained[0]]
    else:
        eval_tasks = [(t, derive_seed(seed, i)) for i, t in enumerate(stream.tasks)]
        states = [train(t.train_graph, backbone, head,
                        TrainConfig(train_cfg.epochs, train_cfg.learning_rate, s,
                                    train_cfg.class_weighting))[0]
                  for (t, s) in eval_tasks]

    bases = [compute_scores(st, t.eval_graph, scorer)
             for st, (t, _) in zip(states, eval_tasks)]
    curve = []
    for a in alphas:
        aucs = []
        for base, (task, _) in zip(bases, eval_tasks):
            if not task.ood_truth.any() or task.ood_truth.all():
                continue
            agg = good_aggregate(task.eval_graph, base, GoodConfig(a))
            aucs.append(metric_auroc(agg.values[task.eval_mask], task.ood_truth))
        curve.append((float(a), float(np.mean(aucs)) if aucs else None))
    return curve


def sweep_q(stream: TaskStream, backbone: BackboneConfig, head: HeadConfig,
            train_cfg: TrainConfig, scorer: ScorerConfig,
            good_cfg: Optional[GoodConfig] = None,
            qs: Sequence[float] = tuple(round(0.05 * i, 2) for i in range(1, 11)),
            threshold: Optional[ThresholdSpec] = None, seed: int = 0):
    """Paired micro-F1 curves over q (open_wrf) and delta (naive)."""
    check_compatibility(head, scorer)
    base_spec = threshold or ThresholdSpec(kind="open_wrf")
    if stream.origin == "static_loco":
        task = stream.tasks[2]
        state, _ = train(stream.tasks[0].train_graph, backbone, head,
                         TrainConfig(train_cfg.epochs, train_cfg.learning_rate, seed,
                                     train_cfg.class_weighting))
    else:
        task = stream.tasks[-1]
        state, _ = train(task.train_graph, backbone, head,
                         TrainConfig(train_cfg.epochs, train_cfg.learning_rate, seed,
                                     train_cfg.class_weighting))
    full = compute_scores(state, task.eval_graph, scorer)
    if good_cfg is not None:
        full = good_aggregate(task.eval_graph, full, good_cfg)
    eval_scores = full.values[task.eval_mask]
    truth = task.ood_truth

    rows = []
    for q in qs:
        wrf_cfg = OpenWrfConfig(q=q, hidden_dim=base_spec.wrf_hidden_dim,
                                epochs=base_spec.wrf_epochs,
                                learning_rate=base_spec.wrf_learning_rate,
                                seed=seed, class_weighting=base_spec.class_weighting,
                                feature_mode=base_spec.wrf_feature_mode)
        decision = open_wrf(task.eval_graph, full, wrf_cfg)
        f1 = metric_micro_f1(decision.ood_mask[task.eval_mask], truth)
        rows.append(("open_wrf", float(q), f1))
    for d in qs:
        decision = naive_threshold(ScoreVector(eval_scores), d)
        rows.append(("naive", float(d), metric_micro_f1(decision.ood_mask, truth)))
    return rows


def curve_tsv(rows) -> str:
    lines = ["method\tparam\tf1"]
    for method, param, f1 in rows:
        lines.append(f"{method}\t{param:.2f}\t{f1:.6f}")
    return "\n".join(lines) + "\n"


def alpha_curve_tsv(curve) -> str:
    lines = ["alpha\tauroc"]
    for a, auc in curve:
        lines.append(f"{a:.1f}\t" + ("" if auc is None else f"{auc:.6f}"))
    return "\n".join(lines) + "\n"


def _config_echo(stream, backbone, head, train_cfg, scorer, good_cfg, threshold,
                 tune_alpha_on_validation, seed) -> dict:
    echo = {
        "backbone": vars(backbone).copy(),
        "head": vars(head).copy(),
        "train": vars(train_cfg).copy(),
        "scorer": vars(scorer).copy(),
        "good": None if good_cfg is None else {"alpha_ood": good_cfg.alpha_ood},
        "threshold": None if threshold is None else vars(threshold).copy(),
        "tune_alpha_on_validation": tune_alpha_on_validation,
        "seed": seed,
    }
    if stream is not None:
        echo["origin"] = stream.origin
        if stream.holdout_class is not None:
            echo["holdout_class"] = stream.holdout_class
    return echo
