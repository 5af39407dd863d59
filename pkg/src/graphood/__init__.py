"""Graph OOD detection toolkit: small from-scratch GNNs, per-vertex OOD
scores, neighborhood score aggregation, threshold methods, and a lifelong
(static leave-one-class-out / temporal) evaluation harness."""

from .aggregate import GoodConfig, good_aggregate
from .autodiff import AutodiffError, Tape, Var, backward, finite_diff_check
from .data_io import BundleError, SynthConfig, convert_citation_raw, load_bundle, \
    load_splits, save_bundle, synth_generate
from .estimators import GraphOODDetector
from .graph import Graph, GraphError, HomophilyReport, NormalizedAdjacency, \
    build_graph, homophily_measures, induced_train_graph, mean_aggregation_weights, \
    neighbor_mean, r_hop_mask, symmetric_normalize
from .harness import EvalReport, ScorerConfig, Task, TaskStream, ThresholdSpec, \
    compute_scores, make_static_tasks, make_temporal_tasks, run_lifelong, \
    run_static_cv, sweep_alpha, sweep_q, tune_alpha
from .metrics import MetricError, metric_auroc, metric_id_accuracy, metric_micro_f1
from .models import BackboneConfig, ConfigError, HeadConfig, ModelState, TrainConfig, \
    predict_classes, run_model, train
from .scores import OdinConfig, ScoreVector, score_gdoc, score_isomax, score_msp, \
    score_odin, write_scores_tsv
from .thresholds import OpenWrfConfig, ThresholdDecision, ThresholdError, gdoc_decide, \
    gdoc_thresholds, naive_threshold, open_wrf, openwgl_decide, openwgl_threshold, \
    wrf_pseudo_labels, write_decisions_tsv

__version__ = "0.1.0"

__all__ = [
    "AutodiffError", "BackboneConfig", "BundleError", "ConfigError", "EvalReport",
    "GoodConfig", "Graph", "GraphError", "GraphOODDetector", "HeadConfig",
    "HomophilyReport", "MetricError", "ModelState", "NormalizedAdjacency",
    "OdinConfig", "OpenWrfConfig", "ScoreVector", "ScorerConfig", "SynthConfig",
    "Tape", "Task", "TaskStream", "ThresholdDecision", "ThresholdError",
    "ThresholdSpec", "TrainConfig", "Var", "backward", "build_graph",
    "compute_scores", "convert_citation_raw", "finite_diff_check", "gdoc_decide",
    "gdoc_thresholds", "good_aggregate", "homophily_measures", "induced_train_graph",
    "load_bundle", "load_splits", "make_static_tasks", "make_temporal_tasks",
    "mean_aggregation_weights", "metric_auroc", "metric_id_accuracy",
    "metric_micro_f1", "naive_threshold", "neighbor_mean", "open_wrf",
    "openwgl_decide", "openwgl_threshold", "predict_classes", "r_hop_mask",
    "run_lifelong", "run_model", "run_static_cv", "save_bundle", "score_gdoc",
    "score_isomax", "score_msp", "score_odin", "sweep_alpha", "sweep_q",
    "symmetric_normalize", "synth_generate", "train", "tune_alpha",
    "wrf_pseudo_labels", "write_decisions_tsv", "write_scores_tsv",
]
