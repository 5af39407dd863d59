"""Command-line entry point.

Subcommands: homophily, synth, convert, run, sweep-alpha, sweep-q, scores.
Exit codes: 0 success, 1 configuration error, 2 data error.  Verbosity via
the GRAPH_OOD_LOG environment variable (error | info | debug).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .aggregate import GoodConfig
from .data_io import BundleError, SynthConfig, convert_citation_raw, load_bundle, \
    save_bundle, synth_generate
from .graph import GraphError, homophily_measures
from .harness import ScorerConfig, ThresholdSpec, alpha_curve_tsv, compute_scores, \
    curve_tsv, make_static_tasks, make_temporal_tasks, run_lifelong, run_static_cv, \
    sweep_alpha, sweep_q
from .models import BackboneConfig, ConfigError, HeadConfig, TrainConfig, train
from .scores import write_scores_tsv
from .thresholds import ThresholdError

log = logging.getLogger("graphood")

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 1, 2


def _setup_logging() -> None:
    level = os.environ.get("GRAPH_OOD_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    if level not in levels:
        raise ConfigError(f"GRAPH_OOD_LOG must be one of {sorted(levels)}")
    logging.basicConfig(level=levels[level],
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backbone", default="gcn", choices=["gcn", "sage_mean", "graph_mlp"])
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--hidden-dim", type=int, default=16)
    p.add_argument("--dropout", type=float, default=0.5)
    p.add_argument("--head", default="softmax_ce",
                   choices=["softmax_ce", "sigmoid_bce_weighted", "isomax_plus"])
    p.add_argument("--scorer", default="msp", choices=["msp", "odin", "isomax", "gdoc"])
    p.add_argument("--temperature", type=float, default=1.0)
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--learning-rate", type=float, default=0.01)


def _model_configs(args):
    backbone = BackboneConfig(kind=args.backbone, layers=args.layers,
                              hidden_dim=args.hidden_dim, dropout_rate=args.dropout)
    head = HeadConfig(kind=args.head)
    scorer = ScorerConfig(kind=args.scorer, temperature=args.temperature,
                          epsilon=args.epsilon)
    train_cfg = TrainConfig(epochs=args.epochs, learning_rate=args.learning_rate,
                            seed=args.seed)
    return backbone, head, scorer, train_cfg


def _parse_alpha(value: str):
    """Returns (GoodConfig or None, tune_flag)."""
    if value == "auto":
        return GoodConfig(0.0), True
    a = float(value)
    return (GoodConfig(a), False) if a > 0 else (None, False)


def cmd_homophily(args) -> int:
    g = load_bundle(args.bundle)
    report = homophily_measures(g)
    text = json.dumps(report.as_dict(), sort_keys=True, indent=2) + "\n"
    sys.stdout.write(text)
    if args.out:
        path = _out_dir(args) / "homophily.json"
        path.write_text(text)
        print(f"wrote {path}")
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = SynthConfig(num_vertices=args.num_vertices, num_classes=args.num_classes,
                      p_in=args.p_in, p_out=args.p_out, feature_dim=args.feature_dim,
                      separation=args.separation, noise_std=args.noise_std,
                      ood_class_id=args.ood_class, seed=args.seed)
    g = synth_generate(cfg)
    out = _out_dir(args)
    save_bundle(g, out)
    print(f"wrote bundle to {out} ({g.num_vertices} vertices, "
          f"{g.num_edge_slots // 2} edges)")
    return EXIT_OK


def cmd_convert(args) -> int:
    out = _out_dir(args)
    g, _ = convert_citation_raw(args.edges, args.features, args.labels,
                                year_file=args.years, out_dir=out)
    print(f"wrote bundle to {out} ({g.num_vertices} vertices, "
          f"{g.num_edge_slots // 2} edges, {g.num_classes} classes)")
    return EXIT_OK


def _threshold_spec(args):
    if args.threshold == "none":
        return None
    return ThresholdSpec(kind=args.threshold, delta=args.delta, q=args.q)


def cmd_run(args) -> int:
    g = load_bundle(args.bundle)
    backbone, head, scorer, train_cfg = _model_configs(args)
    good_cfg, tune = _parse_alpha(args.alpha)
    threshold = _threshold_spec(args)
    started = time.time()

    if args.protocol == "temporal":
        stream = make_temporal_tasks(g, args.t0)
        report = run_lifelong(stream, backbone, head, train_cfg, scorer, good_cfg,
                              threshold, tune_alpha_on_validation=tune, seed=args.seed)
    elif args.holdout_class is not None:
        stream = make_static_tasks(g, args.holdout_class, seed=args.seed)
        report = run_lifelong(stream, backbone, head, train_cfg, scorer, good_cfg,
                              threshold, tune_alpha_on_validation=tune, seed=args.seed)
    else:
        report = run_static_cv(g, backbone, head, train_cfg, scorer, good_cfg,
                               threshold, tune_alpha_on_validation=tune,
                               seed=args.seed, threads=args.threads)

    out = _out_dir(args)
    json_path = out / "report.json"
    tsv_path = out / "report.tsv"
    json_path.write_text(report.to_json())
    tsv_path.write_text(report.to_tsv())
    print(f"wrote {json_path}")
    print(f"wrote {tsv_path}")
    print(f"runtime_seconds={time.time() - started:.2f}")
    return EXIT_OK


def cmd_sweep_alpha(args) -> int:
    g = load_bundle(args.bundle)
    backbone, head, scorer, train_cfg = _model_configs(args)
    if args.protocol == "temporal":
        stream = make_temporal_tasks(g, args.t0)
    else:
        if args.holdout_class is None:
            raise ConfigError("--holdout-class is required for the static protocol")
        stream = make_static_tasks(g, args.holdout_class, seed=args.seed)
    curve = sweep_alpha(stream, backbone, head, train_cfg, scorer, seed=args.seed)
    out = _out_dir(args)
    path = out / "alpha_curve.tsv"
    path.write_text(alpha_curve_tsv(curve))
    print(f"wrote {path}")
    return EXIT_OK


def cmd_sweep_q(args) -> int:
    g = load_bundle(args.bundle)
    backbone, head, scorer, train_cfg = _model_configs(args)
    good_cfg, _ = _parse_alpha(args.alpha)
    if args.protocol == "temporal":
        stream = make_temporal_tasks(g, args.t0)
    else:
        if args.holdout_class is None:
            raise ConfigError("--holdout-class is required for the static protocol")
        stream = make_static_tasks(g, args.holdout_class, seed=args.seed)
    rows = sweep_q(stream, backbone, head, train_cfg, scorer, good_cfg, seed=args.seed)
    out = _out_dir(args)
    path = out / "q_curve.tsv"
    path.write_text(curve_tsv(rows))
    print(f"wrote {path}")
    return EXIT_OK


def cmd_scores(args) -> int:
    g = load_bundle(args.bundle)
    backbone, head, scorer, train_cfg = _model_configs(args)
    good_cfg, _ = _parse_alpha(args.alpha)
    state, _ = train(g, backbone, head, train_cfg)
    scores = compute_scores(state, g, scorer)
    if good_cfg is not None:
        from .aggregate import good_aggregate
        scores = good_aggregate(g, scores, good_cfg)
    out = _out_dir(args)
    path = out / "scores.tsv"
    write_scores_tsv(path, scores)
    print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graphood",
                                     description="Graph OOD detection toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("homophily", help="homophily measures of a bundle")
    p.add_argument("bundle")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_homophily)

    p = sub.add_parser("synth", help="generate a synthetic bundle")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--num-vertices", type=int, default=600)
    p.add_argument("--num-classes", type=int, default=4)
    p.add_argument("--p-in", type=float, default=0.05)
    p.add_argument("--p-out", type=float, default=0.002)
    p.add_argument("--feature-dim", type=int, default=16)
    p.add_argument("--separation", type=float, default=2.0)
    p.add_argument("--noise-std", type=float, default=1.0)
    p.add_argument("--ood-class", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("convert", help="convert raw citation files to a bundle")
    p.add_argument("--edges", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--years", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_convert)

    for name, func, with_threshold in (("run", cmd_run, True),
                                       ("sweep-alpha", cmd_sweep_alpha, False),
                                       ("sweep-q", cmd_sweep_q, False),
                                       ("scores", cmd_scores, False)):
        p = sub.add_parser(name)
        p.add_argument("--bundle", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--protocol", default="static", choices=["static", "temporal"])
        p.add_argument("--holdout-class", type=int, default=None)
        p.add_argument("--t0", type=int, default=0)
        p.add_argument("--alpha", default="0",
                       help="aggregation weight in [0, 1] or 'auto'")
        _add_model_flags(p)
        if with_threshold:
            p.add_argument("--threshold", default="none",
                           choices=["none", "naive", "gdoc", "openwgl", "open_wrf"])
            p.add_argument("--delta", type=float, default=0.5)
            p.add_argument("--q", type=float, default=0.1)
        p.set_defaults(func=func)

    return parser


def main(argv=None) -> int:
    try:
        _setup_logging()
        args = build_parser().parse_args(argv)
        return args.func(args)
    except (ConfigError, ThresholdError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BundleError, GraphError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
