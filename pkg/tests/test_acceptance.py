"""Acceptance suite: pinned tolerances, one pass/fail line per criterion."""

import time

import numpy as np
import pytest
from scipy.integrate import trapezoid

from graphood import (BackboneConfig, GoodConfig, HeadConfig, OdinConfig,
                      ScorerConfig, SynthConfig, TrainConfig, build_graph,
                      compute_scores, finite_diff_check, gdoc_thresholds,
                      good_aggregate, homophily_measures, make_static_tasks,
                      make_temporal_tasks, metric_auroc, metric_id_accuracy,
                      predict_classes, score_msp, score_odin, synth_generate, train,
                      tune_alpha)
from graphood import autodiff as ad
from graphood.harness import derive_seed, sweep_alpha, sweep_q
from graphood.models import (loss_bce_weighted, loss_isomax, loss_ncontrast,
                             loss_softmax_ce)


def auroc_brute_force(scores, truth):
    """Exhaustive pairwise enumeration: P(S_ood > S_id) + 0.5 P(tie)."""
    pos, neg = scores[truth], scores[~truth]
    wins = sum((p > q) + 0.5 * (p == q) for p in pos for q in neg)
    return wins / (len(pos) * len(neg))

SYNTH_BENCH = dict(num_vertices=500, num_classes=10, p_in=0.15, p_out=0.002,
                   feature_dim=16, separation=2.0, noise_std=1.0)


def _report(criterion, passed, detail):
    status = "PASS" if passed else "FAIL"
    print(f"\nACCEPTANCE {criterion} {status}: {detail}")
    assert passed, detail


class TestCriterion1Homophily:
    def test_cora_homophily_reproduction(self, cora_graph):
        started = time.time()
        rep = homophily_measures(cora_graph)
        elapsed = time.time() - started
        ok = (abs(rep.graph_level - 0.810) <= 0.005
              and abs(rep.vertex_level - 0.825) <= 0.005
              and abs(rep.class_insensitive - 0.766) <= 0.005
              and rep.inter_class_edges == 2006
              and rep.intra_class_edges == 8550
              and elapsed < 1.0)
        _report(1, ok,
                f"graph {rep.graph_level:.4f} vertex {rep.vertex_level:.4f} "
                f"ci {rep.class_insensitive:.4f} inter/intra "
                f"{rep.inter_class_edges}/{rep.intra_class_edges} ({elapsed:.2f}s)")


class TestCriterion2CoraDeskScale:
    def test_cora_gcn_odin_leave_one_class_out(self, cora_graph):
        """7-fold leave-one-class-out: ID accuracy 0.89 +- 0.03, AUROC 0.84 +- 0.05;
        aggregated scores with validation-tuned alpha within 0.01 of base and
        >= 0.85 on average.  ODIN hyperparameters are tuned per fold on the
        validation task, mirroring the per-dataset tuning of the reference
        results (fixed presets do not transfer across implementations)."""
        backbone = BackboneConfig(kind="gcn", layers=2, hidden_dim=128,
                                  dropout_rate=0.8)
        head = HeadConfig()
        grid = [(1000.0, 0.0), (1000.0, 0.01), (1000.0, 0.05), (1000.0, 0.08)]
        accs, base_aucs, good_aucs = [], [], []
        started = time.time()
        for i, c in enumerate(range(cora_graph.num_classes)):
            stream = make_static_tasks(cora_graph, c, seed=derive_seed(0, 1000 + i))
            t0, t1, t2 = stream.tasks
            state, _ = train(t0.train_graph, backbone, head,
                             TrainConfig(epochs=200, learning_rate=0.001,
                                         seed=derive_seed(0, i)))
            best_scorer, best_val = None, -1.0
            for temp, eps in grid:
                scorer = ScorerConfig("odin", temperature=temp, epsilon=eps)
                val = compute_scores(state, t1.eval_graph, scorer)
                auc = metric_auroc(val.values[t1.eval_mask], t1.ood_truth)
                if auc > best_val:
                    best_val, best_scorer = auc, scorer
            alpha = tune_alpha(t1, state, best_scorer)
            base = compute_scores(state, t2.eval_graph, best_scorer)
            agg = good_aggregate(t2.eval_graph, base, GoodConfig(alpha))
            preds = predict_classes(state, t2.eval_graph)[t2.eval_mask]
            labels = t2.eval_graph.labels[t2.eval_mask]
            accs.append(metric_id_accuracy(preds, labels, t2.ood_truth))
            base_aucs.append(metric_auroc(base.values[t2.eval_mask], t2.ood_truth))
            good_aucs.append(metric_auroc(agg.values[t2.eval_mask], t2.ood_truth))
        elapsed = time.time() - started
        acc, base_auc, good_auc = map(np.mean, (accs, base_aucs, good_aucs))
        ok = (abs(acc - 0.89) <= 0.03
              and abs(base_auc - 0.84) <= 0.05
              and good_auc >= base_auc - 0.01
              and good_auc >= 0.85
              and elapsed < 900)
        _report(2, ok,
                f"acc {acc:.4f} (0.89+-0.03) base AUROC {base_auc:.4f} (0.84+-0.05) "
                f"aggregated AUROC {good_auc:.4f} (>= base-0.01 and >= 0.85) "
                f"[{elapsed:.0f}s]")


class TestCriterion3GradientCorrectness:
    def _small_instance(self):
        rng = np.random.default_rng(0)
        edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5), (2, 6), (6, 7)]
        g = build_graph(edges, 8, rng.normal(size=(8, 3)),
                        np.array([0, 0, 1, 1, 2, 2, 0, 1]), num_classes=3)
        return g, rng

    def test_all_losses_and_forwards(self):
        from graphood import r_hop_mask, symmetric_normalize, \
            mean_aggregation_weights
        g, rng = self._small_instance()
        norm = symmetric_normalize(g)
        mean_w = mean_aggregation_weights(g)
        mask = np.ones(8, dtype=bool)
        labels = g.labels
        w0 = rng.normal(size=(3, 4))
        w1 = rng.normal(size=(4, 3))
        w_sage = rng.normal(size=(6, 4))
        protos = rng.normal(size=(3, 4)) + 0.5
        dscale = np.asarray(1.3)
        checks = {}

        def gcn_logits(t, x, w0v, w1v):
            wts = t.constant(norm.weights)
            h = ad.relu(ad.matmul(ad.spmm(wts, norm.offsets, norm.targets, x, 8), w0v))
            return ad.matmul(ad.spmm(wts, norm.offsets, norm.targets, h, 8), w1v)

        def sage_logits(t, x, w0v, w1v):
            wts = t.constant(mean_w.weights)
            nbr = ad.spmm(wts, mean_w.offsets, mean_w.targets, x, 8)
            h = ad.relu(ad.matmul(ad.concat_cols(x, nbr), t.constant(w_sage)))
            return ad.matmul(h, w1v)

        checks["softmax_ce/gcn"] = finite_diff_check(
            lambda t, vs: loss_softmax_ce(gcn_logits(t, *vs), labels, mask),
            [g.features, w0, w1])
        checks["weighted_bce/gcn"] = finite_diff_check(
            lambda t, vs: loss_bce_weighted(gcn_logits(t, *vs), labels, mask,
                                            weights=np.array([0.6, 0.7, 0.8])),
            [g.features, w0, w1])
        checks["softmax_ce/sage"] = finite_diff_check(
            lambda t, vs: loss_softmax_ce(sage_logits(t, *vs), labels, mask),
            [g.features, w0, w1])
        checks["isomax"] = finite_diff_check(
            lambda t, vs: loss_isomax(
                ad.relu(ad.matmul(vs[0], t.constant(w0))), t.var(protos, True),
                t.var(dscale, True), 10.0, labels, mask),
            [g.features])
        hop = r_hop_mask(g, 2)
        checks["ncontrast"] = finite_diff_check(
            lambda t, vs: loss_ncontrast(vs[0], hop, 1.0, np.arange(6)),
            [rng.normal(size=(8, 4))])

        worst = max(err for _, err in checks.values())
        ok = all(passed for passed, _ in checks.values())
        _report(3, ok, "max relative gradient error "
                f"{worst:.2e} (<= 1e-4) over {sorted(checks)}")


class TestCriterion4OracleEquivalence:
    def test_auroc_matches_pairwise_enumeration(self):
        rng = np.random.default_rng(123)
        worst = 0.0
        for _ in range(100):
            n = int(rng.integers(4, 201))
            if rng.random() < 0.5:
                scores = rng.integers(0, 8, size=n) / 7.0  # force ties
            else:
                scores = rng.random(n)
            truth = rng.random(n) < rng.uniform(0.2, 0.8)
            if truth.all() or not truth.any():
                truth[0] = True
                truth[1] = False
            diff = abs(metric_auroc(scores, truth) - auroc_brute_force(scores, truth))
            worst = max(worst, diff)
        _report("4a", worst <= 1e-12,
                f"AUROC vs brute force, max |diff| {worst:.2e} over 100 instances")

    def test_gdoc_thresholds_match_direct_formula(self):
        rng = np.random.default_rng(321)
        worst = 0.0
        for _ in range(100):
            n, k = int(rng.integers(5, 60)), int(rng.integers(2, 6))
            outputs = rng.uniform(0, 1, size=(n, k))
            labels = rng.integers(0, k, size=n)
            got = gdoc_thresholds(outputs, labels, alpha_doc=3.0, delta_min=0.1)
            for c in range(k):
                y = outputs[labels == c, c]
                if y.size == 0:
                    expected = 0.1
                else:
                    mirrored = np.concatenate([y, 2 - y])
                    expected = max(0.1, 1 - 3.0 * mirrored.std())
                worst = max(worst, abs(got[c] - expected))
        _report("4b", worst <= 1e-12,
                f"gdoc thresholds vs direct mirrored-std, max |diff| {worst:.2e}")


class TestCriterion5AggregationImprovement:
    def test_alpha_optimum_nonzero_on_homophilous_graphs(self):
        backbone = BackboneConfig(kind="gcn", hidden_dim=32)
        head = HeadConfig()
        tc = TrainConfig(epochs=100, learning_rate=0.01)
        wins, improvements = 0, []
        for seed in range(10):
            g = synth_generate(SynthConfig(seed=seed, **SYNTH_BENCH))
            assert homophily_measures(g).class_insensitive >= 0.7
            stream = make_static_tasks(g, 0, seed=derive_seed(seed, 1))
            curve = dict(sweep_alpha(stream, backbone, head, tc,
                                     ScorerConfig("msp"), seed=seed))
            base = curve[0.0]
            best = max(curve[round(0.1 * i, 1)] for i in range(1, 10))
            wins += best >= base
            improvements.append(best - base)
        mean_impr = float(np.mean(improvements))
        ok = wins >= 9 and mean_impr > 0
        _report(5, ok, f"max-over-alpha >= base in {wins}/10 seeds, "
                f"mean improvement {mean_impr:+.4f} (> 0)")


class TestCriterion6OpenWrfRobustness:
    def test_q_curve_area_beats_naive(self):
        """Scores come from a temperature-calibrated softmax (T=1000), whose
        scale is far from the fixed delta grid — the regime the q-based
        pseudo-labeling is designed to be robust in."""
        backbone = BackboneConfig(kind="gcn", hidden_dim=32)
        head = HeadConfig()
        tc = TrainConfig(epochs=100, learning_rate=0.01)
        scorer = ScorerConfig("odin", temperature=1000.0)
        wins = 0
        for seed in range(10):
            g = synth_generate(SynthConfig(seed=seed, **SYNTH_BENCH))
            stream = make_static_tasks(g, 0, seed=derive_seed(seed, 1))
            assert stream.tasks[2].ood_truth.mean() == pytest.approx(0.10, abs=0.02)
            rows = sweep_q(stream, backbone, head, tc, scorer, seed=seed)
            qs = [p for m, p, _ in rows if m == "open_wrf"]
            area_wrf = trapezoid([f for m, _, f in rows if m == "open_wrf"], qs)
            area_naive = trapezoid([f for m, _, f in rows if m == "naive"], qs)
            wins += area_wrf > area_naive
        _report(6, wins >= 8, f"open_wrf F1 area > naive in {wins}/10 seeds")


class TestCriterion7ReductionsAndRanges:
    def test_odin_reduces_to_msp(self, synth_graph):
        state, _ = train(synth_graph, BackboneConfig(hidden_dim=16), HeadConfig(),
                         TrainConfig(epochs=10))
        from graphood.models import run_model
        _, logits = run_model(state, synth_graph)
        msp = score_msp(logits)
        odin = score_odin(state, synth_graph, OdinConfig(1.0, 0.0))
        diff = float(np.abs(odin.values - msp.values).max())
        _report("7a", diff <= 1e-12, f"odin(T=1,eps=0) vs msp, max |diff| {diff:.2e}")

    def test_alpha_zero_identity(self, synth_graph):
        from graphood import ScoreVector
        rng = np.random.default_rng(0)
        base = ScoreVector(rng.random(synth_graph.num_vertices))
        out = good_aggregate(synth_graph, base, GoodConfig(0.0))
        same = np.array_equal(out.values, base.values)
        _report("7b", same, "aggregation with alpha=0 is the identity")

    def test_score_ranges_full_matrix(self, synth_graph):
        pairs = [("softmax_ce", "msp"), ("softmax_ce", "odin"),
                 ("isomax_plus", "isomax"), ("sigmoid_bce_weighted", "gdoc")]
        violations = []
        for bk in ("gcn", "sage_mean", "graph_mlp"):
            for head_kind, scorer_kind in pairs:
                state, _ = train(synth_graph,
                                 BackboneConfig(kind=bk, hidden_dim=8),
                                 HeadConfig(kind=head_kind), TrainConfig(epochs=5))
                s = compute_scores(state, synth_graph,
                                   ScorerConfig(scorer_kind, temperature=10.0,
                                                epsilon=0.01))
                if s.values.min() < 0 or s.values.max() > 1:
                    violations.append((bk, scorer_kind))
        _report("7c", not violations,
                f"scores in [0,1] for 3 backbones x 4 scorers; violations: {violations}")


class TestCriterion8Determinism:
    def test_byte_identical_reports(self, tmp_path):
        from graphood.cli import main
        bundle = tmp_path / "bundle"
        assert main(["synth", "--out", str(bundle), "--seed", "9",
                     "--num-vertices", "200", "--p-in", "0.12"]) == 0
        args = ["run", "--bundle", str(bundle), "--seed", "3", "--holdout-class",
                "0", "--epochs", "15", "--alpha", "auto", "--threshold", "open_wrf",
                "--q", "0.25"]
        main(args + ["--out", str(tmp_path / "a")])
        main(args + ["--out", str(tmp_path / "b")])
        j1 = (tmp_path / "a" / "report.json").read_bytes()
        j2 = (tmp_path / "b" / "report.json").read_bytes()
        _report(8, j1 == j2, f"report.json byte-identical across runs "
                f"({len(j1)} bytes)")

    def test_temporal_pathway_structural(self):
        """3-year stream with a class planted in the last year."""
        g = synth_generate(SynthConfig(num_vertices=300, num_classes=4,
                                       p_in=0.12, p_out=0.01, seed=2))
        rng = np.random.default_rng(1)
        years = rng.choice([2000, 2001, 2002], size=g.num_vertices)
        years[g.labels == 3] = 2002
        gt = build_graph(g.edge_pairs(), g.num_vertices, g.features, g.labels,
                         timestamps=years, num_classes=4)
        stream = make_temporal_tasks(gt, t0=2000)
        seen = set()
        ok = stream.origin == "temporal" and len(stream.tasks) == 2
        for task in stream.tasks:
            ok = ok and seen <= task.known_classes          # monotone knowledge
            seen = task.known_classes
            train_labels = set(np.unique(task.train_graph.labels))
            ok = ok and train_labels <= task.known_classes  # inductive guarantee
            labels = task.eval_graph.labels[task.eval_mask]
            expected = np.array([int(c) not in task.known_classes for c in labels])
            ok = ok and np.array_equal(task.ood_truth, expected)
        ok = ok and stream.tasks[-1].ood_truth.any()
        _report("8-temporal", ok,
                "monotone known classes, inductive train graphs, planted-class "
                "ood_truth on a 3-year stream")
