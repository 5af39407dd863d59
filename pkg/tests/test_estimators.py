import numpy as np
import pytest

from graphood import GraphOODDetector, induced_train_graph


class TestEstimatorApi:
    def test_get_set_params(self):
        det = GraphOODDetector(hidden_dim=8)
        params = det.get_params()
        assert params["hidden_dim"] == 8
        det.set_params(alpha_ood=0.4)
        assert det.alpha_ood == 0.4

    def test_fit_score_predict(self, synth_graph):
        mask = synth_graph.labels != 0
        sub, _ = induced_train_graph(synth_graph, mask)
        det = GraphOODDetector(hidden_dim=16, epochs=30, alpha_ood=0.3, delta=0.5)
        det.fit(sub)
        scores = det.score_samples(synth_graph)
        assert scores.shape == (synth_graph.num_vertices,)
        assert scores.min() >= 0.0 and scores.max() <= 1.0
        preds = det.predict(synth_graph)
        assert set(np.unique(preds)) <= {-1, 1}

    def test_unfitted_raises(self, synth_graph):
        with pytest.raises(RuntimeError):
            GraphOODDetector().score_samples(synth_graph)

    def test_incompatible_config_raises(self, synth_graph):
        det = GraphOODDetector(scorer="isomax", head="softmax_ce")
        with pytest.raises(Exception):
            det.fit(synth_graph)

    def test_ood_class_scores_higher(self, synth_graph):
        mask = synth_graph.labels != 0
        sub, _ = induced_train_graph(synth_graph, mask)
        det = GraphOODDetector(hidden_dim=16, epochs=60, alpha_ood=0.5)
        det.fit(sub)
        scores = det.score_samples(synth_graph)
        is_ood = synth_graph.labels == 0
        assert scores[is_ood].mean() > scores[~is_ood].mean()

    def test_predict_classes_known_only(self, synth_graph):
        mask = synth_graph.labels != 2
        sub, _ = induced_train_graph(synth_graph, mask)
        det = GraphOODDetector(epochs=5).fit(sub)
        preds = det.predict_classes(synth_graph)
        assert 2 not in set(np.unique(preds))
