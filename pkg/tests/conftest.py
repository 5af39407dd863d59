from pathlib import Path

import numpy as np
import pytest

from graphood import SynthConfig, build_graph, convert_citation_raw, synth_generate

REPO_ROOT = Path(__file__).resolve().parents[1]
CORA_RAW = REPO_ROOT / "data" / "raw" / "cora"


@pytest.fixture
def tiny_graph():
    """6 vertices, 2 classes, one isolated vertex (5)."""
    edges = [(0, 1), (1, 2), (2, 3), (3, 4), (0, 2)]
    rng = np.random.default_rng(0)
    features = rng.normal(size=(6, 3))
    labels = np.array([0, 0, 0, 1, 1, 1])
    return build_graph(edges, 6, features, labels)


@pytest.fixture
def synth_graph():
    return synth_generate(SynthConfig(num_vertices=120, num_classes=4,
                                      p_in=0.15, p_out=0.01, seed=7))


@pytest.fixture(scope="session")
def cora_graph():
    if not CORA_RAW.exists():
        pytest.skip("Cora raw files not available")
    content = CORA_RAW / "cora.content"
    g, _ = convert_citation_raw(CORA_RAW / "cora.cites", content, content)
    return g


@pytest.fixture(scope="session")
def cora_bundle(tmp_path_factory):
    if not CORA_RAW.exists():
        pytest.skip("Cora raw files not available")
    out = tmp_path_factory.mktemp("cora") / "bundle"
    content = CORA_RAW / "cora.content"
    g, _ = convert_citation_raw(CORA_RAW / "cora.cites", content, content, out_dir=out)
    return out
