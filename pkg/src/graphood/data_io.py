"""On-disk graph bundles, citation-format conversion, and the synthetic generator."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .graph import Graph, build_graph

log = logging.getLogger("graphood")

FORMAT_VERSION = 1


class BundleError(ValueError):
    """Malformed or inconsistent on-disk bundle."""


@dataclass
class SynthConfig:
    num_vertices: int = 600
    num_classes: int = 4
    p_in: float = 0.05
    p_out: float = 0.002
    feature_dim: int = 16
    separation: float = 2.0
    noise_std: float = 1.0
    ood_class_id: int = 0
    seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.p_in <= 1.0 and 0.0 <= self.p_out <= 1.0):
            raise ValueError("p_in and p_out must be in [0, 1]")
        if self.separation <= 0:
            raise ValueError("separation must be > 0")
        if not 0 <= self.ood_class_id < self.num_classes:
            raise ValueError("ood_class_id out of range")


def _read_tsv(path: Path, ncols: int, name: str):
    rows = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != ncols:
                raise BundleError(f"{name} line {lineno}: expected {ncols} columns, got {len(parts)}")
            rows.append(parts)
    return rows


def load_bundle(path) -> Graph:
    """Load a graph bundle directory.  Vertex order follows the files."""
    path = Path(path)
    meta_path = path / "meta.json"
    if not meta_path.exists():
        raise BundleError(f"no meta.json in {path}")
    meta = json.loads(meta_path.read_text())
    if meta.get("format_version") != FORMAT_VERSION:
        raise BundleError(f"unsupported bundle format version {meta.get('format_version')}")
    n = int(meta["num_vertices"])
    d = int(meta["feature_dim"])

    edges = []
    for lineno, parts in enumerate(_read_tsv(path / "edges.tsv", 2, "edges.tsv"), start=1):
        try:
            u, v = int(parts[0]), int(parts[1])
        except ValueError as exc:
            raise BundleError(f"edges.tsv line {lineno}: {exc}") from exc
        edges.append((u, v))

    bin_path = path / "features.bin"
    if bin_path.exists():
        raw = np.fromfile(bin_path, dtype="<f4")
        if raw.size != n * d:
            raise BundleError(f"features.bin holds {raw.size} values, expected {n * d}")
        features = raw.reshape(n, d).astype(np.float64)
    else:
        rows = _read_tsv(path / "features.tsv", d, "features.tsv")
        if len(rows) != n:
            raise BundleError(f"features.tsv has {len(rows)} rows, expected {n}")
        features = np.array([[float(x) for x in r] for r in rows])

    label_rows = _read_tsv(path / "labels.tsv", 2, "labels.tsv")
    if len(label_rows) != n:
        raise BundleError(f"labels.tsv has {len(label_rows)} rows, expected {n}")
    labels = np.full(n, -1, dtype=np.int64)
    for parts in label_rows:
        labels[int(parts[0])] = int(parts[1])
    if (labels < 0).any():
        raise BundleError("labels.tsv does not cover every vertex")

    timestamps = None
    if meta.get("has_timestamps"):
        year_rows = _read_tsv(path / "years.tsv", 2, "years.tsv")
        if len(year_rows) != n:
            raise BundleError(f"years.tsv has {len(year_rows)} rows, expected {n}")
        timestamps = np.zeros(n, dtype=np.int64)
        for parts in year_rows:
            timestamps[int(parts[0])] = int(parts[1])

    num_classes = int(meta["num_classes"])
    if labels.size and labels.max() >= num_classes:
        raise BundleError("label id >= num_classes in meta.json")
    return build_graph(edges, n, features, labels, timestamps=timestamps,
                       num_classes=num_classes)


def load_splits(path) -> Optional[dict]:
    """Optional splits.tsv: vertex -> {train|val|test} masks, or None if absent."""
    p = Path(path) / "splits.tsv"
    if not p.exists():
        return None
    rows = _read_tsv(p, 2, "splits.tsv")
    out = {}
    for parts in rows:
        out[int(parts[0])] = parts[1]
    n = max(out) + 1
    masks = {name: np.zeros(n, dtype=bool) for name in ("train", "val", "test")}
    for v, name in out.items():
        if name not in masks:
            raise BundleError(f"splits.tsv: unknown split {name!r}")
        masks[name][v] = True
    return masks


def save_bundle(g: Graph, path) -> None:
    """Write a canonical bundle: u < v edges, sorted; float32 features."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {
        "format_version": FORMAT_VERSION,
        "num_vertices": g.num_vertices,
        "feature_dim": int(g.features.shape[1]),
        "num_classes": g.num_classes,
        "has_timestamps": g.timestamps is not None,
    }
    (path / "meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    pairs = g.edge_pairs()
    with open(path / "edges.tsv", "w", encoding="utf-8") as f:
        for u, v in pairs:
            f.write(f"{u}\t{v}\n")
    g.features.astype("<f4").tofile(path / "features.bin")
    with open(path / "labels.tsv", "w", encoding="utf-8") as f:
        for v, c in enumerate(g.labels):
            f.write(f"{v}\t{c}\n")
    if g.timestamps is not None:
        with open(path / "years.tsv", "w", encoding="utf-8") as f:
            for v, y in enumerate(g.timestamps):
                f.write(f"{v}\t{y}\n")


def synth_generate(cfg: SynthConfig) -> Graph:
    """Stochastic-block-model graph with Gaussian class features.

    Class means sit at pairwise distance cfg.separation (scaled one-hot
    corners); edges are Bernoulli(p_in) within and Bernoulli(p_out) across
    classes.  Deterministic given cfg.seed.
    """
    rng = np.random.default_rng(cfg.seed)
    n, k = cfg.num_vertices, cfg.num_classes
    labels = np.arange(n) % k
    labels = rng.permutation(labels)

    iu, ju = np.triu_indices(n, k=1)
    same = labels[iu] == labels[ju]
    p = np.where(same, cfg.p_in, cfg.p_out)
    keep = rng.random(p.shape) < p
    edges = np.stack([iu[keep], ju[keep]], axis=1)

    means = np.zeros((k, cfg.feature_dim))
    scale = cfg.separation / np.sqrt(2.0)
    for c in range(k):
        means[c, c % cfg.feature_dim] = scale
    features = means[labels] + rng.normal(0.0, cfg.noise_std, size=(n, cfg.feature_dim))

    return build_graph(edges, n, features, labels, num_classes=k)


def convert_citation_raw(edge_file, feature_file, label_file, year_file=None,
                         out_dir=None):
    """Convert raw citation files into a canonical bundle.

    Two layouts are supported:
      * combined ``content`` format (feature_file == label_file): each line is
        ``id <TAB> f_1 .. f_D <TAB> label`` (Cora/CiteSeer style);
      * separate files: features ``id <TAB> f_1 .. f_D`` and labels
        ``id <TAB> label``.
    The edge file lists ``src <TAB> dst`` per line using the raw vertex ids.
    Returns (Graph, id_map) and, if out_dir is given, writes the bundle plus a
    vertex_map.tsv with the original ids.
    """
    edge_file, feature_file, label_file = Path(edge_file), Path(feature_file), Path(label_file)
    ids = []
    feats = []
    raw_labels = []
    if feature_file == label_file:
        with open(feature_file, encoding="utf-8") as f:
            for line in f:
                parts = line.rstrip("\n").split("\t")
                if len(parts) < 3:
                    raise BundleError("content file needs id, features, label")
                ids.append(parts[0])
                feats.append([float(x) for x in parts[1:-1]])
                raw_labels.append(parts[-1])
    else:
        with open(feature_file, encoding="utf-8") as f:
            for line in f:
                parts = line.rstrip("\n").split("\t")
                ids.append(parts[0])
                feats.append([float(x) for x in parts[1:]])
        label_of = {}
        with open(label_file, encoding="utf-8") as f:
            for line in f:
                rid, lab = line.rstrip("\n").split("\t")
                label_of[rid] = lab
        missing = [i for i in ids if i not in label_of]
        if missing:
            raise BundleError(f"label file missing {len(missing)} vertices (e.g. {missing[0]})")
        raw_labels = [label_of[i] for i in ids]

    index = {rid: i for i, rid in enumerate(ids)}
    if len(index) != len(ids):
        raise BundleError("duplicate vertex ids in feature file")
    class_names = sorted(set(raw_labels))
    labels = np.array([class_names.index(c) for c in raw_labels], dtype=np.int64)
    features = np.asarray(feats, dtype=np.float64)

    edges = []
    with open(edge_file, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            parts = line.split()
            if not parts:
                continue
            a, b = parts[0], parts[1]
            if a not in index or b not in index:
                raise BundleError(f"edge file line {lineno}: dangling vertex reference")
            edges.append((index[a], index[b]))

    timestamps = None
    if year_file is not None:
        years = {}
        with open(year_file, encoding="utf-8") as f:
            for line in f:
                rid, y = line.split()
                years[rid] = int(y)
        timestamps = np.array([years[i] for i in ids], dtype=np.int64)

    g = build_graph(edges, len(ids), features, labels, timestamps=timestamps,
                    num_classes=len(class_names))
    if out_dir is not None:
        save_bundle(g, out_dir)
        with open(Path(out_dir) / "vertex_map.tsv", "w", encoding="utf-8") as f:
            for rid, i in index.items():
                f.write(f"{rid}\t{i}\n")
        with open(Path(out_dir) / "class_map.tsv", "w", encoding="utf-8") as f:
            for i, name in enumerate(class_names):
                f.write(f"{name}\t{i}\n")
    return g, index
