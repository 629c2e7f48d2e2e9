"""Dataset directory ingestion and emission.

Layout (bit-exact):
  meta.json     {"name", "num_nodes", "num_features", "num_classes", "task"}
                task is "node" or "graph"; for graph tasks num_nodes is the
                total node count across member graphs.
  edges.tsv     one undirected edge per line, "u<TAB>v" with u < v, sorted,
                no duplicates, no self-loops            (node tasks)
  features.csv  N rows of F comma-separated floats      (node tasks)
  labels.csv    N lines, one integer, -1 = unlabeled    (node tasks)
  graphs.jsonl  {"edges": [[u,v],...], "features": [[...],...], "label": int}
                one JSON object per line                (graph tasks)

Loaders reject malformed input rather than repairing it.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import DatasetError
from ..numcore import Tensor
from .graph import Graph, GraphSet

_META_KEYS = {"name", "num_nodes", "num_features", "num_classes", "task"}


def _read_meta(path: Path) -> dict:
    meta_path = path / "meta.json"
    if not meta_path.is_file():
        raise DatasetError(f"{meta_path}: missing")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as e:
        raise DatasetError(f"{meta_path}: invalid JSON ({e})") from e
    missing = _META_KEYS - meta.keys()
    if missing:
        raise DatasetError(f"{meta_path}: missing keys {sorted(missing)}")
    if meta["task"] not in ("node", "graph"):
        raise DatasetError(f"{meta_path}: task must be 'node' or 'graph', got {meta['task']!r}")
    return meta


def _read_edges(path: Path, num_nodes: int) -> np.ndarray:
    edge_path = path / "edges.tsv"
    if not edge_path.is_file():
        raise DatasetError(f"{edge_path}: missing")
    rows = []
    prev = (-1, -1)
    with edge_path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise DatasetError(f"{edge_path}:{lineno}: expected two tab-separated ints")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError as e:
                raise DatasetError(f"{edge_path}:{lineno}: non-integer endpoint") from e
            if not (0 <= u < num_nodes and 0 <= v < num_nodes):
                raise DatasetError(f"{edge_path}:{lineno}: endpoint outside [0, {num_nodes})")
            if u >= v:
                raise DatasetError(f"{edge_path}:{lineno}: requires u < v (self-loops forbidden)")
            if (u, v) <= prev:
                raise DatasetError(f"{edge_path}:{lineno}: edges must be sorted and unique")
            prev = (u, v)
            rows.append((u, v))
    return np.array(rows, dtype=np.int64).reshape(-1, 2)


def _read_features(path: Path, num_nodes: int, num_features: int) -> np.ndarray:
    feat_path = path / "features.csv"
    if not feat_path.is_file():
        raise DatasetError(f"{feat_path}: missing")
    try:
        feats = np.loadtxt(feat_path, delimiter=",", ndmin=2)
    except ValueError as e:
        raise DatasetError(f"{feat_path}: parse failure ({e})") from e
    if feats.shape[0] != num_nodes:
        raise DatasetError(
            f"{feat_path}: {feats.shape[0]} rows but meta num_nodes={num_nodes}"
        )
    if feats.shape[1] != num_features:
        raise DatasetError(
            f"{feat_path}: {feats.shape[1]} columns but meta num_features={num_features}"
        )
    if not np.isfinite(feats).all():
        raise DatasetError(f"{feat_path}: non-finite feature value")
    return feats


def _read_labels(path: Path, num_nodes: int, num_classes: int) -> np.ndarray:
    label_path = path / "labels.csv"
    if not label_path.is_file():
        raise DatasetError(f"{label_path}: missing")
    values = []
    with label_path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                y = int(line)
            except ValueError as e:
                raise DatasetError(f"{label_path}:{lineno}: non-integer label") from e
            if y < -1 or y >= num_classes:
                raise DatasetError(
                    f"{label_path}:{lineno}: label {y} outside [-1, {num_classes})"
                )
            values.append(y)
    if len(values) != num_nodes:
        raise DatasetError(
            f"{label_path}: {len(values)} labels but meta num_nodes={num_nodes}"
        )
    return np.array(values, dtype=np.int64)


def load_dataset(path) -> Graph | GraphSet:
    """Load a dataset directory; the meta record decides node vs graph task."""
    path = Path(path)
    if not path.is_dir():
        raise DatasetError(f"{path}: not a directory")
    meta = _read_meta(path)
    n = int(meta["num_nodes"])
    f = int(meta["num_features"])
    c = int(meta["num_classes"])
    if meta["task"] == "node":
        edges = _read_edges(path, n)
        feats = _read_features(path, n, f)
        labels = _read_labels(path, n, c)
        return Graph(num_nodes=n, edges=edges, features=Tensor(feats),
                     labels=labels, num_classes=c)
    return _load_graph_task(path, meta)


def _load_graph_task(path: Path, meta: dict) -> GraphSet:
    jsonl = path / "graphs.jsonl"
    if not jsonl.is_file():
        raise DatasetError(f"{jsonl}: missing")
    f = int(meta["num_features"])
    c = int(meta["num_classes"])
    graphs = []
    total_nodes = 0
    with jsonl.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetError(f"{jsonl}:{lineno}: invalid JSON ({e})") from e
            for key in ("edges", "features", "label"):
                if key not in rec:
                    raise DatasetError(f"{jsonl}:{lineno}: missing key {key!r}")
            feats = np.asarray(rec["features"], dtype=np.float64)
            if feats.ndim != 2 or feats.shape[1] != f:
                raise DatasetError(
                    f"{jsonl}:{lineno}: features must be n x {f}, got {feats.shape}"
                )
            label = int(rec["label"])
            if not 0 <= label < c:
                raise DatasetError(f"{jsonl}:{lineno}: label {label} outside [0, {c})")
            n_i = feats.shape[0]
            edges = np.asarray(rec["edges"], dtype=np.int64).reshape(-1, 2)
            if edges.size and (edges.min() < 0 or edges.max() >= n_i):
                raise DatasetError(f"{jsonl}:{lineno}: edge endpoint outside [0, {n_i})")
            lo = edges.min(axis=1) if edges.size else edges[:, 0]
            hi = edges.max(axis=1) if edges.size else edges[:, 1]
            if edges.size and np.any(lo == hi):
                raise DatasetError(f"{jsonl}:{lineno}: self-loop")
            canon = np.unique(np.stack([lo, hi], axis=1), axis=0) if edges.size else edges
            if len(canon) != len(edges):
                raise DatasetError(f"{jsonl}:{lineno}: duplicate edges")
            total_nodes += n_i
            graphs.append(Graph(num_nodes=n_i, edges=canon, features=Tensor(feats),
                                labels=None, num_classes=c, graph_label=label))
    if not graphs:
        raise DatasetError(f"{jsonl}: no graphs")
    if total_nodes != int(meta["num_nodes"]):
        raise DatasetError(
            f"{jsonl}: {total_nodes} total nodes but meta num_nodes={meta['num_nodes']}"
        )
    return GraphSet(graphs=graphs, num_classes=c)


def _write_floats_row(values) -> str:
    return ",".join(repr(float(x)) for x in values)


def save_dataset(data: Graph | GraphSet, path, name: str) -> None:
    """Write a dataset directory in the on-disk format (round-trips exactly)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    if isinstance(data, GraphSet):
        meta = {
            "name": name,
            "num_nodes": int(sum(g.num_nodes for g in data.graphs)),
            "num_features": int(data.graphs[0].num_features),
            "num_classes": int(data.num_classes),
            "task": "graph",
        }
        (path / "meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n")
        with (path / "graphs.jsonl").open("w") as fh:
            for g in data.graphs:
                rec = {
                    "edges": [[int(u), int(v)] for u, v in g.edges],
                    "features": [[float(x) for x in row] for row in g.features.data],
                    "label": int(g.graph_label),
                }
                fh.write(json.dumps(rec) + "\n")
        return
    g = data
    if g.labels is None:
        raise DatasetError("save_dataset needs labels for node tasks")
    meta = {
        "name": name,
        "num_nodes": int(g.num_nodes),
        "num_features": int(g.num_features),
        "num_classes": int(g.num_classes),
        "task": "node",
    }
    (path / "meta.json").write_text(json.dumps(meta, sort_keys=True) + "\n")
    with (path / "edges.tsv").open("w") as fh:
        for u, v in g.edges:
            fh.write(f"{int(u)}\t{int(v)}\n")
    with (path / "features.csv").open("w") as fh:
        for row in g.features.data:
            fh.write(_write_floats_row(row) + "\n")
    with (path / "labels.csv").open("w") as fh:
        for y in g.labels:
            fh.write(f"{int(y)}\n")
