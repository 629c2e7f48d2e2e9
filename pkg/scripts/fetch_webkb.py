#!/usr/bin/env python3
"""Convert public raw copies of the web-page and citation benchmarks into the
dataset directory format (meta.json / edges.tsv / features.csv / labels.csv).

Requires the raw files locally (download them wherever network access exists):

  webkb format (Texas, Cornell, Wisconsin, Chameleon; the geom-gcn layout):
      out1_node_feature_label.txt   "id <TAB> f1,f2,... <TAB> label" + header
      out1_graph_edges.txt          "u <TAB> v" per line + header
  cora-content format (classic McCallum distribution):
      cora.content                  "id f1 ... fN label_string"
      cora.cites                    "cited citing" per line

Usage:
  python3 scripts/fetch_webkb.py --format webkb --name texas \
      --nodes out1_node_feature_label.txt --edges out1_graph_edges.txt \
      --out datasets/texas
  python3 scripts/fetch_webkb.py --format cora-content --name cora \
      --nodes cora.content --edges cora.cites --out datasets/cora

Conversion correctness is outside the package's test surface; sanity-check the
result with `gpt homophily <out>`.
"""

import argparse
from pathlib import Path

import numpy as np

from hopprompt import graphstore as gs
from hopprompt.numcore import Tensor


def parse_webkb(nodes_path: Path, edges_path: Path):
    ids, feats, labels = [], [], []
    with nodes_path.open() as fh:
        next(fh)  # header
        for line in fh:
            line = line.strip()
            if not line:
                continue
            node_id, feat_str, label = line.split("\t")
            ids.append(int(node_id))
            feats.append([float(x) for x in feat_str.split(",")])
            labels.append(int(label))
    order = np.argsort(ids)
    features = np.asarray(feats)[order]
    y = np.asarray(labels, dtype=np.int64)[order]
    remap = {int(i): k for k, i in enumerate(np.asarray(ids)[order])}
    edges = set()
    with edges_path.open() as fh:
        next(fh)  # header
        for line in fh:
            line = line.strip()
            if not line:
                continue
            u, v = (remap[int(x)] for x in line.split("\t"))
            if u != v:
                edges.add((min(u, v), max(u, v)))
    return features, y, sorted(edges)


def parse_cora_content(nodes_path: Path, edges_path: Path):
    ids, feats, label_names = [], [], []
    with nodes_path.open() as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            ids.append(parts[0])
            feats.append([float(x) for x in parts[1:-1]])
            label_names.append(parts[-1])
    classes = {name: k for k, name in enumerate(sorted(set(label_names)))}
    remap = {i: k for k, i in enumerate(ids)}
    features = np.asarray(feats)
    y = np.array([classes[n] for n in label_names], dtype=np.int64)
    edges = set()
    with edges_path.open() as fh:
        for line in fh:
            parts = line.split()
            if len(parts) != 2 or parts[0] not in remap or parts[1] not in remap:
                continue
            u, v = remap[parts[0]], remap[parts[1]]
            if u != v:
                edges.add((min(u, v), max(u, v)))
    return features, y, sorted(edges)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--format", choices=["webkb", "cora-content"], required=True)
    ap.add_argument("--name", required=True)
    ap.add_argument("--nodes", type=Path, required=True)
    ap.add_argument("--edges", type=Path, required=True)
    ap.add_argument("--out", type=Path, required=True)
    args = ap.parse_args()

    parser = parse_webkb if args.format == "webkb" else parse_cora_content
    features, labels, edges = parser(args.nodes, args.edges)
    graph = gs.Graph(
        num_nodes=len(labels),
        edges=gs.canonical_edges(np.array(edges, dtype=np.int64), len(labels)),
        features=Tensor(features),
        labels=labels,
        num_classes=int(labels.max()) + 1,
    )
    gs.save_dataset(graph, args.out, name=args.name)
    print(f"{args.name}: N={graph.num_nodes} E={graph.num_edges} "
          f"F={graph.num_features} C={graph.num_classes} "
          f"h={gs.homophily_ratio(graph):.3f}")


if __name__ == "__main__":
    main()
