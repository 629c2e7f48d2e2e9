"""Synthetic heterophily graphs: seeded random labeled graphs plus
degree-preserving rewiring toward a target homophily ratio."""

from __future__ import annotations

import numpy as np

from ..errors import ParameterError, RewireInfeasibleError, StructuralError
from ..numcore import Tensor
from .graph import Graph, canonical_edges, homophily_ratio

REWIRE_TOLERANCE = 0.02


class _IndexPool:
    """Set of ints with O(1) add/remove/uniform-sample."""

    def __init__(self, items):
        self.items = list(items)
        self.pos = {x: i for i, x in enumerate(self.items)}

    def __len__(self):
        return len(self.items)

    def __contains__(self, x):
        return x in self.pos

    def add(self, x):
        if x not in self.pos:
            self.pos[x] = len(self.items)
            self.items.append(x)

    def remove(self, x):
        i = self.pos.pop(x)
        last = self.items.pop()
        if i < len(self.items):
            self.items[i] = last
            self.pos[last] = i

    def sample(self, rng) -> int:
        return self.items[int(rng.integers(len(self.items)))]


def random_labeled_graph(num_nodes: int, num_edges: int, num_classes: int,
                         feature_dim: int, seed: int, class_sep: float = 1.0,
                         noise: float = 1.0) -> Graph:
    """Uniform random simple graph with balanced labels and Gaussian class-mean
    features (class_sep/noise controls how learnable the labels are)."""
    max_edges = num_nodes * (num_nodes - 1) // 2
    if num_edges > max_edges:
        raise ParameterError(f"{num_edges} edges exceed the {max_edges} possible")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(num_nodes) % num_classes)
    chosen: set[int] = set()
    while len(chosen) < num_edges:
        need = num_edges - len(chosen)
        u = rng.integers(0, num_nodes, size=2 * need + 8)
        v = rng.integers(0, num_nodes, size=2 * need + 8)
        for a, b in zip(u, v):
            if a == b:
                continue
            key = int(min(a, b)) * num_nodes + int(max(a, b))
            if key not in chosen:
                chosen.add(key)
                if len(chosen) == num_edges:
                    break
    keys = np.array(sorted(chosen), dtype=np.int64)
    edges = np.stack([keys // num_nodes, keys % num_nodes], axis=1)
    means = class_sep * rng.standard_normal((num_classes, feature_dim))
    feats = means[labels] + noise * rng.standard_normal((num_nodes, feature_dim))
    return Graph(
        num_nodes=num_nodes,
        edges=canonical_edges(edges, num_nodes),
        features=Tensor(feats),
        labels=labels,
        num_classes=num_classes,
    )


def synth_rewire(g: Graph, target_h: float, seed: int) -> Graph:
    """Rewire toward a target homophily ratio with degree-preserving edge swaps.

    Nodes, features, labels, degree sequence, and edge count are preserved.
    Two edges are drawn from the pool whose type (intra/inter-class) must
    shrink, and an endpoint swap is applied when it moves the intra-class edge
    count toward the target; stops inside the tolerance or after 50*E attempts,
    raising RewireInfeasibleError (with the achieved range) in the latter case.
    """
    if not 0.0 < target_h < 1.0:
        raise ParameterError(f"target homophily must be in (0, 1), got {target_h}")
    if g.labels is None:
        raise ParameterError("synth_rewire needs labels")
    if np.any(g.labels < 0):
        raise ParameterError("synth_rewire needs fully labeled nodes")
    if g.num_edges == 0:
        raise StructuralError("synth_rewire needs at least one edge")

    rng = np.random.default_rng(seed)
    n = g.num_nodes
    y = g.labels
    edges = g.edges.copy()
    num_edges = len(edges)
    edge_set = {int(u) * n + int(v) for u, v in edges}

    same = y[edges[:, 0]] == y[edges[:, 1]]
    intra_pool = _IndexPool(np.flatnonzero(same).tolist())
    inter_pool = _IndexPool(np.flatnonzero(~same).tolist())

    target_intra = target_h * num_edges
    # stop well inside the +-0.02 contract so the achieved value has margin
    stop_gap = max(1.0, 0.001 * num_edges)
    max_attempts = 50 * num_edges
    intra = len(intra_pool)
    lo_seen = hi_seen = intra / num_edges

    def current_gap():
        return abs(intra - target_intra)

    attempts = 0
    while current_gap() > stop_gap and attempts < max_attempts:
        attempts += 1
        need_more = intra < target_intra
        pool = inter_pool if need_more else intra_pool
        if len(pool) < 2:
            break
        i = pool.sample(rng)
        j = pool.sample(rng)
        if i == j:
            continue
        a, b = int(edges[i, 0]), int(edges[i, 1])
        c, d = int(edges[j, 0]), int(edges[j, 1])
        best = None
        for e1, e2 in (((a, d), (c, b)), ((a, c), (b, d))):
            u1, v1 = min(e1), max(e1)
            u2, v2 = min(e2), max(e2)
            if u1 == v1 or u2 == v2:
                continue
            k1, k2 = u1 * n + v1, u2 * n + v2
            if k1 == k2 or k1 in edge_set or k2 in edge_set:
                continue
            gain = int(y[u1] == y[v1]) + int(y[u2] == y[v2]) \
                - int(y[a] == y[b]) - int(y[c] == y[d])
            moved = abs(intra + gain - target_intra) < current_gap()
            if moved and (best is None or abs(gain) > abs(best[0])):
                best = (gain, (u1, v1), (u2, v2), k1, k2)
        if best is None:
            continue
        gain, e1, e2, k1, k2 = best
        edge_set.discard(int(edges[i, 0]) * n + int(edges[i, 1]))
        edge_set.discard(int(edges[j, 0]) * n + int(edges[j, 1]))
        edge_set.add(k1)
        edge_set.add(k2)
        edges[i] = e1
        edges[j] = e2
        for idx, (u, v) in ((i, e1), (j, e2)):
            was_intra = idx in intra_pool
            is_intra = y[u] == y[v]
            if is_intra and not was_intra:
                inter_pool.remove(idx)
                intra_pool.add(idx)
            elif not is_intra and was_intra:
                intra_pool.remove(idx)
                inter_pool.add(idx)
        intra += gain
        h_now = intra / num_edges
        lo_seen = min(lo_seen, h_now)
        hi_seen = max(hi_seen, h_now)

    achieved = intra / num_edges
    if abs(achieved - target_h) > REWIRE_TOLERANCE:
        raise RewireInfeasibleError(target_h, (lo_seen, hi_seen))

    out = Graph(
        num_nodes=n,
        edges=canonical_edges(edges, n),
        features=g.features,
        labels=g.labels,
        num_classes=g.num_classes,
        graph_label=g.graph_label,
    )
    assert out.num_edges == g.num_edges  # swaps never merge or drop edges
    assert abs(homophily_ratio(out) - achieved) < 1e-12
    return out
