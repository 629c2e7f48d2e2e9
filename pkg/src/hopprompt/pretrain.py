"""Stage one: contrastive link-prediction pre-training.

Each node v contributes triplets (v, a, b) with a drawn from its neighbors
and b from its non-neighbors; the encoder (plus one extra aggregation over
the normalized adjacency) is trained so cosine(s_v, s_a) beats
cosine(s_v, s_b) under a temperature-scaled two-way softmax.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoder import (
    EncoderConfig,
    checkpoint_save,
    encoder_forward,
    init_encoder,
    partition_params,
)
from .errors import (
    DivergenceError,
    NumericError,
    ParameterError,
    PretrainInfeasibleError,
)
from .graphstore import Graph, GraphSet, disjoint_union, normalize_adjacency
from .numcore import (
    AdamState,
    adam_step,
    backward,
    gather_rows,
    hstack,
    rowwise_cosine_sim,
    softmax_nll,
    spmm,
)


@dataclass(frozen=True)
class Triplet:
    v: int  # anchor
    a: int  # connected positive
    b: int  # non-connected negative


@dataclass
class PretrainConfig:
    tau: float = 0.5
    negatives: int = 1  # K
    epochs: int = 200
    batch_size: int = 512
    lr: float = 1e-3
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.tau <= 0:
            raise ParameterError(f"tau must be > 0, got {self.tau}")
        if self.negatives < 1:
            raise ParameterError(f"need >= 1 negative, got {self.negatives}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ParameterError("epochs and batch_size must be >= 1")


def build_triplets(g: Graph, k_negatives: int, seed: int) -> list[Triplet]:
    """One positive per node, k uniform negatives per positive.

    Nodes without a neighbor or without a non-neighbor are skipped with a
    warning; a graph yielding no triplets at all is infeasible.
    """
    if g.num_edges == 0:
        raise PretrainInfeasibleError("graph has no edges; cannot pre-train")
    rng = np.random.default_rng(seed)
    triplets: list[Triplet] = []
    skipped = 0
    for v in range(g.num_nodes):
        nbrs = g.neighbor_list(v)
        if nbrs.size == 0 or nbrs.size >= g.num_nodes - 1:
            skipped += 1
            continue
        mask = np.ones(g.num_nodes, dtype=bool)
        mask[nbrs] = False
        mask[v] = False
        pool = np.flatnonzero(mask)
        a = int(rng.choice(nbrs))
        for b in rng.choice(pool, size=k_negatives, replace=True):
            triplets.append(Triplet(v=v, a=a, b=int(b)))
    if skipped:
        warnings.warn(f"{skipped} node(s) lack a neighbor or a non-neighbor; skipped")
    if not triplets:
        raise PretrainInfeasibleError(
            "no node admits a (positive, negative) pair; cannot pre-train"
        )
    return triplets


def pretrain_loss(stack, adj, triplets: list[Triplet], tau: float):
    """Mean two-way contrastive loss over triplets.

    Embeddings get one extra aggregation step: s = adj @ H(L).
    """
    if tau <= 0:
        raise ParameterError(f"tau must be > 0, got {tau}")
    s = spmm(adj, stack[-1])
    v_ids = [t.v for t in triplets]
    a_ids = [t.a for t in triplets]
    b_ids = [t.b for t in triplets]
    sv = gather_rows(s, v_ids)
    sim_pos = rowwise_cosine_sim(sv, gather_rows(s, a_ids))
    sim_neg = rowwise_cosine_sim(sv, gather_rows(s, b_ids))
    scores = hstack([sim_pos, sim_neg])
    return softmax_nll(scores, np.zeros(len(triplets), dtype=np.int64), tau)


def _epoch_seed(seed: int, epoch: int) -> int:
    return int(np.random.SeedSequence(entropy=(seed, epoch)).generate_state(1)[0])


def run_pretrain(data: Graph | GraphSet, cfg: EncoderConfig, pcfg: PretrainConfig,
                 out_path=None):
    """Train the base encoder by link prediction; returns (params, losses).

    `losses` is a list of (epoch, mean_loss). GraphSet datasets are trained on
    the disjoint union of their member graphs (label-free). When out_path is
    set, a checkpoint plus `<out>.losses.csv` are written.
    """
    g = disjoint_union(data.graphs) if isinstance(data, GraphSet) else data
    if g.num_features != cfg.feature_dim:
        raise ParameterError(
            f"dataset has {g.num_features} features, config expects {cfg.feature_dim}"
        )
    rng = np.random.default_rng(pcfg.seed)
    params = init_encoder(cfg, rng)
    adj = normalize_adjacency(g)
    trainable, _ = partition_params(params, "pretrain")
    state = AdamState.for_params(trainable, lr=pcfg.lr, weight_decay=pcfg.weight_decay)

    losses: list[tuple[int, float]] = []
    for epoch in range(pcfg.epochs):
        triplets = build_triplets(g, pcfg.negatives, _epoch_seed(pcfg.seed, epoch))
        order = rng.permutation(len(triplets))
        total, count = 0.0, 0
        for start in range(0, len(triplets), pcfg.batch_size):
            batch = [triplets[i] for i in order[start:start + pcfg.batch_size]]
            try:
                stack = encoder_forward(adj, g.features, cfg, params)
                loss = pretrain_loss(stack, adj, batch, pcfg.tau)
                grads = backward(loss)
                adam_step(trainable, grads, state)
            except NumericError as e:
                raise DivergenceError(f"pre-training diverged: {e}",
                                      epoch=epoch, lr=pcfg.lr) from e
            total += loss.item() * len(batch)
            count += len(batch)
        losses.append((epoch, total / count))

    if out_path is not None:
        out_path = Path(out_path)
        checkpoint_save(params, cfg, out_path)
        write_loss_curve(losses, out_path.with_name(out_path.name + ".losses.csv"))
    return params, losses


def write_loss_curve(losses, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "mean_loss"])
        for epoch, value in losses:
            writer.writerow([epoch, repr(float(value))])
