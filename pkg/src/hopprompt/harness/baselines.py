"""Reference models for ordering checks: a GCN trained from scratch and full
fine-tuning on top of the link-prediction checkpoint. Node tasks only."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..encoder import EncoderConfig, encoder_forward
from ..errors import ConfigError, DivergenceError, NumericError
from ..graphstore import Graph, SplitSpec, normalize_adjacency
from ..numcore import (
    AdamState,
    Tensor,
    adam_step,
    backward,
    gather_rows,
    matmul,
    relu,
    softmax_nll,
    spmm,
)


@dataclass
class BaselineResult:
    test_accuracy: float
    train_losses: list[float]
    trainable_count: int


def _train_classifier(forward_logits, trainables, g, split, lr, weight_decay,
                      epochs, patience):
    state = AdamState.for_params(trainables, lr=lr, weight_decay=weight_decay)
    y_train = g.labels[split.train_ids]
    losses: list[float] = []
    best = (np.inf, None)
    stale = 0
    for epoch in range(epochs):
        try:
            logits = forward_logits()
            loss = softmax_nll(gather_rows(logits, split.train_ids), y_train, tau=1.0)
            grads = backward(loss)
            adam_step(trainables, grads, state)
        except NumericError as e:
            raise DivergenceError(f"baseline diverged: {e}", epoch=epoch, lr=lr) from e
        value = loss.item()
        losses.append(value)
        if value < best[0] - 1e-12:
            best = (value, [t.data.copy() for t in trainables])
            stale = 0
        else:
            stale += 1
            if patience is not None and stale > patience:
                break
    if best[1] is not None:
        for t, saved in zip(trainables, best[1]):
            t.data = saved
    logits = forward_logits().data
    preds = np.argmax(logits[split.test_ids], axis=1)
    accuracy = float((preds == g.labels[split.test_ids]).mean())
    return accuracy, losses


def train_scratch_gcn(g: Graph, split: SplitSpec, hidden: int, lr: float,
                      weight_decay: float, epochs: int, seed: int,
                      patience: int | None = 50) -> BaselineResult:
    """Two-layer GCN with a supervised softmax head, no pre-training."""
    if g.labels is None:
        raise ConfigError("scratch GCN needs labels")
    rng = np.random.default_rng(seed)
    adj = normalize_adjacency(g)
    f, c = g.num_features, g.num_classes

    def glorot(fan_in, fan_out):
        std = np.sqrt(2.0 / (fan_in + fan_out))
        return Tensor(std * rng.standard_normal((fan_in, fan_out)),
                      requires_grad=True)

    w1 = glorot(f, hidden)
    w2 = glorot(hidden, c)

    def forward_logits():
        h1 = relu(spmm(adj, matmul(g.features, w1)))
        return spmm(adj, matmul(h1, w2))

    accuracy, losses = _train_classifier(forward_logits, [w1, w2], g, split,
                                         lr, weight_decay, epochs, patience)
    return BaselineResult(test_accuracy=accuracy, train_losses=losses,
                          trainable_count=w1.data.size + w2.data.size)


def train_finetune_lp(checkpoint_params, cfg: EncoderConfig, g: Graph,
                      split: SplitSpec, lr: float, weight_decay: float,
                      epochs: int, seed: int,
                      patience: int | None = 50) -> BaselineResult:
    """Full fine-tuning of the pre-trained encoder plus a linear head."""
    if g.labels is None:
        raise ConfigError("fine-tuning needs labels")
    if g.num_features != cfg.feature_dim:
        raise ConfigError(
            f"dataset has {g.num_features} features, checkpoint expects {cfg.feature_dim}"
        )
    rng = np.random.default_rng(seed)
    adj = normalize_adjacency(g)
    params = checkpoint_params
    params.w_in.requires_grad = True
    for lp in params.layers:
        lp.w0.requires_grad = True
    std = np.sqrt(2.0 / (cfg.hidden_dim + g.num_classes))
    head = Tensor(std * rng.standard_normal((cfg.hidden_dim, g.num_classes)),
                  requires_grad=True)
    trainables = [params.w_in] + [lp.w0 for lp in params.layers] + [head]

    def forward_logits():
        stack = encoder_forward(adj, g.features, cfg, params)
        return matmul(stack[-1], head)

    accuracy, losses = _train_classifier(forward_logits, trainables, g, split,
                                         lr, weight_decay, epochs, patience)
    return BaselineResult(
        test_accuracy=accuracy,
        train_losses=losses,
        trainable_count=int(sum(t.data.size for t in trainables)),
    )
