"""Stage two: hop-specific prompting with low-rank encoder adaptation.

Classification is reformulated as similarity against per-class prompt
vectors, one set per encoder layer. A prompt is the mean embedding of that
class's training items (recomputed each epoch from the current adapted
encoder, and kept on the tape so gradients reach the adapter through it)
plus a persistent learnable offset. Per-layer cosine scores are combined
with hop coefficients gamma for prediction; the training loss is the
unweighted sum of per-layer softmax NLL terms, so gamma itself keeps its
structured initialization.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoder import (
    EncoderConfig,
    EncoderParams,
    attach_glora,
    checkpoint_load,
    count_trainable,
    edge_subset_positions,
    encoder_forward,
    partition_params,
)
from .errors import (
    CheckpointError,
    ContractError,
    DivergenceError,
    NumericError,
    ParameterError,
    SplitError,
)
from .graphstore import Graph, GraphSet, SplitSpec, bfs_distances, normalize_adjacency
from .numcore import (
    AdamState,
    Tensor,
    adam_step,
    add,
    backward,
    gather_rows,
    mean_rows,
    row_cosine_sim,
    scale,
    softmax_nll,
    vstack,
)

_NORM_EPS = 1e-12


@dataclass
class ClassPromptSet:
    """Per-layer class prompts: mean anchors (recomputed) + learnable offsets."""

    anchors: list[Tensor]  # L+1 tensors, C x d, live on the tape
    theta: list[Tensor]    # L+1 tensors, C x d, zero-initialized trainables

    def __post_init__(self):
        if len(self.anchors) != len(self.theta):
            raise ContractError("anchor/offset layer counts differ")

    @property
    def num_layers(self) -> int:
        return len(self.anchors)

    def effective(self, layer: int) -> Tensor:
        return add(self.anchors[layer], self.theta[layer])


@dataclass
class HopCoefficients:
    """Learnable per-hop weights; initialized as alpha (1-alpha)^l."""

    gamma: Tensor  # (1, L+1)
    alpha: float


@dataclass
class TaskTokens:
    """One item's per-layer embedding rows (node: center row; graph: mean pool)."""

    tokens: list[Tensor]  # L+1 tensors, each 1 x d
    label: int | None = None


def init_gamma(alpha: float, num_layers: int) -> HopCoefficients:
    """gamma_l = alpha (1-alpha)^l for l < L, gamma_L = (1-alpha)^L; sums to 1."""
    if not 0.0 <= alpha <= 1.0:
        raise ParameterError(f"alpha must be in [0, 1], got {alpha}")
    if num_layers < 1:
        raise ParameterError(f"need >= 1 layer, got {num_layers}")
    values = [alpha * (1.0 - alpha) ** l for l in range(num_layers)]
    values.append((1.0 - alpha) ** num_layers)
    gamma = Tensor(np.array([values]), requires_grad=True)
    return HopCoefficients(gamma=gamma, alpha=alpha)


def node_tokens(g: Graph, params: EncoderParams, cfg: EncoderConfig, v: int,
                adj=None) -> TaskTokens:
    """Run the encoder on v's L-hop ego network; return the center's rows.

    The ego adjacency reuses the full graph's normalization (global degrees),
    so the center rows equal the corresponding full-graph forward rows.
    """
    if cfg.glora_mode == "edge_subset":
        raise ContractError("ego-network path does not support edge_subset mode; "
                            "use the full-graph forward")
    if adj is None:
        adj = normalize_adjacency(g)
    dist = bfs_distances(g, v, max_depth=cfg.layers)
    keep = np.flatnonzero(dist >= 0)
    center = int(np.searchsorted(keep, v))
    sub_adj = adj.submatrix(keep)
    x_sub = gather_rows(g.features, keep)
    sub_params = _restrict_adjacency_factors(params, keep)
    stack = encoder_forward(sub_adj, x_sub, cfg, sub_params)
    tokens = [gather_rows(h, [center]) for h in stack.layers]
    label = None
    if g.labels is not None and g.labels[v] >= 0:
        label = int(g.labels[v])
    return TaskTokens(tokens=tokens, label=label)


def _restrict_adjacency_factors(params: EncoderParams, keep) -> EncoderParams:
    """Gather PA/QA rows for a node subset (gradients still reach the full
    factors through the gather)."""
    if all(lp.pa is None for lp in params.layers):
        return params
    layers = []
    for lp in params.layers:
        if lp.pa is None:
            layers.append(lp)
        else:
            sub = type(lp)(w0=lp.w0, p=lp.p, q=lp.q,
                           pa=gather_rows(lp.pa, keep),
                           qa=gather_rows(lp.qa, keep))
            layers.append(sub)
    return EncoderParams(w_in=params.w_in, layers=layers)


def graph_tokens(item: Graph, params: EncoderParams, cfg: EncoderConfig,
                 adj=None) -> TaskTokens:
    """Whole-graph forward with mean pooling per layer."""
    if adj is None:
        adj = normalize_adjacency(item)
    stack = encoder_forward(adj, item.features, cfg, params)
    tokens = [mean_rows(h) for h in stack.layers]
    return TaskTokens(tokens=tokens, label=item.graph_label)


def init_class_prompts(tokens: list[TaskTokens], labels, encoder_layers: int,
                       num_classes: int) -> ClassPromptSet:
    """Anchors are per-class means of training tokens; offsets start at zero.

    Produces encoder_layers + 1 prompt layers (one per token layer, hop 0
    included).
    """
    y = np.asarray(labels, dtype=np.int64)
    if len(tokens) != y.size:
        raise ContractError(f"{len(tokens)} token sets vs {y.size} labels")
    count = encoder_layers + 1
    if any(len(t.tokens) != count for t in tokens):
        raise ContractError(f"token sets must carry {count} layers")
    mats = [vstack([t.tokens[l] for t in tokens]) for l in range(count)]
    anchors = anchors_from_matrices(mats, y, num_classes)
    width = tokens[0].tokens[0].cols
    theta = [Tensor(np.zeros((num_classes, width)), requires_grad=True)
             for _ in range(count)]
    return ClassPromptSet(anchors=anchors, theta=theta)


def anchors_from_matrices(mats: list[Tensor], y: np.ndarray,
                          num_classes: int) -> list[Tensor]:
    """Per-class row means of each layer matrix (on the tape)."""
    class_ids = [np.flatnonzero(y == c) for c in range(num_classes)]
    for c, ids in enumerate(class_ids):
        if ids.size == 0:
            raise SplitError(f"class {c} has no training items")
    return [
        vstack([mean_rows(gather_rows(mat, ids)) for ids in class_ids])
        for mat in mats
    ]


def hop_scores(tokens: TaskTokens, prompts: ClassPromptSet) -> list[Tensor]:
    """Per-layer cosine similarity rows between one item and the class prompts."""
    if len(tokens.tokens) != prompts.num_layers:
        raise ContractError(
            f"{len(tokens.tokens)} token layers vs {prompts.num_layers} prompt layers"
        )
    return [
        row_cosine_sim(tokens.tokens[l], prompts.effective(l))
        for l in range(prompts.num_layers)
    ]


def aggregate_and_predict(scores, gamma) -> tuple[np.ndarray, int]:
    """Weighted score sum over layers and its argmax (lowest index wins ties)."""
    if isinstance(gamma, HopCoefficients):
        weights = gamma.gamma.data[0]
    else:
        weights = np.asarray(gamma, dtype=np.float64).reshape(-1)
    rows = [s.data[0] if isinstance(s, Tensor) else np.asarray(s, dtype=np.float64).reshape(-1)
            for s in scores]
    if len(rows) != weights.size:
        raise ContractError(f"{len(rows)} score rows vs {weights.size} coefficients")
    combined = np.zeros_like(rows[0])
    for w, row in zip(weights, rows):
        combined = combined + w * row
    return combined, int(np.argmax(combined))


def downstream_loss(tokens: list[TaskTokens], prompts: ClassPromptSet,
                    tau: float):
    """Softmax NLL of cosine scores, summed over layers AND training items
    (per-layer terms are unweighted; gamma never enters the loss)."""
    labels = [t.label for t in tokens]
    if any(lbl is None for lbl in labels):
        raise ContractError("downstream_loss needs labeled tokens")
    y = np.asarray(labels, dtype=np.int64)
    mats = [vstack([t.tokens[l] for t in tokens]) for l in range(prompts.num_layers)]
    return _matrix_loss(mats, prompts, y, tau)


def _matrix_loss(mats: list[Tensor], prompts: ClassPromptSet, y: np.ndarray,
                 tau: float, layers=None):
    total = None
    layer_ids = range(prompts.num_layers) if layers is None else layers
    for l in layer_ids:
        mean_term = softmax_nll(row_cosine_sim(mats[l], prompts.effective(l)), y, tau)
        term = scale(mean_term, float(y.size))  # sum over items, not mean
        total = term if total is None else add(total, term)
    return total


def prompt_param_count(num_layers: int, num_classes: int, width: int) -> int:
    """Trainable prompt-module size: offsets plus hop coefficients."""
    return num_layers * num_classes * width + num_layers


# ---------------------------------------------------------------------------
# stage-two driver
# ---------------------------------------------------------------------------

@dataclass
class PromptTuneConfig:
    alpha: float = 0.5
    rank: int = 8
    glora_mode: str = "full"
    lr: float = 5e-4
    weight_decay: float = 0.0
    tau: float = 0.5
    epochs: int = 200
    seed: int = 0
    patience: int | None = 50  # early stopping on training loss
    last_layer_only: bool = False  # ablation: single prompt at the final layer
    fixed_gamma: bool = False      # ablation: gamma = 1 everywhere, frozen

    def __post_init__(self):
        if self.tau <= 0:
            raise ParameterError(f"tau must be > 0, got {self.tau}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ParameterError(f"alpha must be in [0, 1], got {self.alpha}")
        if self.epochs < 0:
            raise ParameterError(f"epochs must be >= 0, got {self.epochs}")


@dataclass
class TuneResult:
    test_accuracy: float
    train_losses: list[float]
    best_epoch: int
    trainable_encoder: int
    trainable_prompt: int
    predictions: np.ndarray = field(repr=False, default=None)


def _load_encoder(checkpoint, feature_dim: int):
    if isinstance(checkpoint, (str, Path)):
        params, cfg = checkpoint_load(checkpoint)
    else:
        params, cfg = checkpoint
    if cfg.feature_dim != feature_dim:
        raise CheckpointError(
            f"checkpoint expects {cfg.feature_dim} features, dataset has {feature_dim}"
        )
    params.w_in.requires_grad = False
    for lp in params.layers:
        lp.w0.requires_grad = False
    return params, cfg


def _guarded_scores(mat: np.ndarray, prompts: np.ndarray) -> np.ndarray:
    """Eval-time cosine with a zero-similarity fallback for degenerate rows."""
    mn = np.linalg.norm(mat, axis=1)
    pn = np.linalg.norm(prompts, axis=1)
    mn_safe = np.where(mn < _NORM_EPS, 1.0, mn)
    pn_safe = np.where(pn < _NORM_EPS, 1.0, pn)
    s = (mat / mn_safe[:, None]) @ (prompts / pn_safe[:, None]).T
    s[mn < _NORM_EPS] = 0.0
    s[:, pn < _NORM_EPS] = 0.0
    return s


def run_prompt_tune(checkpoint, data: Graph | GraphSet, split: SplitSpec,
                    tcfg: PromptTuneConfig) -> tuple[EncoderParams, TuneResult]:
    """Jointly tune adapters, prompt offsets, and hop coefficients.

    `checkpoint` is a path or an in-memory (params, config) pair; base encoder
    weights are frozen either way. Deterministic for a fixed (seed, split).
    """
    if isinstance(data, GraphSet):
        return _tune_graph_task(checkpoint, data, split, tcfg)
    return _tune_node_task(checkpoint, data, split, tcfg)


def _make_stage_two(params, base_cfg, tcfg, rng, *, num_nodes=None,
                    edge_positions=None, adjacency_adaptation=True):
    cfg = EncoderConfig(layers=base_cfg.layers, dims=base_cfg.dims,
                        rank=tcfg.rank, glora_mode=tcfg.glora_mode)
    if tcfg.glora_mode != "off":
        params = attach_glora(params, cfg, rng, num_nodes=num_nodes,
                              edge_positions=edge_positions,
                              adjacency_adaptation=adjacency_adaptation)
    return params, cfg


def _prompt_trainables(theta, gamma, tcfg, num_layers):
    if tcfg.last_layer_only:
        trainables = [theta[num_layers - 1]]
    else:
        trainables = list(theta)
    if not tcfg.fixed_gamma:
        trainables.append(gamma.gamma)
    return trainables


def _tune_node_task(checkpoint, g: Graph, split: SplitSpec, tcfg: PromptTuneConfig):
    if g.labels is None:
        raise ParameterError("node tuning needs labels")
    params, base_cfg = _load_encoder(checkpoint, g.num_features)
    rng = np.random.default_rng(tcfg.seed)
    adj = normalize_adjacency(g)
    positions = None
    if tcfg.glora_mode == "edge_subset":
        positions = edge_subset_positions(adj, split.train_ids)
    params, cfg = _make_stage_two(params, base_cfg, tcfg, rng,
                                  num_nodes=g.num_nodes, edge_positions=positions)
    num_layers = cfg.layers + 1
    width = cfg.hidden_dim
    c = g.num_classes
    theta = [Tensor(np.zeros((c, width)), requires_grad=True)
             for _ in range(num_layers)]
    if tcfg.fixed_gamma:
        gamma = HopCoefficients(gamma=Tensor(np.ones((1, num_layers))), alpha=tcfg.alpha)
    else:
        gamma = init_gamma(tcfg.alpha, cfg.layers)

    encoder_trainables, _frozen = partition_params(params, "prompt")
    trainables = encoder_trainables + _prompt_trainables(theta, gamma, tcfg, num_layers)
    state = AdamState.for_params(trainables, lr=tcfg.lr,
                                 weight_decay=tcfg.weight_decay)
    y_train = g.labels[split.train_ids]
    layer_ids = [num_layers - 1] if tcfg.last_layer_only else None

    def epoch_forward():
        stack = encoder_forward(adj, g.features, cfg, params)
        mats = [gather_rows(h, split.train_ids) for h in stack.layers]
        anchors = anchors_from_matrices(mats, y_train, c)
        return mats, ClassPromptSet(anchors=anchors, theta=theta)

    train_losses: list[float] = []
    best = (np.inf, -1, None)
    stale = 0
    for epoch in range(tcfg.epochs):
        try:
            mats, prompts = epoch_forward()
            loss = _matrix_loss(mats, prompts, y_train, tcfg.tau, layers=layer_ids)
            grads = backward(loss)
            adam_step(trainables, grads, state)
        except NumericError as e:
            raise DivergenceError(f"prompt tuning diverged: {e}",
                                  epoch=epoch, lr=tcfg.lr) from e
        value = loss.item()
        train_losses.append(value)
        if value < best[0] - 1e-12:
            best = (value, epoch, [t.data.copy() for t in trainables])
            stale = 0
        else:
            stale += 1
            if tcfg.patience is not None and stale > tcfg.patience:
                break
    if best[2] is not None:
        for t, saved in zip(trainables, best[2]):
            t.data = saved

    # final evaluation with tuned parameters
    stack = encoder_forward(adj, g.features, cfg, params)
    layer_data = [h.data for h in stack.layers]
    anchor_data = _anchor_arrays(layer_data, split.train_ids, y_train, c)
    weights = _effective_gamma(gamma, tcfg, num_layers)
    preds = _predict_rows(layer_data, anchor_data,
                          [t.data for t in theta], weights, split.test_ids)
    accuracy = float((preds == g.labels[split.test_ids]).mean())
    result = TuneResult(
        test_accuracy=accuracy,
        train_losses=train_losses,
        best_epoch=best[1],
        trainable_encoder=count_trainable(params, "prompt"),
        trainable_prompt=int(sum(t.data.size for t in
                                 _prompt_trainables(theta, gamma, tcfg, num_layers))),
        predictions=preds,
    )
    return params, result


def _effective_gamma(gamma: HopCoefficients, tcfg: PromptTuneConfig,
                     num_layers: int) -> np.ndarray:
    if tcfg.last_layer_only:
        weights = np.zeros(num_layers)
        weights[-1] = 1.0
        return weights
    return gamma.gamma.data[0]


def _anchor_arrays(layer_data, train_ids, y_train, num_classes):
    anchors = []
    for h in layer_data:
        rows = h[train_ids]
        anchors.append(np.stack([
            rows[y_train == cls].mean(axis=0) for cls in range(num_classes)
        ]))
    return anchors


def _predict_rows(layer_data, anchor_data, theta_data, weights, ids):
    combined = None
    for w, h, anchor, off in zip(weights, layer_data, anchor_data, theta_data):
        scores = _guarded_scores(h[ids], anchor + off)
        combined = w * scores if combined is None else combined + w * scores
    return np.argmax(combined, axis=1)


def _tune_graph_task(checkpoint, items: GraphSet, split: SplitSpec,
                     tcfg: PromptTuneConfig):
    params, base_cfg = _load_encoder(checkpoint, items.graphs[0].num_features)
    rng = np.random.default_rng(tcfg.seed)
    # per-item graphs vary in size, so adjacency-side adaptation is disabled
    params, cfg = _make_stage_two(params, base_cfg, tcfg, rng,
                                  adjacency_adaptation=False)
    num_layers = cfg.layers + 1
    width = cfg.hidden_dim
    c = items.num_classes
    labels = items.labels
    theta = [Tensor(np.zeros((c, width)), requires_grad=True)
             for _ in range(num_layers)]
    if tcfg.fixed_gamma:
        gamma = HopCoefficients(gamma=Tensor(np.ones((1, num_layers))), alpha=tcfg.alpha)
    else:
        gamma = init_gamma(tcfg.alpha, cfg.layers)
    encoder_trainables, _frozen = partition_params(params, "prompt")
    trainables = encoder_trainables + _prompt_trainables(theta, gamma, tcfg, num_layers)
    state = AdamState.for_params(trainables, lr=tcfg.lr,
                                 weight_decay=tcfg.weight_decay)
    train_adjs = {int(i): normalize_adjacency(items.graphs[int(i)])
                  for i in split.train_ids}
    y_train = labels[split.train_ids]
    layer_ids = [num_layers - 1] if tcfg.last_layer_only else None

    def epoch_tokens():
        tokens = [graph_tokens(items.graphs[int(i)], params, cfg, adj=train_adjs[int(i)])
                  for i in split.train_ids]
        mats = [vstack([t.tokens[l] for t in tokens]) for l in range(num_layers)]
        anchors = anchors_from_matrices(mats, y_train, c)
        return mats, ClassPromptSet(anchors=anchors, theta=theta)

    train_losses: list[float] = []
    best = (np.inf, -1, None)
    stale = 0
    for epoch in range(tcfg.epochs):
        try:
            mats, prompts = epoch_tokens()
            loss = _matrix_loss(mats, prompts, y_train, tcfg.tau, layers=layer_ids)
            grads = backward(loss)
            adam_step(trainables, grads, state)
        except NumericError as e:
            raise DivergenceError(f"prompt tuning diverged: {e}",
                                  epoch=epoch, lr=tcfg.lr) from e
        value = loss.item()
        train_losses.append(value)
        if value < best[0] - 1e-12:
            best = (value, epoch, [t.data.copy() for t in trainables])
            stale = 0
        else:
            stale += 1
            if tcfg.patience is not None and stale > tcfg.patience:
                break
    if best[2] is not None:
        for t, saved in zip(trainables, best[2]):
            t.data = saved

    train_token_data = [
        [t.data for t in graph_tokens(items.graphs[int(i)], params, cfg).tokens]
        for i in split.train_ids
    ]
    anchor_data = []
    for l in range(num_layers):
        mat = np.concatenate([tok[l] for tok in train_token_data])
        anchor_data.append(np.stack([
            mat[y_train == cls].mean(axis=0) for cls in range(c)
        ]))
    weights = _effective_gamma(gamma, tcfg, num_layers)
    preds = []
    for i in split.test_ids:
        tok = graph_tokens(items.graphs[int(i)], params, cfg)
        mat_rows = [t.data for t in tok.tokens]
        combined = None
        for w, row, anchor, off in zip(weights, mat_rows, anchor_data,
                                       [t.data for t in theta]):
            scores = _guarded_scores(row, anchor + off)
            combined = w * scores if combined is None else combined + w * scores
        preds.append(int(np.argmax(combined[0])))
    preds = np.array(preds, dtype=np.int64)
    accuracy = float((preds == labels[split.test_ids]).mean())
    result = TuneResult(
        test_accuracy=accuracy,
        train_losses=train_losses,
        best_epoch=best[1],
        trainable_encoder=count_trainable(params, "prompt"),
        trainable_prompt=int(sum(t.data.size for t in
                                 _prompt_trainables(theta, gamma, tcfg, num_layers))),
        predictions=preds,
    )
    return params, result
