"""GCN backbone with dual low-rank adaptation.

Each layer computes (A_hat + PA QA^T) H W with W = W0 + P Q^T; the base
weights W0 (and the input linear map) are learned during pre-training and
frozen afterwards, while the low-rank factors are the stage-two trainables.
Adaptation factors are zero-initialized on one side so a freshly attached
adapter reproduces the frozen encoder exactly.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CheckpointError, ContractError, DimensionError, ParameterError
from .numcore import (
    SparseMatrix,
    Tensor,
    add,
    matmul,
    rank_one_update_spmm,
    relu,
    scatter_rows,
    spmm,
    transpose,
    vstack,
)

GLORA_MODES = ("off", "full", "edge_subset")

GLORA_INIT_STD = 0.02  # one-sided Gaussian; the other factor starts at zero

_MAGIC = b"DAGP"
_VERSION = 1


@dataclass
class EncoderConfig:
    layers: int
    dims: list[int]  # [F, d, d, ..., d]; hidden widths must all agree
    rank: int = 8
    glora_mode: str = "off"

    def __post_init__(self):
        if self.layers < 1:
            raise ParameterError(f"need >= 1 layer, got {self.layers}")
        if len(self.dims) != self.layers + 1:
            raise ParameterError(
                f"dims must have layers+1 entries, got {len(self.dims)} for {self.layers}"
            )
        hidden = set(self.dims[1:])
        if len(hidden) != 1:
            raise ParameterError(f"hidden widths must all agree, got {sorted(hidden)}")
        if self.glora_mode not in GLORA_MODES:
            raise ParameterError(f"glora_mode must be one of {GLORA_MODES}")
        if self.glora_mode != "off" and self.rank < 1:
            raise ParameterError(f"rank must be >= 1 with GLoRA on, got {self.rank}")
        self.dims = [int(d) for d in self.dims]

    @property
    def feature_dim(self) -> int:
        return self.dims[0]

    @property
    def hidden_dim(self) -> int:
        return self.dims[1]

    def to_json(self) -> str:
        return json.dumps(
            {"layers": self.layers, "dims": self.dims, "rank": self.rank,
             "glora_mode": self.glora_mode},
            sort_keys=True,
        )

    @classmethod
    def from_json(cls, blob: str) -> "EncoderConfig":
        try:
            raw = json.loads(blob)
            return cls(layers=int(raw["layers"]), dims=list(raw["dims"]),
                       rank=int(raw["rank"]), glora_mode=str(raw["glora_mode"]))
        except (KeyError, TypeError, ValueError) as e:
            raise CheckpointError(f"bad config blob: {e}") from e


@dataclass
class LayerParams:
    w0: Tensor
    p: Tensor | None = None
    q: Tensor | None = None
    pa: Tensor | None = None
    qa: Tensor | None = None
    edge_weights: Tensor | None = None

    def has_glora(self) -> bool:
        return any(t is not None for t in (self.p, self.q, self.pa, self.qa,
                                           self.edge_weights))


@dataclass
class EncoderParams:
    w_in: Tensor
    layers: list[LayerParams]
    # CSR value positions of each selected undirected edge (E_sel, 2): the
    # (u,v) and (v,u) slots that share one trainable weight (edge_subset mode)
    edge_positions: np.ndarray | None = field(default=None, repr=False)


@dataclass
class EmbeddingStack:
    """Per-layer embeddings H(0..L); H(0) is the input linear map's output."""

    layers: list[Tensor]

    def __post_init__(self):
        widths = {t.cols for t in self.layers}
        if len(widths) != 1:
            raise DimensionError(f"embedding widths must agree, got {sorted(widths)}")
        rows = {t.rows for t in self.layers}
        if len(rows) != 1:
            raise DimensionError(f"embedding row counts must agree, got {sorted(rows)}")

    def __len__(self):
        return len(self.layers)

    def __getitem__(self, i) -> Tensor:
        return self.layers[i]


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> Tensor:
    std = np.sqrt(2.0 / (fan_in + fan_out))
    return Tensor(std * rng.standard_normal((fan_in, fan_out)), requires_grad=True)


def init_encoder(cfg: EncoderConfig, rng: np.random.Generator) -> EncoderParams:
    """Fresh pre-training parameters: input map plus one W0 per layer."""
    w_in = _glorot(rng, cfg.feature_dim, cfg.hidden_dim)
    layers = [
        LayerParams(w0=_glorot(rng, cfg.hidden_dim, cfg.dims[l]))
        for l in range(1, cfg.layers + 1)
    ]
    return EncoderParams(w_in=w_in, layers=layers)


def edge_subset_positions(adj: SparseMatrix, train_ids) -> np.ndarray:
    """CSR value positions, paired per undirected edge, for off-diagonal
    entries incident to a training node."""
    train = np.zeros(adj.shape[0], dtype=bool)
    train[np.asarray(train_ids, dtype=np.int64)] = True
    rows = adj.nnz_rows()
    cols = adj.col_indices
    sel = (rows < cols) & (train[rows] | train[cols])
    upper = np.flatnonzero(sel)
    # locate the mirrored (v,u) slot for each selected (u,v)
    pos_of = {}
    for k in range(adj.nnz):
        pos_of[(int(rows[k]), int(cols[k]))] = k
    pairs = np.array(
        [[k, pos_of[(int(cols[k]), int(rows[k]))]] for k in upper], dtype=np.int64
    ).reshape(-1, 2)
    return pairs


def attach_glora(params: EncoderParams, cfg: EncoderConfig,
                 rng: np.random.Generator, num_nodes: int | None = None,
                 edge_positions: np.ndarray | None = None,
                 adjacency_adaptation: bool = True) -> EncoderParams:
    """Add trainable low-rank factors for stage two.

    P (and PA) start Gaussian, Q (and QA, and edge weights) start at zero, so
    the adapted forward initially equals the frozen one exactly. Set
    `adjacency_adaptation=False` to attach only the projection factors
    (graph-level tasks, where per-item adjacency sizes vary).
    """
    if cfg.glora_mode == "off":
        raise ContractError("attach_glora called with glora_mode=off")
    layers = []
    for l, lp in enumerate(params.layers):
        d_in, d_out = lp.w0.shape
        new = LayerParams(
            w0=lp.w0,
            p=Tensor(GLORA_INIT_STD * rng.standard_normal((d_in, cfg.rank)),
                     requires_grad=True),
            q=Tensor(np.zeros((d_out, cfg.rank)), requires_grad=True),
        )
        if adjacency_adaptation and cfg.glora_mode == "full":
            if num_nodes is None:
                raise ContractError("full GLoRA needs num_nodes")
            new.pa = Tensor(GLORA_INIT_STD * rng.standard_normal((num_nodes, 1)),
                            requires_grad=True)
            new.qa = Tensor(np.zeros((num_nodes, 1)), requires_grad=True)
        elif adjacency_adaptation and cfg.glora_mode == "edge_subset":
            if edge_positions is None:
                raise ContractError("edge_subset GLoRA needs edge_positions")
            new.edge_weights = Tensor(np.zeros((len(edge_positions), 1)),
                                      requires_grad=True)
        layers.append(new)
    return EncoderParams(w_in=params.w_in, layers=layers,
                         edge_positions=edge_positions)


def encoder_forward(adj: SparseMatrix, x: Tensor, cfg: EncoderConfig,
                    params: EncoderParams) -> EmbeddingStack:
    """Run the (possibly adapted) encoder; ReLU on interior layers only."""
    n = adj.shape[0]
    if adj.shape[1] != n:
        raise DimensionError(f"adjacency must be square, got {adj.shape}")
    if x.rows != n or x.cols != cfg.feature_dim:
        raise DimensionError(
            f"features must be ({n}, {cfg.feature_dim}), got {x.shape}"
        )
    if len(params.layers) != cfg.layers:
        raise DimensionError(
            f"params carry {len(params.layers)} layers, config says {cfg.layers}"
        )
    if cfg.glora_mode == "off" and any(lp.has_glora() for lp in params.layers):
        raise ContractError("GLoRA factors present but glora_mode=off")

    h = matmul(x, params.w_in)
    stack = [h]
    base_values = Tensor(adj.values[:, None])
    for l, lp in enumerate(params.layers):
        weight = lp.w0
        if lp.p is not None and lp.q is not None:
            weight = add(weight, matmul(lp.p, transpose(lp.q)))
        if lp.pa is not None and lp.qa is not None:
            agg = rank_one_update_spmm(adj, lp.pa, lp.qa, h)
        elif lp.edge_weights is not None:
            if params.edge_positions is None:
                raise ContractError("edge weights present but no edge_positions")
            # one shared scalar per selected undirected edge, added to both
            # of its CSR slots
            doubled = vstack([lp.edge_weights, lp.edge_weights])
            slots = np.concatenate([params.edge_positions[:, 0],
                                    params.edge_positions[:, 1]])
            values = add(base_values, scatter_rows(doubled, slots, adj.nnz))
            agg = spmm(adj, h, values=values)
        else:
            agg = spmm(adj, h)
        h = matmul(agg, weight)
        if l < len(params.layers) - 1:
            h = relu(h)
        stack.append(h)
    return EmbeddingStack(layers=stack)


def partition_params(params: EncoderParams, stage: str):
    """Split encoder parameters into (trainable, frozen) for a stage."""
    if stage not in ("pretrain", "prompt"):
        raise ParameterError(f"stage must be 'pretrain' or 'prompt', got {stage!r}")
    base = [params.w_in] + [lp.w0 for lp in params.layers]
    adapters = []
    for lp in params.layers:
        for t in (lp.p, lp.q, lp.pa, lp.qa, lp.edge_weights):
            if t is not None:
                adapters.append(t)
    if stage == "pretrain":
        if adapters:
            raise ContractError("GLoRA factors must not exist during pre-training")
        return base, []
    return adapters, base


def count_trainable(params: EncoderParams, stage: str) -> int:
    trainable, _frozen = partition_params(params, stage)
    return int(sum(t.data.size for t in trainable))


def glora_param_count(cfg: EncoderConfig, num_nodes: int | None = None,
                      num_selected_edges: int | None = None) -> int:
    """Closed-form stage-two encoder trainable count (cross-check oracle)."""
    if cfg.glora_mode == "off":
        return 0
    proj = sum(cfg.rank * (cfg.hidden_dim + cfg.dims[l])
               for l in range(1, cfg.layers + 1))
    if cfg.glora_mode == "full":
        if num_nodes is None:
            raise ParameterError("full mode count needs num_nodes")
        return proj + 2 * num_nodes * cfg.layers
    if num_selected_edges is None:
        raise ParameterError("edge_subset count needs num_selected_edges")
    return proj + num_selected_edges * cfg.layers


# ---------------------------------------------------------------------------
# checkpoint container: magic "DAGP", u32 version, length-prefixed config
# JSON, then (name_len, name, ndim, dims..., float32 payload) records to EOF,
# all little-endian
# ---------------------------------------------------------------------------

def _named_tensors(params: EncoderParams):
    yield "w_in", params.w_in
    for i, lp in enumerate(params.layers):
        yield f"layer{i}.w0", lp.w0
        for attr in ("p", "q", "pa", "qa", "edge_weights"):
            t = getattr(lp, attr)
            if t is not None:
                yield f"layer{i}.{attr}", t


def checkpoint_save(params: EncoderParams, cfg: EncoderConfig, path) -> None:
    blob = cfg.to_json().encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for name, tensor in _named_tensors(params):
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<I", 2))
            fh.write(struct.pack("<II", *tensor.shape))
            fh.write(tensor.data.astype("<f4").tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise CheckpointError(f"truncated checkpoint while reading {what}")
    return data


def checkpoint_load(path, expect_cfg: EncoderConfig | None = None):
    """Read a checkpoint; returns (EncoderParams, EncoderConfig).

    Loaded tensors are trainable-flagged off; callers opt parameters into
    training via partition_params and the optimizer param list.
    """
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, "magic") != _MAGIC:
            raise CheckpointError("bad magic bytes (not a checkpoint)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != _VERSION:
            raise CheckpointError(f"version {version} unsupported (want {_VERSION})")
        (blob_len,) = struct.unpack("<I", _read_exact(fh, 4, "config length"))
        cfg = EncoderConfig.from_json(_read_exact(fh, blob_len, "config").decode("utf-8"))
        tensors: dict[str, Tensor] = {}
        while True:
            head = fh.read(4)
            if not head:
                break
            if len(head) != 4:
                raise CheckpointError("truncated checkpoint while reading record header")
            (name_len,) = struct.unpack("<I", head)
            name = _read_exact(fh, name_len, "record name").decode("utf-8")
            (ndim,) = struct.unpack("<I", _read_exact(fh, 4, f"{name} rank"))
            if ndim != 2:
                raise CheckpointError(f"{name}: rank {ndim} unsupported")
            rows, cols = struct.unpack("<II", _read_exact(fh, 8, f"{name} dims"))
            payload = _read_exact(fh, 4 * rows * cols, f"{name} payload")
            data = np.frombuffer(payload, dtype="<f4").astype(np.float64)
            tensors[name] = Tensor(data.reshape(rows, cols))

    if expect_cfg is not None and (
        expect_cfg.layers != cfg.layers or expect_cfg.dims != cfg.dims
    ):
        raise CheckpointError(
            f"config mismatch: checkpoint dims {cfg.dims} vs requested {expect_cfg.dims}"
        )
    if "w_in" not in tensors:
        raise CheckpointError("checkpoint missing w_in")
    expected_win = (cfg.feature_dim, cfg.hidden_dim)
    if tensors["w_in"].shape != expected_win:
        raise CheckpointError(
            f"w_in shape {tensors['w_in'].shape} vs config-implied {expected_win}"
        )
    layers = []
    for l in range(cfg.layers):
        key = f"layer{l}.w0"
        if key not in tensors:
            raise CheckpointError(f"checkpoint missing {key}")
        want = (cfg.hidden_dim, cfg.dims[l + 1])  # l is 0-based here
        if tensors[key].shape != want:
            raise CheckpointError(f"{key} shape {tensors[key].shape} vs config-implied {want}")
        lp = LayerParams(w0=tensors[key])
        for attr in ("p", "q", "pa", "qa", "edge_weights"):
            t = tensors.get(f"layer{l}.{attr}")
            if t is not None:
                setattr(lp, attr, t)
        layers.append(lp)
    known = {"w_in"} | {
        f"layer{l}.{a}" for l in range(cfg.layers)
        for a in ("w0", "p", "q", "pa", "qa", "edge_weights")
    }
    unknown = set(tensors) - known
    if unknown:
        raise CheckpointError(f"unknown records: {sorted(unknown)}")
    return EncoderParams(w_in=tensors["w_in"], layers=layers), cfg


def clone_params(params: EncoderParams) -> EncoderParams:
    """Deep copy for read-only inference snapshots."""
    def cp(t, trainable):
        return None if t is None else Tensor(t.data.copy(), requires_grad=trainable)

    layers = [
        replace(
            lp,
            w0=cp(lp.w0, lp.w0.requires_grad),
            p=cp(lp.p, True), q=cp(lp.q, True),
            pa=cp(lp.pa, True), qa=cp(lp.qa, True),
            edge_weights=cp(lp.edge_weights, True),
        )
        for lp in params.layers
    ]
    return EncoderParams(
        w_in=cp(params.w_in, params.w_in.requires_grad),
        layers=layers,
        edge_positions=None if params.edge_positions is None
        else params.edge_positions.copy(),
    )
