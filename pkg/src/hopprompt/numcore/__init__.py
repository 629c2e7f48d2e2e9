"""Dense/sparse linear algebra, a reverse-mode tape, and Adam."""

from .optim import AdamState, adam_step
from .sparse import SparseMatrix, rank_one_update_spmm, spmm
from .tensor import (
    Gradients,
    Tensor,
    add,
    backward,
    gather_rows,
    hstack,
    matmul,
    mean_rows,
    peak_tape_bytes,
    randn,
    relu,
    row_cosine_sim,
    rowwise_cosine_sim,
    scalar,
    scale,
    scatter_rows,
    softmax_nll,
    sub,
    sum_all,
    transpose,
    vstack,
    zeros,
)

__all__ = [
    "AdamState",
    "Gradients",
    "SparseMatrix",
    "Tensor",
    "adam_step",
    "add",
    "backward",
    "gather_rows",
    "hstack",
    "matmul",
    "mean_rows",
    "peak_tape_bytes",
    "randn",
    "rank_one_update_spmm",
    "relu",
    "row_cosine_sim",
    "rowwise_cosine_sim",
    "scalar",
    "scale",
    "scatter_rows",
    "softmax_nll",
    "spmm",
    "sub",
    "sum_all",
    "transpose",
    "vstack",
    "zeros",
]
