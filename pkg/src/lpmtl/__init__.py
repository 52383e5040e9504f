"""lp-norm coupled multi-task kernel learning: ERC estimation, bounds and SVM training."""

__version__ = "0.1.0"

from .data import MultiTaskDataset, Task, from_arrays, load_csv, load_dataset, split, synth_multitask
from .errors import (
    ConfigError,
    DegenerateTask,
    InvalidDataset,
    InvalidExponent,
    InvalidTask,
    LpMtlError,
    NumericError,
    ParseError,
    UnsupportedExponent,
    ZeroVector,
)
from .kernels import GramStack, KernelSpec, build_gram, check_bound_assumption, kernel_matrix
from .mkl import MklModel, predict_mkl, train_mkl, train_mkl_large_s, train_mkl_small_s
from .mtl import MtlModel, objective_value, predict, train, train_large_s, train_small_s
from .norms import INF, dual_exponent, holder_maximizer, lp_norm, parse_exponent, project_lr_ball
from .qp import DualSolution, solve_svm_dual
from .rademacher import (
    ErcParams,
    ErcReport,
    erc_bound,
    erc_multi_kernel,
    erc_single_kernel,
    generalization_bound,
    sample_sigma,
)

__all__ = [
    "ConfigError",
    "DegenerateTask",
    "DualSolution",
    "ErcParams",
    "ErcReport",
    "GramStack",
    "INF",
    "InvalidDataset",
    "InvalidExponent",
    "InvalidTask",
    "KernelSpec",
    "LpMtlError",
    "MklModel",
    "MtlModel",
    "MultiTaskDataset",
    "NumericError",
    "ParseError",
    "Task",
    "UnsupportedExponent",
    "ZeroVector",
    "build_gram",
    "check_bound_assumption",
    "dual_exponent",
    "erc_bound",
    "erc_multi_kernel",
    "erc_single_kernel",
    "from_arrays",
    "generalization_bound",
    "holder_maximizer",
    "kernel_matrix",
    "load_csv",
    "load_dataset",
    "lp_norm",
    "objective_value",
    "parse_exponent",
    "predict",
    "predict_mkl",
    "project_lr_ball",
    "sample_sigma",
    "solve_svm_dual",
    "split",
    "synth_multitask",
    "train",
    "train_large_s",
    "train_mkl",
    "train_mkl_large_s",
    "train_mkl_small_s",
    "train_small_s",
]
