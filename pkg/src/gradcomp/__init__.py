"""Low-rank gradient compression with error feedback, plus the baseline
compressors it is usually compared against, run inside a deterministic
multi-worker communication simulator.

The pieces compose bottom-up: `linalg` holds the orthogonalization and
factorization kernels, `comm` counts every transmitted bit and decode op,
`compressors` turns matrices into payloads and back, `optimizer` applies
them inside error-feedback SGD, `problems`/`train` provide seeded tasks and
reproducible runs, `catalogs` accounts compression ratios for real model
shapes, and `verify` re-checks the headline claims end to end.
"""

from .catalogs import (LSTM, RESNET18, ModelCatalog, ParamSpec, RatioReport,
                       RatioRow, get_catalog, load_catalog, ratio_report)
from .comm import Communicator, CommStats, tree_reduce
from .compressors import (COMPRESSORS, CompressionContext, Compressor,
                          RoundTrip, decompress, make_compressor)
from .linalg import (ContractViolation, LowRankFactors, best_rank_r, matmul,
                     orthogonalize, reconstruction_error,
                     spectral_decomposition)
from .optimizer import (NonFiniteGradient, OptimizerState, WorkerState,
                        reference_momentum_step, step, step_plain_momentum)
from .problems import (LeastSquaresProblem, Problem, TinyMlpProblem,
                       make_problem)
from .seeding import derive_rng
from .train import (RunConfig, TrainRecord, TrainResult, result_to_csv,
                    result_to_json, run_training)
from .verify import SUITES, CheckResult, run_suites

__version__ = "0.1.0"

__all__ = [
    "COMPRESSORS",
    "CheckResult",
    "CommStats",
    "Communicator",
    "CompressionContext",
    "Compressor",
    "ContractViolation",
    "LSTM",
    "LeastSquaresProblem",
    "LowRankFactors",
    "ModelCatalog",
    "NonFiniteGradient",
    "OptimizerState",
    "ParamSpec",
    "Problem",
    "RESNET18",
    "RatioReport",
    "RatioRow",
    "RoundTrip",
    "RunConfig",
    "SUITES",
    "TinyMlpProblem",
    "TrainRecord",
    "TrainResult",
    "WorkerState",
    "best_rank_r",
    "decompress",
    "derive_rng",
    "get_catalog",
    "load_catalog",
    "make_compressor",
    "make_problem",
    "matmul",
    "orthogonalize",
    "ratio_report",
    "reconstruction_error",
    "reference_momentum_step",
    "result_to_csv",
    "result_to_json",
    "run_suites",
    "run_training",
    "spectral_decomposition",
    "step",
    "step_plain_momentum",
    "tree_reduce",
]
