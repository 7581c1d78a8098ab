"""riskseq: minimum risk training for a small attention-based
encoder-decoder translation model, with maximum likelihood training,
sampled-space risk approximation, sentence-level metric losses, and
exact-enumeration oracles."""

__version__ = "0.1.0"

from .diffcore import ParamStore, Tape, finite_diff_grad
from .metrics import LossKind
from .model import ModelConfig, init_params, sequence_logprob
from .mrt import expected_risk, mrt_grad, q_distribution, sample_space
from .trainer import TrainConfig, train

__all__ = [
    "ParamStore",
    "Tape",
    "finite_diff_grad",
    "LossKind",
    "ModelConfig",
    "init_params",
    "sequence_logprob",
    "sample_space",
    "q_distribution",
    "expected_risk",
    "mrt_grad",
    "TrainConfig",
    "train",
]
