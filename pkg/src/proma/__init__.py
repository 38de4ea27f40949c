"""Projected gradient accumulation for policy-gradient training of a small
autoregressive policy, with the diagnostics and runner used to compare it
against plain REINFORCE and PPO-style clipping."""
from .accumulate import (AccumulatorState, MicrobatchGradients, accumulate_plain,
                         accumulate_ppo_clip, accumulate_proma, apply_update,
                         compute_microbatch_gradients)
from .config import RunConfig, load_config
from .errors import ConfigError, InputError, NumericalAbort, ShapeError
from .intra import IntraConfig, intra_proma_step, proma_intra
from .linalg import (approx_rank_r_basis, project_to_complement,
                     project_to_complement_iterative, qr_reduced)
from .runner import RunArtifacts, compare, train

__version__ = "0.1.0"

__all__ = [
    "AccumulatorState", "MicrobatchGradients", "accumulate_plain", "accumulate_ppo_clip",
    "accumulate_proma", "apply_update", "compute_microbatch_gradients", "RunConfig",
    "load_config", "ConfigError", "InputError", "NumericalAbort", "ShapeError",
    "IntraConfig", "intra_proma_step", "proma_intra", "approx_rank_r_basis",
    "project_to_complement", "project_to_complement_iterative", "qr_reduced",
    "RunArtifacts", "compare", "train",
]
