"""Intra-microbatch projection on factored layer gradients.

For a linear layer with token-level input activations ``A`` (T, d_in) and
output gradients ``G`` (T, d_out), the advantage-weighted policy gradient is
``(a * G)ᵀ A / T``. Randomized bases ``Q_g`` and ``Q_a`` of the dominant
column spaces of ``G`` and ``A`` define the sandwich component
``Q_g Q_gᵀ grad Q_a Q_aᵀ``, a scaled copy of which is subtracted.

Nothing here depends on other microbatches, so microbatches can be
processed in any order or in parallel and summed.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import linalg
from .errors import ShapeError
from .policy import LINEAR_LAYERS, LayerTape, PolicyParams

VARIANTS = ("subtract_sandwich", "double_sandwich")


@dataclass(frozen=True)
class IntraConfig:
    r: int = 100
    shrinkage: float = 1.0
    power_iters: int = 1
    variant: str = "subtract_sandwich"
    r_a: int | None = None   # per-factor overrides of r
    r_g: int | None = None

    def __post_init__(self):
        if self.r < 1:
            raise ValueError("r must be >= 1")
        if self.shrinkage < 0:
            raise ValueError("shrinkage must be >= 0")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")


def layer_policy_grad(token_advantages, tape: LayerTape) -> np.ndarray:
    """``(a * grad_outᵀ) @ act_in / T``, shape ``(d_out, d_in)``."""
    a = np.asarray(token_advantages, dtype=np.float64)
    if a.shape[0] != tape.act_in.shape[0] or tape.grad_out.shape[0] != a.shape[0]:
        raise ShapeError("token_advantages, act_in and grad_out need equal row counts")
    if a.shape[0] == 0:
        return np.zeros((tape.grad_out.shape[1], tape.act_in.shape[1]))
    return (a * tape.grad_out.T) @ tape.act_in / len(a)


def factor_bases(tape: LayerTape, cfg: IntraConfig, rng=None):
    """Seeded ``(Q_a, Q_g)`` for one layer, with ranks clamped to the tape."""
    t, d_in = tape.act_in.shape
    d_out = tape.grad_out.shape[1]
    cap = min(t, d_in, d_out)
    r_a = min(cfg.r_a or cfg.r, cap)
    r_g = min(cfg.r_g or cfg.r, cap)
    seq = np.random.SeedSequence(rng) if not isinstance(rng, np.random.SeedSequence) else rng
    seed_a, seed_g = seq.spawn(2)
    q_a = linalg.approx_rank_r_basis(tape.act_in, r_a, cfg.power_iters, seed_a)
    q_g = linalg.approx_rank_r_basis(tape.grad_out, r_g, cfg.power_iters, seed_g)
    return q_a, q_g


def project_with_bases(policy_grad, q_a, q_g, cfg: IntraConfig) -> np.ndarray:
    if cfg.variant == "double_sandwich":
        left = policy_grad - q_g @ (q_g.T @ policy_grad)
        return left - (left @ q_a) @ q_a.T
    return policy_grad - cfg.shrinkage * linalg.sandwich_project(policy_grad, q_g, q_a)


def proma_intra(token_advantages, tape: LayerTape, cfg: IntraConfig = IntraConfig(),
                rng=None) -> np.ndarray:
    """Projected policy gradient of one linear layer, shape ``(d_out, d_in)``."""
    policy_grad = layer_policy_grad(token_advantages, tape)
    if tape.act_in.shape[0] == 0:
        return policy_grad
    q_a, q_g = factor_bases(tape, cfg, rng)
    return project_with_bases(policy_grad, q_a, q_g, cfg)


def intra_proma_step(params: PolicyParams, mcb, cfg: IntraConfig, rng=None) -> dict:
    """Per-layer flat gradients for one microbatch.

    ``mcb`` is a :class:`~proma.accumulate.MicrobatchGradients` carrying
    tapes. Linear layers get :func:`proma_intra`; embeddings and biases keep
    the plain policy gradient. ``rng`` is an int or SeedSequence from which
    one independent child seed per linear layer is derived.
    """
    seq = rng if isinstance(rng, np.random.SeedSequence) else np.random.SeedSequence(rng)
    children = dict(zip(LINEAR_LAYERS, seq.spawn(len(LINEAR_LAYERS))))
    out = {}
    for name, g in mcb.policy_grad.items():
        if name in LINEAR_LAYERS:
            # stored weights are (d_in, d_out); the factored gradient is (d_out, d_in)
            projected = proma_intra(mcb.token_advantages, mcb.tapes[name], cfg, children[name])
            out[name] = projected.T.ravel()
        else:
            out[name] = g.copy()
    return out
