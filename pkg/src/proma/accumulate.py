"""Per-layer gradient accumulation across microbatches.

Strategies:

``plain``
    REINFORCE: ``acc += policy_grad``.
``ppo_clip``
    the clipped likelihood-ratio surrogate, accumulated like ``plain``.
``proma_exact`` / ``proma_approx``
    before adding the microbatch's policy gradient, the running gradient is
    projected orthogonal to the microbatch's per-sequence log-probability
    gradients (exact QR projection, or the two-sweep deflation). The removed
    component is clamped to ``clamp_fraction * ||policy_grad||``.

All quantities here are ascent directions: ``apply_update`` moves the
parameters *along* the accumulated gradient.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import linalg
from .errors import NumericalAbort
from .policy import (LAYER_NAMES, PolicyParams, SequenceGradientMatrix, seq_grad_matrices,
                     sequence_gradients)
from .task import RewardedGroup

log = logging.getLogger(__name__)

STRATEGIES = ("plain", "ppo_clip", "proma_exact", "proma_approx")


@dataclass
class MicrobatchGradients:
    policy_grad: dict[str, np.ndarray]                 # flat (d_layer,)
    seq_grads: dict[str, SequenceGradientMatrix]       # (d_layer, k)
    k: int
    advantages: np.ndarray = None                      # (k,)
    tapes: dict = None
    token_advantages: np.ndarray = None                # (T,)


@dataclass
class Telemetry:
    subtracted_norm: float = 0.0      # sum over microbatches of ||p|| after clamping
    clamp_hits: int = 0
    zero_policy_grad: int = 0
    skipped_columns: int = 0
    flops: int = 0


@dataclass
class AccumulatorState:
    shapes: dict[str, tuple]
    strategy: str = "plain"
    clamp_fraction: float = 0.5
    projection_group_size: int = 8
    passes: int = 2
    clamp_scope: str = "layer"
    grads: dict[str, np.ndarray] = field(default_factory=dict)
    microbatches_seen: int = 0
    telemetry: Telemetry = field(default_factory=Telemetry)

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if not self.clamp_fraction >= 0:
            raise ValueError("clamp_fraction must be >= 0")
        if self.clamp_scope not in ("layer", "global"):
            raise ValueError(f"unknown clamp scope {self.clamp_scope!r}")
        if not self.grads:
            self.reset()

    @classmethod
    def for_params(cls, params: PolicyParams, **kwargs) -> "AccumulatorState":
        return cls(shapes={n: a.shape for n, a in params.layers().items()}, **kwargs)

    def reset(self) -> None:
        self.grads = {n: np.zeros(int(np.prod(s))) for n, s in self.shapes.items()}
        self.microbatches_seen = 0
        self.telemetry = Telemetry()

    def flat(self) -> np.ndarray:
        return np.concatenate([self.grads[n] for n in self.shapes])


def _stack(groups: list[RewardedGroup]):
    samples = [s for g in groups for s in g.samples]
    prompts = np.array([s.prompt_tokens for s in samples], dtype=np.int64)
    responses = np.array([s.response_tokens for s in samples], dtype=np.int64)
    adv = np.array([a for g in groups for a in g.advantages], dtype=np.float64)
    return prompts, responses, adv


def compute_microbatch_gradients(params: PolicyParams,
                                 groups: list[RewardedGroup]) -> MicrobatchGradients:
    """Policy gradient ``(1/k) sum_j a_j grad log pi(s_j)`` per layer, with
    the per-sequence gradients it was assembled from."""
    prompts, responses, adv = _stack(groups)
    k = len(adv)
    if k < 1:
        raise ValueError("microbatch has no sequences")
    grads, tapes, _ = sequence_gradients(params, prompts, responses)
    seq = seq_grad_matrices(grads)
    policy = {n: m.grads @ adv / k for n, m in seq.items()}
    tok_adv = np.repeat(adv, responses.shape[1])
    return MicrobatchGradients(policy, seq, k, adv, tapes, tok_adv)


def accumulate_plain(state: AccumulatorState, mcb: MicrobatchGradients) -> AccumulatorState:
    return add_gradients(state, mcb.policy_grad)


def add_gradients(state: AccumulatorState, grads: dict) -> AccumulatorState:
    for name in state.shapes:
        state.grads[name] = state.grads[name] + np.ravel(grads[name])
    state.microbatches_seen += 1
    return state


def clamp_subtracted(p, bound: float):
    """``p`` rescaled, if needed, so that ``||p|| <= bound``."""
    if bound < 0:
        raise ValueError("bound must be >= 0")
    nrm = float(np.linalg.norm(p))
    if nrm <= bound:
        return p
    return p * (bound / nrm)


def _blocks(k: int, size: int):
    if size <= 0 or k <= size:
        return [slice(0, k)]
    return [slice(i, min(i + size, k)) for i in range(0, k, size)]


def subtracted_component(acc, vecs, mode: str, group_size: int = 0, passes: int = 2,
                         counter: linalg.FlopCounter | None = None):
    """``acc`` minus its complement projection against ``vecs``'s columns.

    With ``group_size > 0`` the columns are split, in order, into blocks of
    at most ``group_size`` and the running vector is projected against each
    block in turn.
    """
    out = acc
    for blk in _blocks(vecs.shape[1], group_size):
        if mode == "exact":
            out = linalg.project_to_complement(out, vecs[:, blk], counter)
        elif mode == "approx":
            out = linalg.project_to_complement_iterative(out, vecs[:, blk], passes, counter)
        else:
            raise ValueError(f"unknown projection mode {mode!r}")
    return acc - out


def accumulate_proma(state: AccumulatorState, mcb: MicrobatchGradients,
                     mode: str | None = None) -> AccumulatorState:
    if mode is None:
        if not state.strategy.startswith("proma_"):
            raise ValueError(f"state strategy {state.strategy!r} is not a PROMA strategy")
        mode = state.strategy.split("_", 1)[1]
    counter = linalg.FlopCounter()
    subtracted = {}
    for name in state.shapes:
        acc = state.grads[name]
        if not np.any(acc):
            subtracted[name] = np.zeros_like(acc)
            continue
        subtracted[name] = subtracted_component(
            acc, mcb.seq_grads[name].grads, mode, state.projection_group_size,
            state.passes, counter)

    frac = state.clamp_fraction
    if math.isfinite(frac):
        if state.clamp_scope == "layer":
            for name, p in subtracted.items():
                subtracted[name] = _clamp_logged(state, p, mcb.policy_grad[name], frac)
        else:
            flat_p = np.concatenate([subtracted[n] for n in state.shapes])
            flat_g = np.concatenate([mcb.policy_grad[n] for n in state.shapes])
            clamped = _clamp_logged(state, flat_p, flat_g, frac)
            scale = 1.0 if not flat_p.any() else (
                np.linalg.norm(clamped) / np.linalg.norm(flat_p))
            subtracted = {n: p * scale for n, p in subtracted.items()}

    total = 0.0
    for name in state.shapes:
        p = subtracted[name]
        total += float(p @ p)
        state.grads[name] = (state.grads[name] - p) + mcb.policy_grad[name]
    state.telemetry.subtracted_norm += math.sqrt(total)
    state.telemetry.skipped_columns += counter.skipped_columns
    state.telemetry.flops += counter.multiply_adds
    state.microbatches_seen += 1
    return state


def _clamp_logged(state, p, policy_grad, frac):
    bound = frac * float(np.linalg.norm(policy_grad))
    if bound == 0.0:
        state.telemetry.zero_policy_grad += 1
        if p.any():
            log.debug("zero-norm microbatch policy gradient: subtraction suppressed")
    out = clamp_subtracted(p, bound)
    if out is not p:
        state.telemetry.clamp_hits += 1
    return out


def ppo_clip_gradient(params: PolicyParams, old_params: PolicyParams,
                      groups: list[RewardedGroup], clip_eps: float = 0.2):
    """Gradient of ``(1/k) sum_j sum_t min(rho a, clip(rho, 1-eps, 1+eps) a)``.

    Returns ``(grads, clip_fraction)`` where ``clip_fraction`` is the share of
    tokens whose gradient was cut by clipping.
    """
    from .policy import token_logprobs
    prompts, responses, adv = _stack(groups)
    k = len(adv)
    old_lp = token_logprobs(old_params, prompts, responses)
    new_lp = token_logprobs(params, prompts, responses)
    ratio = np.exp(new_lp - old_lp)
    a = adv[:, None]
    clipped = np.where(a > 0, ratio > 1 + clip_eps, ratio < 1 - clip_eps) & (a != 0)
    weights = np.where(clipped, 0.0, ratio * a)
    grads, _, _ = sequence_gradients(params, prompts, responses, token_weights=weights)
    return {n: g.sum(axis=0).ravel() / k for n, g in grads.items()}, float(clipped.mean())


def accumulate_ppo_clip(state: AccumulatorState, params: PolicyParams,
                        old_params: PolicyParams, groups: list[RewardedGroup],
                        clip_eps: float = 0.2) -> AccumulatorState:
    grads, _ = ppo_clip_gradient(params, old_params, groups, clip_eps)
    return add_gradients(state, grads)


class Adam:
    """Adam in ascent form, available as an ablation of plain SGD."""

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {}
        self.v = {}
        self.t = 0

    def direction(self, grads: dict) -> dict:
        self.t += 1
        out = {}
        for n, g in grads.items():
            m = self.m.get(n, np.zeros_like(g))
            v = self.v.get(n, np.zeros_like(g))
            m = self.beta1 * m + (1 - self.beta1) * g
            v = self.beta2 * v + (1 - self.beta2) * g * g
            self.m[n], self.v[n] = m, v
            mhat = m / (1 - self.beta1 ** self.t)
            vhat = v / (1 - self.beta2 ** self.t)
            out[n] = mhat / (np.sqrt(vhat) + self.eps)
        return out


def apply_update(params: PolicyParams, state: AccumulatorState, lr: float,
                 optimizer: Adam | None = None) -> PolicyParams:
    """``theta + lr * acc / microbatches_seen``; resets ``state``.

    Raises :class:`NumericalAbort` if the accumulated gradient is not finite.
    """
    n = max(state.microbatches_seen, 1)
    grads = {name: g / n for name, g in state.grads.items()}
    bad = [name for name, g in grads.items() if not np.all(np.isfinite(g))]
    if bad:
        raise NumericalAbort(f"non-finite accumulated gradient in {bad}",
                             dump={"grads": grads, "params": params.layers()})
    if optimizer is not None:
        grads = optimizer.direction(grads)
    layers = {}
    for name, a in params.layers().items():
        layers[name] = a + lr * grads[name].reshape(a.shape)
    state.reset()
    return PolicyParams.from_layers(layers)


__all__ = [
    "STRATEGIES", "AccumulatorState", "MicrobatchGradients", "Telemetry", "Adam",
    "compute_microbatch_gradients", "accumulate_plain", "accumulate_proma",
    "accumulate_ppo_clip", "ppo_clip_gradient", "clamp_subtracted",
    "subtracted_component", "add_gradients", "apply_update", "LAYER_NAMES",
]
