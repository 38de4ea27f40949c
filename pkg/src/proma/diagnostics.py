"""Training diagnostics: KL to reference policies, entropy, validation
reward, and the squared-overlap local KL surrogate."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, fields

import numpy as np

from .policy import LAYER_NAMES, PolicyParams, position_logprobs, sample_batch
from .task import TaskInstance

# guard for log q; softmax never produces exact zeros at sane logit scales
Q_FLOOR = 1e-300


@dataclass(frozen=True)
class PolicySnapshot:
    step: int
    params: PolicyParams


@dataclass
class MetricsRecord:
    step: int
    train_reward: float
    val_reward: float
    entropy: float
    kl_initial: float
    kl_lagged: float
    local_kl_surrogate: float
    grad_norm: float
    subtracted_norm: float
    clamp_hits: int

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def row(self) -> list[str]:
        out = []
        for name in self.columns():
            v = getattr(self, name)
            out.append(str(v) if isinstance(v, int) else repr(float(v)))
        return out


def categorical_kl(p, q) -> np.ndarray:
    """Row-wise ``sum_v p log(p / q)`` for probability arrays."""
    p = np.asarray(p, dtype=np.float64)
    q = np.maximum(np.asarray(q, dtype=np.float64), Q_FLOOR)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(q)), 0.0)
    return terms.sum(axis=-1)


def kl_divergence(p_params: PolicyParams, q_params: PolicyParams, eval_prompts,
                  n_samples: int = 1, rng_seed=0, length: int = 1) -> float:
    """Per-token KL(p || q), exact over the vocabulary at every position of
    responses sampled from ``p`` on ``eval_prompts``."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    prompts = np.repeat(np.asarray(eval_prompts, dtype=np.int64), n_samples, axis=0)
    responses, _ = sample_batch(p_params, prompts, length, 1.0, rng_seed)
    logp = position_logprobs(p_params, prompts, responses)
    logq = position_logprobs(q_params, prompts, responses)
    p = np.exp(logp)
    # log-space keeps p == q exact; the floor only matters for underflowed q
    logq = np.maximum(logq, np.log(Q_FLOOR))
    kl = (p * (logp - logq)).sum(axis=-1)
    return float(kl.mean())


def lagged_reference(history, window: int = 80) -> PolicyParams:
    """Parameter-wise mean of the last ``window`` snapshots."""
    snaps = list(history)[-window:]
    if not snaps:
        raise ValueError("lagged_reference needs at least one snapshot")
    layers = {}
    for name in LAYER_NAMES:
        layers[name] = np.mean([getattr(s.params, name) for s in snaps], axis=0)
    return PolicyParams.from_layers(layers)


class SnapshotRing:
    """Bounded history of the most recent parameter snapshots."""

    def __init__(self, window: int = 80):
        self.window = window
        self._items: deque[PolicySnapshot] = deque(maxlen=window)

    def __len__(self):
        return len(self._items)

    def __iter__(self):
        return iter(self._items)

    def push(self, step: int, params: PolicyParams) -> None:
        self._items.append(PolicySnapshot(step, params.copy()))

    def mean(self) -> PolicyParams:
        return lagged_reference(self._items, self.window)

    def lagged(self, lag: int) -> PolicyParams:
        """Snapshot ``lag`` steps back, or the oldest one held."""
        items = list(self._items)
        return items[max(len(items) - 1 - lag, 0)].params


def local_kl_surrogate(update, seq_grads) -> float:
    """Mean over sequences of ``(dtheta . grad log pi(s))**2``.

    ``update`` maps layer name to a flat vector; ``seq_grads`` maps layer
    name to a ``(d_layer, k)`` matrix (or an object with ``.grads``).
    """
    overlaps = None
    for name, u in update.items():
        g = seq_grads[name]
        g = getattr(g, "grads", g)
        contrib = np.ravel(u) @ g
        overlaps = contrib if overlaps is None else overlaps + contrib
    if overlaps is None:
        return 0.0
    return float(np.mean(overlaps ** 2))


def validation_reward(params: PolicyParams, val_instances: list[TaskInstance],
                      samples_per_instance: int = 1, rng_seed=0, length: int = 1) -> float:
    """Mean greedy-decode reward. Greedy decoding ignores ``rng_seed``, and
    repeated samples of one instance are identical."""
    prompts = np.array([inst.prompt_tokens for inst in val_instances], dtype=np.int64)
    targets = np.array([inst.target for inst in val_instances])
    responses, _ = sample_batch(params, prompts, length, temperature=0.0, rng=rng_seed)
    correct = (responses[:, -1] == targets).astype(np.float64)
    return float(np.repeat(correct, samples_per_instance).mean())
