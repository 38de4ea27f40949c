"""Synthetic verifiable task (digit sum modulo ``vocab_answer``) and the
group-relative advantage estimator."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .policy import SequenceSample

# seed-domain tags keep train and validation streams disjoint
TRAIN_DOMAIN = 0
VAL_DOMAIN = 1


@dataclass(frozen=True)
class TaskInstance:
    prompt_tokens: tuple[int, ...]
    target: int


@dataclass
class RewardedGroup:
    instance: TaskInstance
    samples: list[SequenceSample]
    rewards: list[float]
    advantages: list[float]

    def __post_init__(self):
        if not (len(self.samples) == len(self.rewards) == len(self.advantages) >= 1):
            raise ValueError("samples, rewards and advantages must have equal length >= 1")


def make_instances(count: int, n_digits: int, rng_seed=0, vocab_answer: int = 10,
                   domain: int = TRAIN_DOMAIN) -> list[TaskInstance]:
    if n_digits < 1:
        raise ValueError("n_digits must be >= 1")
    parts = list(rng_seed) if isinstance(rng_seed, (tuple, list)) else [rng_seed]
    gen = np.random.default_rng(np.random.SeedSequence([int(domain), *map(int, parts)]))
    digits = gen.integers(0, 10, size=(count, n_digits))
    return [TaskInstance(tuple(int(d) for d in row), int(row.sum() % vocab_answer))
            for row in digits]


def reward(sample: SequenceSample, instance: TaskInstance) -> float:
    """1.0 when the final response token is the target, else 0.0."""
    if not sample.response_tokens:
        return 0.0
    return float(sample.response_tokens[-1] == instance.target)


def group_advantages(rewards, eps: float = 1e-6, norm: str = "std") -> list[float]:
    """Rewards centered on the group mean, optionally divided by
    ``population_std + eps``."""
    r = np.asarray(rewards, dtype=np.float64)
    if np.all(r == r[0]):
        # exact zeros; r - mean can leave rounding residue that std would amplify
        return [0.0] * len(r)
    centered = r - r.mean()
    if norm == "none":
        return centered.tolist()
    if norm != "std":
        raise ValueError(f"unknown advantage normalization {norm!r}")
    return (centered / (r.std() + eps)).tolist()


def token_advantages(groups: list[RewardedGroup]) -> np.ndarray:
    """Per-token advantages, each sequence's scalar repeated over its tokens."""
    out = []
    for g in groups:
        for s, a in zip(g.samples, g.advantages):
            out.extend([a] * len(s.response_tokens))
    return np.asarray(out, dtype=np.float64)
