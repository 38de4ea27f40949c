import math

import numpy as np
import pytest

from proma import diagnostics as D
from proma import policy as P
from proma.task import TaskInstance

from test_policy import random_params


def test_categorical_kl_closed_form():
    kl = D.categorical_kl([0.5, 0.5], [0.25, 0.75])
    expected = 0.5 * math.log(2.0) + 0.5 * math.log(2.0 / 3.0)
    assert kl == pytest.approx(expected, abs=1e-15)
    assert kl == pytest.approx(0.1438, abs=1e-4)


def test_categorical_kl_zero_mass():
    assert D.categorical_kl([1.0, 0.0], [0.5, 0.5]) == pytest.approx(math.log(2.0))


def test_kl_identical_is_exactly_zero():
    p = random_params(0)
    assert D.kl_divergence(p, p.copy(), [[1, 2], [3, 4]], rng_seed=3, length=3) == 0.0


def test_kl_matches_exact_next_token_oracle():
    p, q = random_params(1), random_params(2)
    prompts = [[1, 2], [3, 4], [0, 7]]
    pp = P.next_token_distribution(p, prompts, [[], [], []])
    qq = P.next_token_distribution(q, prompts, [[], [], []])
    ref = np.mean([sum(a * math.log(a / b) for a, b in zip(x, y)) for x, y in zip(pp, qq)])
    assert D.kl_divergence(p, q, prompts) == pytest.approx(ref, abs=1e-12)
    assert D.kl_divergence(p, q, prompts) >= 0.0


def test_kl_seeded():
    p, q = random_params(1), random_params(2)
    a = D.kl_divergence(p, q, [[1, 2]], n_samples=4, rng_seed=9, length=3)
    b = D.kl_divergence(p, q, [[1, 2]], n_samples=4, rng_seed=9, length=3)
    assert a == b


def test_lagged_reference_mean():
    ring = D.SnapshotRing(window=2)
    for i, c in enumerate((1.0, 2.0, 4.0)):
        z = P.zero_params(4, 2, 2)
        z.out_b[:] = c
        ring.push(i, z)
    assert len(ring) == 2
    np.testing.assert_allclose(ring.mean().out_b, 3.0)
    np.testing.assert_allclose(ring.lagged(1).out_b, 2.0)
    np.testing.assert_allclose(ring.lagged(10).out_b, 2.0)
    with pytest.raises(ValueError):
        D.lagged_reference([])


def test_ring_is_isolated_from_mutation():
    ring = D.SnapshotRing(3)
    p = P.zero_params(4, 2, 2)
    ring.push(0, p)
    p.out_b[:] = 5.0
    assert not ring.mean().out_b.any()


def test_local_kl_surrogate():
    g = np.array([[1.0, 0.0], [0.0, 2.0], [0.0, 0.0]])
    assert D.local_kl_surrogate({"w": np.array([0.0, 0.0, 3.0])}, {"w": g}) == 0.0
    # overlaps (1, 4) -> mean of squares 8.5
    assert D.local_kl_surrogate({"w": np.array([1.0, 2.0, 0.0])}, {"w": g}) == 8.5
    # overlaps add across layers before squaring
    two = D.local_kl_surrogate({"a": np.array([1.0]), "b": np.array([1.0])},
                               {"a": np.array([[1.0]]), "b": np.array([[-1.0]])})
    assert two == 0.0


def test_validation_reward_greedy():
    p = P.zero_params(16, 2, 2)
    p.out_b[7] = 5.0
    val = [TaskInstance((3, 4), 7), TaskInstance((1, 1), 2), TaskInstance((5, 2), 7),
           TaskInstance((0, 0), 0)]
    assert D.validation_reward(p, val) == 0.5
    assert D.validation_reward(p, val, samples_per_instance=3, rng_seed=4) == 0.5


def test_metrics_row_format():
    rec = D.MetricsRecord(3, 0.5, 0.25, 1.0, 0.1, 0.2, 0.0, 1e-3, 0.0, 2)
    assert D.MetricsRecord.columns()[0] == "step"
    row = rec.row()
    assert row[0] == "3" and row[-1] == "2"
    assert float(row[1]) == 0.5 and float(row[7]) == 1e-3
    assert len(row) == len(D.MetricsRecord.columns())
