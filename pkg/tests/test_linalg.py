import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from proma import linalg
from proma.errors import InputError, ShapeError

import oracles


def well_conditioned(rng, d, k, cond=10.0):
    u, _ = np.linalg.qr(rng.standard_normal((d, k)))
    w, _ = np.linalg.qr(rng.standard_normal((k, k)))
    s = np.geomspace(1.0, 1.0 / cond, k)
    return (u * s) @ w.T


class TestQR:
    def test_identity(self):
        q, r = linalg.qr_reduced(np.eye(3))
        np.testing.assert_allclose(np.abs(q), np.eye(3), atol=1e-15)
        np.testing.assert_allclose(np.abs(np.diag(r)), 1.0)
        assert np.allclose(r, np.diag(np.diag(r)))

    def test_single_column(self):
        q, r = linalg.qr_reduced([[3.0], [4.0]])
        sign = np.sign(q[0, 0])
        np.testing.assert_allclose(sign * q, [[0.6], [0.8]], atol=1e-15)
        np.testing.assert_allclose(sign * r, [[5.0]], atol=1e-14)

    def test_random_against_gram_schmidt_oracle(self):
        rng = np.random.default_rng(3)
        m = rng.standard_normal((16, 4))
        q, r = linalg.qr_reduced(m)
        assert np.abs(q @ r - m).max() <= 1e-10 * np.linalg.norm(m)
        np.testing.assert_allclose(q.T @ q, np.eye(4), atol=1e-10)
        assert np.allclose(r, np.triu(r))
        q_ref = oracles.gram_schmidt_twice(m)
        # same span: projectors agree
        np.testing.assert_allclose(q @ q.T, q_ref @ q_ref.T, atol=1e-10)
        q_np, _ = np.linalg.qr(m)
        np.testing.assert_allclose(q @ q.T, q_np @ q_np.T, atol=1e-10)

    def test_rank_deficient_column_dropped(self):
        rng = np.random.default_rng(4)
        a = rng.standard_normal((10, 2))
        m = np.column_stack([a[:, 0], a[:, 1], a[:, 0] - 2 * a[:, 1]])
        q, r = linalg.qr_reduced(m)
        assert list(linalg.dropped_columns(r)) == [2]
        assert not q[:, 2].any()
        np.testing.assert_allclose(q @ r, m, atol=1e-12)
        np.testing.assert_allclose(q[:, :2].T @ q[:, :2], np.eye(2), atol=1e-12)

    def test_errors(self):
        with pytest.raises(ShapeError):
            linalg.qr_reduced(np.ones((2, 3)))
        with pytest.raises(ShapeError):
            linalg.qr_reduced(np.ones(3))
        with pytest.raises(InputError):
            linalg.qr_reduced([[np.nan], [1.0]])

    def test_flop_count_bound(self):
        d, k = 40, 6
        counter = linalg.FlopCounter()
        linalg.project_to_complement(np.ones(d), np.random.default_rng(0).standard_normal((d, k)),
                                     counter)
        assert 0 < counter.multiply_adds <= 4 * k * k * d + 4 * k * d


class TestComplementProjection:
    def test_orthogonal_input_unchanged(self):
        vecs = np.zeros((5, 2))
        vecs[0, 0] = vecs[1, 1] = 1.0
        v = np.array([0.0, 0.0, 1.0, -2.0, 3.0])
        np.testing.assert_allclose(linalg.project_to_complement(v, vecs), v, atol=1e-15)

    def test_in_span_goes_to_zero(self):
        rng = np.random.default_rng(1)
        vecs = rng.standard_normal((12, 3))
        v = vecs @ np.array([1.0, -2.0, 0.5])
        out = linalg.project_to_complement(v, vecs)
        assert np.linalg.norm(out) <= 1e-10 * np.linalg.norm(v)

    def test_matches_normal_equations(self):
        rng = np.random.default_rng(2)
        vecs = rng.standard_normal((32, 5))
        v = rng.standard_normal(32)
        out = linalg.project_to_complement(v, vecs)
        ref = oracles.pinv_complement(v, vecs)
        np.testing.assert_allclose(out, ref, atol=1e-10)
        assert np.abs(vecs.T @ out).max() <= 1e-8 * np.linalg.norm(out) * np.linalg.norm(vecs, axis=0).max()

    def test_more_columns_than_dims(self):
        rng = np.random.default_rng(5)
        out = linalg.project_to_complement(rng.standard_normal(4), rng.standard_normal((4, 9)))
        assert np.linalg.norm(out) < 1e-10

    def test_dimension_mismatch(self):
        with pytest.raises(ShapeError):
            linalg.project_to_complement(np.ones(4), np.ones((5, 2)))
        with pytest.raises(ShapeError):
            linalg.project_to_complement_iterative(np.ones(4), np.ones((5, 2)))

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**32 - 1), d=st.integers(1, 64), k=st.integers(1, 8))
    def test_invariants(self, seed, d, k):
        k = min(k, d)
        rng = np.random.default_rng(seed)
        vecs = rng.standard_normal((d, k))
        v = rng.standard_normal(d)
        c = linalg.project_to_complement(v, vecs)
        cc = linalg.project_to_complement(c, vecs)
        scale = np.linalg.norm(v)
        assert np.linalg.norm(cc - c) <= 1e-10 * scale
        lhs = v @ v
        rhs = c @ c + (v - c) @ (v - c)
        assert abs(lhs - rhs) <= 1e-8 * lhs
        assert np.linalg.norm(c) <= scale * (1 + 1e-12)


class TestIterativeProjection:
    def test_single_vector_matches_exact(self):
        rng = np.random.default_rng(0)
        vecs = rng.standard_normal((20, 1))
        v = rng.standard_normal(20)
        np.testing.assert_allclose(linalg.project_to_complement_iterative(v, vecs),
                                   linalg.project_to_complement(v, vecs), atol=1e-12)

    def test_orthogonal_columns_exact_after_one_pass(self):
        rng = np.random.default_rng(1)
        q, _ = np.linalg.qr(rng.standard_normal((15, 4)))
        vecs = q * np.array([2.0, 0.5, 3.0, 1.0])
        v = rng.standard_normal(15)
        np.testing.assert_allclose(linalg.project_to_complement_iterative(v, vecs, passes=1),
                                   linalg.project_to_complement(v, vecs), atol=1e-12)

    def test_residual_shrinks_with_passes(self):
        # two sweeps leave O(1e-2) overlaps at d=64, k=8; the sweep converges
        # linearly toward the exact projection as passes grow
        rng = np.random.default_rng(2)
        vecs = well_conditioned(rng, 64, 8, cond=10.0)
        v = rng.standard_normal(64)
        exact = oracles.pinv_complement(v, vecs)
        units = vecs / np.linalg.norm(vecs, axis=0)
        gaps, overlaps = [], []
        for passes in (1, 2, 8, 200):
            out = linalg.project_to_complement_iterative(v, vecs, passes=passes)
            gaps.append(np.linalg.norm(out - exact))
            overlaps.append(np.abs(units.T @ out).max())
        assert gaps == sorted(gaps, reverse=True)
        assert overlaps[-1] <= 1e-3 * np.linalg.norm(v)
        assert gaps[-1] <= 1e-3 * np.linalg.norm(v)

    def test_zero_column_skipped(self):
        vecs = np.zeros((3, 2))
        vecs[0, 1] = 2.0
        counter = linalg.FlopCounter()
        out = linalg.project_to_complement_iterative(np.array([1.0, 2.0, 3.0]), vecs,
                                                     counter=counter)
        np.testing.assert_allclose(out, [0.0, 2.0, 3.0])
        assert counter.skipped_columns == 1

    def test_does_not_mutate_input(self):
        v = np.array([1.0, 1.0])
        linalg.project_to_complement_iterative(v, np.array([[1.0], [0.0]]))
        np.testing.assert_array_equal(v, [1.0, 1.0])

    def test_flop_count_linear(self):
        d, k, passes = 50, 7, 2
        counter = linalg.FlopCounter()
        linalg.project_to_complement_iterative(np.ones(d),
                                               np.random.default_rng(0).standard_normal((d, k)),
                                               passes, counter)
        assert counter.multiply_adds <= 3 * k * d + passes * 4 * k * d

    def test_each_deflation_contracts(self):
        rng = np.random.default_rng(7)
        vecs = rng.standard_normal((10, 5))
        out = rng.standard_normal(10)
        units = vecs / np.linalg.norm(vecs, axis=0)
        for _ in range(2):
            for u in units.T:
                before = np.linalg.norm(out)
                out = linalg.project_to_complement_iterative(out, u[:, None], passes=1)
                assert np.linalg.norm(out) <= before * (1 + 1e-12)


class TestRandomizedBasis:
    def test_exact_rank_with_gap(self):
        rng = np.random.default_rng(0)
        x = oracles.matrix_with_spectrum(rng, 30, 20, [10.0, 8.0, 5.0])
        q = linalg.approx_rank_r_basis(x, 3, rng=1)
        ref = oracles.top_right_singular(x, 3)
        assert oracles.principal_angle_max(q, ref) <= 1e-6
        np.testing.assert_allclose(q.T @ q, np.eye(3), atol=1e-12)

    def test_full_rank_gives_row_space(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((12, 5))
        q = linalg.approx_rank_r_basis(x, 5, rng=2)
        np.testing.assert_allclose(q @ q.T, np.eye(5), atol=1e-8)

    def test_rank_one(self):
        u = np.array([1.0, -2.0, 0.5, 3.0])
        v = np.array([0.3, 0.4, -1.2])
        q = linalg.approx_rank_r_basis(np.outer(u, v), 1, rng=0)
        target = v / np.linalg.norm(v)
        assert min(np.abs(q[:, 0] - target).max(), np.abs(q[:, 0] + target).max()) <= 1e-10

    def test_deterministic(self):
        x = np.random.default_rng(4).standard_normal((10, 8))
        a = linalg.approx_rank_r_basis(x, 3, rng=11)
        b = linalg.approx_rank_r_basis(x, 3, rng=11)
        np.testing.assert_array_equal(a, b)

    def test_no_oversampling_is_plain_sketch(self):
        x = np.random.default_rng(5).standard_normal((12, 9))
        q = linalg.approx_rank_r_basis(x, 3, power_iters=1, rng=4, oversample=0)
        omega = np.random.default_rng(4).standard_normal((12, 3))
        ref, _ = np.linalg.qr(x.T @ (x @ (x.T @ omega)))
        np.testing.assert_allclose(q @ q.T, ref @ ref.T, atol=1e-10)

    def test_oversampling_improves_unlucky_draws(self):
        rng = np.random.default_rng(6)
        worst = {0: 1.0, 5: 1.0}
        for _ in range(100):
            x = oracles.matrix_with_spectrum(rng, 30, 15, [10.0]) + 0.1 * oracles.matrix_with_spectrum(
                rng, 30, 15, rng.uniform(0, 9.0, 14))
            s = np.linalg.svd(x, compute_uv=False)
            seed = int(rng.integers(2**31))
            for over in worst:
                q = linalg.approx_rank_r_basis(x, 1, rng=seed, oversample=over)
                worst[over] = min(worst[over], np.linalg.norm(x @ q) ** 2 / s[0] ** 2)
        assert worst[5] >= 0.99
        assert worst[5] >= worst[0]

    def test_rank_too_large(self):
        with pytest.raises(ShapeError):
            linalg.approx_rank_r_basis(np.ones((3, 4)), 4)


class TestSandwich:
    def test_identity_projectors(self):
        rng = np.random.default_rng(0)
        g = rng.standard_normal((4, 3))
        ql, _ = np.linalg.qr(rng.standard_normal((4, 4)))
        qr, _ = np.linalg.qr(rng.standard_normal((3, 3)))
        np.testing.assert_allclose(linalg.sandwich_project(g, ql, qr), g, atol=1e-10)

    def test_annihilated(self):
        ql = np.array([[1.0], [0.0], [0.0]])
        g = np.array([[0.0, 0.0], [1.0, 2.0], [3.0, 4.0]])
        qr = np.array([[1.0], [0.0]])
        assert not linalg.sandwich_project(g, ql, qr).any()

    def test_explicit_projectors(self):
        rng = np.random.default_rng(1)
        g = rng.standard_normal((8, 6))
        ql, _ = np.linalg.qr(rng.standard_normal((8, 2)))
        qr, _ = np.linalg.qr(rng.standard_normal((6, 2)))
        ref = (ql @ ql.T) @ g @ (qr @ qr.T)
        np.testing.assert_allclose(linalg.sandwich_project(g, ql, qr), ref, atol=1e-10)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            linalg.sandwich_project(np.ones((3, 3)), np.ones((2, 1)), np.ones((3, 1)))
