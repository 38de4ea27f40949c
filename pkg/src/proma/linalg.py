"""Dense kernels: reduced QR, complement projections, randomized bases.

Everything works on float64 numpy arrays. Matrices whose columns are the
vectors to project against are laid out ``(d, k)``: one column per vector.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InputError, ShapeError

# relative column norm below which a deflated column counts as dependent
RANK_TOL = 1e-12


@dataclass
class FlopCounter:
    """Tally of multiply-add operations spent inside one kernel call.

    ``skipped_columns`` counts zero-norm columns the iterative projection
    ignored.
    """

    multiply_adds: int = 0
    skipped_columns: int = 0

    def add(self, n: int) -> None:
        self.multiply_adds += int(n)


def _matrix(m, name="matrix") -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise InputError(f"{name} has non-finite entries")
    return m


def _vector(v, name="vector") -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError(f"{name} must be 1-D, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise InputError(f"{name} has non-finite entries")
    return v


def qr_reduced(m, counter: FlopCounter | None = None):
    """Reduced QR by classical Gram-Schmidt with one reorthogonalization.

    Returns ``(Q, R)`` with ``Q`` of shape ``(d, k)`` and ``R`` upper
    triangular ``(k, k)``. A column that is (numerically) in the span of the
    previous ones gets a zero column in ``Q`` and a zero on the diagonal of
    ``R``; the surviving columns of ``Q`` are orthonormal and ``Q @ R``
    still reproduces ``m``.
    """
    m = _matrix(m, "m")
    d, k = m.shape
    if k < 1 or d < k:
        raise ShapeError(f"qr_reduced needs d >= k >= 1, got {m.shape}")
    return _gram_schmidt(m, counter)


def _gram_schmidt(m, counter=None):
    # also valid for k > d: the surplus columns come out dependent
    d, k = m.shape
    q = np.zeros((d, k))
    r = np.zeros((k, k))
    scale = float(np.max(np.linalg.norm(m, axis=0)))
    for j in range(k):
        v = m[:, j].copy()
        basis = q[:, :j]
        for _ in range(2):
            c = basis.T @ v
            v -= basis @ c
            r[:j, j] += c
        nrm = float(np.linalg.norm(v))
        if counter is not None:
            counter.add(4 * j * d + 2 * d)
        if scale == 0.0 or nrm < RANK_TOL * scale:
            continue
        q[:, j] = v / nrm
        r[j, j] = nrm
    return q, r


def dropped_columns(r) -> np.ndarray:
    """Indices of columns that ``qr_reduced`` found linearly dependent."""
    return np.flatnonzero(np.diag(r) == 0.0)


def _check_pair(acc_vec, vecs):
    acc_vec = _vector(acc_vec, "acc_vec")
    vecs = _matrix(vecs, "vecs")
    if vecs.shape[0] != acc_vec.shape[0]:
        raise ShapeError(
            f"acc_vec has dim {acc_vec.shape[0]} but vecs has {vecs.shape[0]} rows")
    if vecs.shape[1] < 1:
        raise ShapeError("vecs needs at least one column")
    return acc_vec, vecs


def project_to_complement(acc_vec, vecs, counter: FlopCounter | None = None):
    """Component of ``acc_vec`` orthogonal to every column of ``vecs``."""
    acc_vec, vecs = _check_pair(acc_vec, vecs)
    d, k = vecs.shape
    q, _ = _gram_schmidt(vecs, counter)
    if counter is not None:
        counter.add(2 * k * d)
    return acc_vec - q @ (q.T @ acc_vec)


def project_to_complement_iterative(acc_vec, vecs, passes: int = 2,
                                    counter: FlopCounter | None = None):
    """Approximate complement projection by repeated sequential deflation.

    Columns are normalized once, then ``acc_vec`` is deflated against each
    of them in turn; the sweep is repeated ``passes`` times. Costs O(kd).
    Zero columns carry no direction and are skipped.
    """
    acc_vec, vecs = _check_pair(acc_vec, vecs)
    d, k = vecs.shape
    norms = np.linalg.norm(vecs, axis=0)
    keep = norms > 0.0
    if counter is not None:
        counter.add(2 * k * d)
        counter.skipped_columns += int(k - keep.sum())
    units = vecs[:, keep] / norms[keep]
    out = acc_vec.copy()
    for _ in range(passes):
        for u in units.T:
            out -= np.dot(out, u) * u
    if counter is not None:
        counter.add(2 * passes * units.shape[1] * d)
    return out


def approx_rank_r_basis(x, r: int, power_iters: int = 1, rng=None, oversample: int = 5):
    """Orthonormal ``(m, r)`` basis approximating the top-r right singular
    subspace of ``x`` (shape ``(n, m)``), via a randomized range finder.

    The sketch has ``r + oversample`` columns (capped at ``min(n, m)``); when
    it is wider than ``r``, the top-r right singular vectors of ``x`` restricted
    to the sketched subspace are returned. ``oversample=0`` gives the plain
    r-column sketch, which misses the dominant subspace noticeably more often
    on unlucky draws.

    ``rng`` is anything accepted by ``numpy.random.default_rng``. Power
    iterations are applied without intermediate re-orthogonalization, so
    many iterations lose precision in the trailing directions.
    """
    x = _matrix(x, "x")
    n, m = x.shape
    if r < 1 or r > min(n, m):
        raise ShapeError(f"rank {r} outside [1, min{x.shape}]")
    if oversample < 0:
        raise ValueError("oversample must be >= 0")
    width = min(r + oversample, n, m)
    gen = np.random.default_rng(rng)
    omega = gen.standard_normal((n, width))
    y = x.T @ omega
    for _ in range(power_iters):
        y = x.T @ (x @ y)
    q, _ = qr_reduced(y)
    if width == r:
        return q
    _, _, vt = np.linalg.svd(x @ q, full_matrices=False)
    return q @ vt[:r].T


def sandwich_project(g, q_left, q_right):
    """``q_left q_leftᵀ g q_right q_rightᵀ``, contracted inside-out."""
    g = _matrix(g, "g")
    q_left = _matrix(q_left, "q_left")
    q_right = _matrix(q_right, "q_right")
    if q_left.shape[0] != g.shape[0] or q_right.shape[0] != g.shape[1]:
        raise ShapeError(
            f"factors {q_left.shape}, {q_right.shape} do not fit g {g.shape}")
    core = (q_left.T @ g) @ q_right
    return q_left @ core @ q_right.T
