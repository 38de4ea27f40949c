"""Independent reference computations used by the tests.

None of these share code paths with the package under test.
"""
import numpy as np


def pinv_complement(v, vecs):
    """v - V (VᵀV)⁻¹ Vᵀ v via the normal equations."""
    gram = vecs.T @ vecs
    coef = np.linalg.solve(gram, vecs.T @ v)
    return v - vecs @ coef


def gram_schmidt_twice(m):
    """Modified Gram-Schmidt, scalar loops, two sweeps per column."""
    d, k = m.shape
    q = np.zeros((d, k))
    for j in range(k):
        v = [float(x) for x in m[:, j]]
        for _ in range(2):
            for i in range(j):
                c = sum(q[t, i] * v[t] for t in range(d))
                v = [v[t] - c * q[t, i] for t in range(d)]
        n = sum(x * x for x in v) ** 0.5
        q[:, j] = np.array(v) / n
    return q


def jacobi_svd(a, sweeps=60, tol=1e-15):
    """One-sided Jacobi SVD. Returns (U, s, Vt) with s sorted descending."""
    u = np.array(a, dtype=np.float64).copy()
    n, m = u.shape
    v = np.eye(m)
    for _ in range(sweeps):
        off = 0.0
        for i in range(m - 1):
            for j in range(i + 1, m):
                alpha = u[:, i] @ u[:, i]
                beta = u[:, j] @ u[:, j]
                gamma = u[:, i] @ u[:, j]
                scale = np.sqrt(alpha) * np.sqrt(beta)
                if scale < 1e-280 or abs(gamma) <= tol * scale:
                    continue
                off = max(off, abs(gamma) / scale)
                zeta = (beta - alpha) / (2.0 * gamma)
                if abs(zeta) > 1e150:
                    t = 0.5 / zeta
                elif zeta == 0.0:
                    t = 1.0
                else:
                    t = np.sign(zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                ui, uj = u[:, i].copy(), u[:, j].copy()
                u[:, i], u[:, j] = c * ui - s * uj, s * ui + c * uj
                vi, vj = v[:, i].copy(), v[:, j].copy()
                v[:, i], v[:, j] = c * vi - s * vj, s * vi + c * vj
        if off < tol:
            break
    sv = np.linalg.norm(u, axis=0)
    order = np.argsort(-sv)
    sv = sv[order]
    v = v[:, order]
    u = u[:, order]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = np.where(sv > 0, u / np.where(sv > 0, sv, 1.0), 0.0)
    return u, sv, v.T


def top_right_singular(x, r):
    """(m, r) top right singular vectors via the Jacobi oracle."""
    x = np.asarray(x)
    # Jacobi acts on columns; orient so columns are the right-space dimension
    _, _, vt = jacobi_svd(x)
    return vt[:r].T


def principal_angle_max(a, b):
    """Largest principal angle between the spans of orthonormal a and b."""
    s = np.linalg.svd(a.T @ b, compute_uv=False)
    return float(np.arccos(np.clip(s.min(), -1.0, 1.0)))


def central_diff(f, x, h=1e-5):
    """Gradient of scalar f at array x by central differences."""
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + h
        fp = f()
        x[idx] = old - h
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * h)
    return g


def matrix_with_spectrum(rng, n, m, singular_values):
    """n x m matrix with the given leading singular values (rest zero)."""
    k = len(singular_values)
    u, _ = np.linalg.qr(rng.standard_normal((n, k)))
    v, _ = np.linalg.qr(rng.standard_normal((m, k)))
    return (u * np.asarray(singular_values)) @ v.T
