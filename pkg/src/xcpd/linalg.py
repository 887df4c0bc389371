"""Small dense linear algebra: symmetric eigensolver, Procrustes, norms.

Matrices are plain 2-D ``float64`` numpy arrays. The eigensolver is a cyclic
Jacobi method using a round-robin pair schedule, so each round applies
``n // 2`` disjoint rotations at once with vectorized row/column updates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConvergenceError, DimensionError

SYMMETRY_TOL = 1e-10
SIGN_TOL = 1e-12
DEFAULT_TOL = 1e-12
MAX_SWEEPS = 100


@dataclass(frozen=True)
class EigenDecomposition:
    """Eigenvalues in ascending order and unit-norm eigenvector columns."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray

    def reconstruct(self) -> np.ndarray:
        v = self.eigenvectors
        return (v * self.eigenvalues) @ v.T


def as_matrix(m, name="matrix") -> np.ndarray:
    a = np.asarray(m, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DimensionError(f"{name} contains non-finite entries")
    return a


def frobenius_norm(m) -> float:
    a = np.asarray(m, dtype=np.float64)
    return float(np.sqrt(np.sum(a * a)))


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def _round_robin(n: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Pair schedule covering every (p, q) exactly once per sweep."""
    m = n + (n % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        p, q = [], []
        for i in range(m // 2):
            a, b = players[i], players[m - 1 - i]
            if a < n and b < n:
                p.append(min(a, b))
                q.append(max(a, b))
        rounds.append((np.array(p, dtype=np.intp), np.array(q, dtype=np.intp)))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _off_norm(a: np.ndarray) -> float:
    return float(np.sqrt(2.0 * np.sum(np.tril(a, -1) ** 2)))


def apply_sign_convention(vectors: np.ndarray) -> np.ndarray:
    """Flip columns so the first component with magnitude > 1e-12 is positive."""
    v = np.array(vectors, dtype=np.float64, copy=True)
    for j in range(v.shape[1]):
        nz = np.flatnonzero(np.abs(v[:, j]) > SIGN_TOL)
        if nz.size and v[nz[0], j] < 0:
            v[:, j] = -v[:, j]
    return v


def _order(values: np.ndarray, vectors: np.ndarray):
    idx = np.argsort(values, kind="stable")
    values = values[idx]
    vectors = vectors[:, idx]
    scale = max(1.0, float(np.max(np.abs(values)))) if values.size else 1.0
    tie_tol = 64 * np.finfo(np.float64).eps * scale
    out_idx = np.arange(values.size)
    start = 0
    while start < values.size:
        stop = start + 1
        while stop < values.size and values[stop] - values[stop - 1] <= tie_tol:
            stop += 1
        if stop - start > 1:
            block = list(range(start, stop))
            # lexicographically largest eigenvector first
            block.sort(key=lambda j: tuple(-vectors[:, j]))
            out_idx[start:stop] = block
            values[start:stop] = np.sort(values[start:stop])
        start = stop
    return values, vectors[:, out_idx]


def jacobi_eigh(m, tol: float = DEFAULT_TOL, max_sweeps: int = MAX_SWEEPS) -> EigenDecomposition:
    """Eigendecomposition of a real symmetric matrix by cyclic Jacobi rotations.

    Parameters
    ----------
    m : (n, n) array_like
        Symmetric matrix (asymmetry above 1e-10 is rejected).
    tol : float
        Relative reconstruction tolerance; sweeps stop once the off-diagonal
        Frobenius mass drops below ``tol * ||m||_F / 2``.
    max_sweeps : int
        Sweep budget before :class:`ConvergenceError` is raised.

    Returns
    -------
    EigenDecomposition
        Ascending eigenvalues; eigenvectors sign-normalized so the first
        non-negligible component of each column is positive.
    """
    a = as_matrix(m)
    n, cols = a.shape
    if n != cols:
        raise DimensionError(f"matrix must be square, got {a.shape}")
    if tol <= 0:
        raise ValueError("tol must be positive")
    scale = max(1.0, float(np.max(np.abs(a)))) if a.size else 1.0
    if np.max(np.abs(a - a.T), initial=0.0) > SYMMETRY_TOL * scale:
        raise DimensionError("matrix is not symmetric")

    a = 0.5 * (a + a.T)
    v = np.eye(n)
    target = 0.5 * tol * frobenius_norm(a)
    eps = np.finfo(np.float64).eps
    schedule = _round_robin(n)

    for _sweep in range(max_sweeps + 1):
        if _off_norm(a) <= target:
            break
        if _sweep == max_sweeps:
            raise ConvergenceError(f"Jacobi did not converge in {max_sweeps} sweeps")
        for p, q in schedule:
            if p.size == 0:
                continue
            apq = a[p, q]
            app = a[p, p]
            aqq = a[q, q]
            negligible = np.abs(apq) <= eps * np.sqrt(np.abs(app * aqq))
            active = ~negligible & (apq != 0.0)
            if negligible.any():
                a[p[negligible], q[negligible]] = 0.0
                a[q[negligible], p[negligible]] = 0.0
            if not active.any():
                continue
            p, q, apq = p[active], q[active], apq[active]
            theta = (a[q, q] - a[p, p]) / (2.0 * apq)
            sign = np.where(theta >= 0.0, 1.0, -1.0)
            t = sign / (np.abs(theta) + np.sqrt(1.0 + theta * theta))
            c = 1.0 / np.sqrt(1.0 + t * t)
            s = t * c

            rp = a[p, :].copy()
            rq = a[q, :]
            a[p, :] = c[:, None] * rp - s[:, None] * rq
            a[q, :] = s[:, None] * rp + c[:, None] * rq
            cp = a[:, p].copy()
            cq = a[:, q]
            a[:, p] = cp * c - cq * s
            a[:, q] = cp * s + cq * c
            a[p, q] = 0.0
            a[q, p] = 0.0

            vp = v[:, p].copy()
            vq = v[:, q]
            v[:, p] = vp * c - vq * s
            v[:, q] = vp * s + vq * c

    values, vectors = _order(np.diag(a).copy(), apply_sign_convention(v))
    return EigenDecomposition(values, vectors)


def _complete_basis(cols: list[np.ndarray], k: int) -> list[np.ndarray]:
    """Extend orthonormal vectors to a basis of R^k by Gram-Schmidt on e_i."""
    out = list(cols)
    for i in range(k):
        if len(out) == k:
            break
        e = np.zeros(k)
        e[i] = 1.0
        for _ in range(2):
            for u in out:
                e = e - (u @ e) * u
        nrm = np.linalg.norm(e)
        if nrm > 1e-8:
            out.append(e / nrm)
    return out


def procrustes_align(a, b) -> np.ndarray:
    """Orthogonal ``R`` minimizing ``||b - a R||_F``.

    The SVD of ``a.T @ b`` is read off the eigendecomposition of the
    symmetric block matrix ``[[0, M], [M.T, 0]]``, whose positive eigenpairs
    are ``sigma`` with vectors ``(u; v) / sqrt(2)``.
    """
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape != b.shape:
        raise DimensionError(f"shape mismatch: {a.shape} vs {b.shape}")
    k = a.shape[1]
    mt = a.T @ b
    block = np.zeros((2 * k, 2 * k))
    block[:k, k:] = mt
    block[k:, :k] = mt.T
    dec = jacobi_eigh(block)
    sig = dec.eigenvalues[::-1][:k]
    vecs = dec.eigenvectors[:, ::-1][:, :k]
    cutoff = 1e-10 * max(1.0, float(sig[0]) if k else 1.0)

    us, vs = [], []
    for j in range(k):
        if sig[j] <= cutoff:
            break
        u = vecs[:k, j] * np.sqrt(2.0)
        w = vecs[k:, j] * np.sqrt(2.0)
        us.append(u / np.linalg.norm(u))
        vs.append(w / np.linalg.norm(w))
    us = _complete_basis(us, k)
    vs = _complete_basis(vs, k)
    u_mat = np.column_stack(us) if k else np.zeros((0, 0))
    v_mat = np.column_stack(vs) if k else np.zeros((0, 0))
    return u_mat @ v_mat.T
