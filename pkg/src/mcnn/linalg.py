"""Truncated SVD via one-sided Jacobi rotations, plus seeded orthonormal
initialization.

The matrices that reach this module are small (longest side a few hundred),
so a from-scratch Jacobi sweep is plenty fast and keeps the factorization
fully deterministic for a given input: no BLAS/LAPACK dispatch is involved
anywhere in the decomposition path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .tensor import Matrix, matrix

# One-sided Jacobi stops once every column pair has normalized inner product
# below this; the cap keeps non-convergence observable instead of silent.
JACOBI_TOL = 1e-12
MAX_SWEEPS = 10_000


class ConvergenceError(RuntimeError):
    """Numeric iteration failed to converge; carries the iteration count."""

    def __init__(self, message: str, iterations: int):
        super().__init__(message)
        self.iterations = iterations


@dataclass(frozen=True)
class TruncatedSVD:
    """Rank-r factorization a ~ u @ diag(s) @ v.T with orthonormal columns."""

    u: Matrix  # (m, r)
    s: np.ndarray  # (r,) non-negative, non-increasing
    v: Matrix  # (n, r)


def truncated_svd(a: Matrix, r: int) -> TruncatedSVD:
    """Best rank-`r` factorization of `a` (m x n), 1 <= r <= min(m, n).

    Raises ValueError for an out-of-range rank and ConvergenceError if the
    Jacobi sweeps hit the iteration cap.
    """
    a = matrix(a)
    m, n = a.shape
    r = int(r)
    if not 1 <= r <= min(m, n):
        raise ValueError(f"rank {r} out of range for a {m}x{n} matrix")
    if m >= n:
        u, s, v = _jacobi_svd(a)
    else:
        v, s, u = _jacobi_svd(a.T)
    u, s, v = u[:, :r].copy(), s[:r].copy(), v[:, :r].copy()
    _fix_signs(u, v)
    return TruncatedSVD(u=u, s=s, v=v)


def _jacobi_svd(a: np.ndarray):
    """Full SVD of `a` with rows >= cols by one-sided Jacobi rotations."""
    m, n = a.shape
    w = a.copy()
    v = np.eye(n)
    sweeps = 0
    for sweeps in range(1, MAX_SWEEPS + 1):
        off = 0.0
        for p in range(n - 1):
            for q in range(p + 1, n):
                wp = w[:, p]
                wq = w[:, q]
                app = wp @ wp
                aqq = wq @ wq
                apq = wp @ wq
                denom = np.sqrt(app * aqq)
                if denom == 0.0:
                    continue
                off = max(off, abs(apq) / denom)
                if abs(apq) <= JACOBI_TOL * denom:
                    continue
                zeta = (aqq - app) / (2.0 * apq)
                t = np.sign(zeta) / (abs(zeta) + np.sqrt(1.0 + zeta * zeta))
                if zeta == 0.0:
                    t = 1.0
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                new_p = c * wp - s * wq
                new_q = s * wp + c * wq
                w[:, p] = new_p
                w[:, q] = new_q
                vp = v[:, p].copy()
                v[:, p] = c * vp - s * v[:, q]
                v[:, q] = s * vp + c * v[:, q]
        if off <= JACOBI_TOL:
            break
    else:
        raise ConvergenceError(
            f"Jacobi SVD did not converge in {MAX_SWEEPS} sweeps", MAX_SWEEPS
        )
    norms = np.sqrt(np.sum(w * w, axis=0))
    order = np.argsort(-norms, kind="stable")
    s = norms[order]
    w = w[:, order]
    v = v[:, order]
    u = np.zeros_like(w)
    scale = s[0] if s.size and s[0] > 0 else 1.0
    for j in range(n):
        if s[j] > scale * np.finfo(np.float64).eps:
            u[:, j] = w[:, j] / s[j]
        else:
            s[j] = 0.0
            u[:, j] = _complete_column(u, j)
    return u, s, v


def _complete_column(u: np.ndarray, j: int) -> np.ndarray:
    # Deterministic filler for a zero singular direction: first standard
    # basis vector with a usable residual after projecting out u[:, :j].
    m = u.shape[0]
    for k in range(m):
        cand = np.zeros(m)
        cand[k] = 1.0
        for i in range(j):
            cand -= (u[:, i] @ cand) * u[:, i]
        norm = np.sqrt(cand @ cand)
        if norm > 0.5:
            return cand / norm
    raise ConvergenceError("could not complete orthonormal basis", 0)


def _fix_signs(u: np.ndarray, v: np.ndarray) -> None:
    # Largest-magnitude entry of each left singular vector made non-negative
    # so factorizations are reproducible across runs.
    for j in range(u.shape[1]):
        i = int(np.argmax(np.abs(u[:, j])))
        if u[i, j] < 0:
            u[:, j] = -u[:, j]
            v[:, j] = -v[:, j]


def orthonormal_init(rows: int, cols: int, seed: int) -> Matrix:
    """Seeded matrix with orthonormal columns (cols <= rows).

    A Gaussian draw is orthogonalized by two-pass modified Gram-Schmidt,
    which keeps the result deterministic for a fixed seed and orthonormal
    to well below 1e-10.
    """
    rows, cols = int(rows), int(cols)
    if cols > rows:
        raise ValueError(f"cols ({cols}) must not exceed rows ({rows})")
    if rows < 1 or cols < 1:
        raise ValueError("rows and cols must be positive")
    rng = np.random.default_rng(seed)
    q = rng.standard_normal((rows, cols))
    for j in range(cols):
        for _ in range(2):
            for i in range(j):
                q[:, j] -= (q[:, i] @ q[:, j]) * q[:, i]
        norm = np.sqrt(q[:, j] @ q[:, j])
        if norm < 1e-12:
            raise ConvergenceError("degenerate Gram-Schmidt column", j)
        q[:, j] /= norm
    return q
