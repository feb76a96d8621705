"""Fixed projection ("mapping") layers fitted by alternating least squares.

The three factor matrices of a rank-(R1, R2, R3) Tucker model are fitted on
the averaged training patch and then applied as frozen mode products: they
are never touched by gradient updates.  `fit` records per-iteration core
deltas and reconstruction errors so the monotonicity of the sweep is
observable from the outside.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .linalg import orthonormal_init, truncated_svd
from .tensor import Tensor3, frobenius_norm, kronecker, matricize, mode_n_product, tensor3


@dataclass
class MappingStack:
    """Three column-orthonormal factors plus fit diagnostics."""

    u1: np.ndarray  # (I1, R1)
    u2: np.ndarray  # (I2, R2)
    u3: np.ndarray  # (I3, R3)
    input_dims: tuple[int, int, int]
    ranks: tuple[int, int, int]
    seed: int
    iterations_used: int
    final_core_delta: float
    converged: bool = True
    core_deltas: list[float] = field(default_factory=list, repr=False)
    reconstruction_errors: list[float] = field(default_factory=list, repr=False)


def average_patch(patches: Sequence[Tensor3]) -> Tensor3:
    """Entrywise arithmetic mean of same-shaped patches."""
    if len(patches) == 0:
        raise ValueError("cannot average an empty patch sequence")
    first = tensor3(patches[0])
    acc = np.zeros_like(first)
    for i, p in enumerate(patches):
        p = np.asarray(p, dtype=np.float64)
        if p.shape != first.shape:
            raise ValueError(
                f"patch {i} has dims {p.shape}, expected {first.shape}"
            )
        acc += p
    return acc / len(patches)


def _core(x: Tensor3, u1, u2, u3) -> Tensor3:
    out = mode_n_product(x, u1.T, 1)
    out = mode_n_product(out, u2.T, 2)
    return mode_n_product(out, u3.T, 3)


def _compose(g: Tensor3, u1, u2, u3) -> Tensor3:
    out = mode_n_product(g, u1, 1)
    out = mode_n_product(out, u2, 2)
    return mode_n_product(out, u3, 3)


def fit(
    patches: Sequence[Tensor3],
    ranks: tuple[int, int, int],
    seed: int,
    tol: float = 0.01,
    max_iters: int = 100,
) -> MappingStack:
    """Fit the three factors by ALS on the averaged patch.

    Starting from seeded orthonormal factors, each iteration refreshes one
    factor at a time from the truncated SVD of the unfolded average times
    the Kronecker product of the other two, then recomputes the core.  The
    loop stops once the core moves by at most `tol` in Frobenius norm
    between consecutive iterations, or at `max_iters` (in which case the
    returned stack is flagged non-converged and the caller decides).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iters < 1:
        raise ValueError("max_iters must be at least 1")
    xbar = average_patch(patches)
    dims = xbar.shape
    r1, r2, r3 = (int(r) for r in ranks)
    if not (1 <= r1 <= dims[0] and 1 <= r2 <= dims[1] and 1 <= r3 <= dims[2]):
        raise ValueError(f"ranks {ranks} invalid for patch dims {dims}")

    init_seeds = np.random.SeedSequence(seed).generate_state(3)
    u1 = orthonormal_init(dims[0], r1, int(init_seeds[0]))
    u2 = orthonormal_init(dims[1], r2, int(init_seeds[1]))
    u3 = orthonormal_init(dims[2], r3, int(init_seeds[2]))

    x1 = matricize(xbar, 1)
    x2 = matricize(xbar, 2)
    x3 = matricize(xbar, 3)

    g_prev = _core(xbar, u1, u2, u3)
    core_deltas: list[float] = []
    recon_errors: list[float] = []
    converged = False
    iterations = 0
    delta = float("inf")
    for iterations in range(1, max_iters + 1):
        u1 = truncated_svd(x1 @ kronecker(u3, u2), r1).u
        u2 = truncated_svd(x2 @ kronecker(u1, u3), r2).u
        u3 = truncated_svd(x3 @ kronecker(u2, u1), r3).u
        g = _core(xbar, u1, u2, u3)
        delta = frobenius_norm(g_prev - g)
        core_deltas.append(delta)
        recon_errors.append(frobenius_norm(xbar - _compose(g, u1, u2, u3)))
        g_prev = g
        if delta <= tol:
            converged = True
            break

    return MappingStack(
        u1=u1,
        u2=u2,
        u3=u3,
        input_dims=tuple(int(d) for d in dims),
        ranks=(r1, r2, r3),
        seed=int(seed),
        iterations_used=iterations,
        final_core_delta=delta,
        converged=converged,
        core_deltas=core_deltas,
        reconstruction_errors=recon_errors,
    )


def identity_stack(dims: tuple[int, int, int]) -> MappingStack:
    """Pass-through stack (identity factors, ranks equal to dims)."""
    dims = tuple(int(d) for d in dims)
    return MappingStack(
        u1=np.eye(dims[0]),
        u2=np.eye(dims[1]),
        u3=np.eye(dims[2]),
        input_dims=dims,
        ranks=dims,
        seed=0,
        iterations_used=0,
        final_core_delta=0.0,
        converged=True,
    )


def project(stack: MappingStack, x: Tensor3) -> Tensor3:
    """Apply the three mapping layers: x shrinks to shape `stack.ranks`."""
    x = tensor3(x)
    if x.shape != stack.input_dims:
        raise ValueError(f"input dims {x.shape} != stack dims {stack.input_dims}")
    return _core(x, stack.u1, stack.u2, stack.u3)


def reconstruct(stack: MappingStack, g: Tensor3) -> Tensor3:
    """Map a core tensor of shape `stack.ranks` back to input dims."""
    g = tensor3(g)
    if g.shape != stack.ranks:
        raise ValueError(f"core dims {g.shape} != stack ranks {stack.ranks}")
    return _compose(g, stack.u1, stack.u2, stack.u3)


def energy_retained(stack: MappingStack, x: Tensor3) -> float:
    """Fraction of squared Frobenius norm surviving the projection."""
    x = tensor3(x)
    total = frobenius_norm(x) ** 2
    if total == 0.0:
        raise ValueError("energy_retained is undefined for a zero tensor")
    kept = frobenius_norm(project(stack, x)) ** 2
    return min(kept / total, 1.0)


def mapping_fit_multiplications(m: int, n: int, z: int) -> int:
    """Multiplication count for one ALS fit on a single M x N x Z tensor:
    (MN)^2 Z + (ZN)^2 M + (MZ)^2 N."""
    return (m * n) ** 2 * z + (z * n) ** 2 * m + (m * z) ** 2 * n


def per_patch_td_multiplications(m: int, n: int, z: int, k: int) -> int:
    """Multiplication count for decomposing K patches of size M x N x Z
    independently: (MZ + MN + ZN) * M * N * Z * K."""
    return (m * z + m * n + z * n) * m * n * z * k
