"""Dense third- and fourth-order tensor primitives.

Values are plain float64 numpy arrays. ``Tensor3``/``Tensor4``/``Matrix``
are aliases documenting intent; the validating constructors (`tensor3`,
`tensor4`, `matrix`) enforce the invariants (positive dimensions, finite
entries) at the public boundaries.

All matricizations use the cyclic slice ordering: the mode-n unfolding has
the mode-n index on rows and, along columns, the next mode (cyclically)
varying fastest.  `_MODE_PERMS` is the single source of truth for this
ordering, shared by `matricize` and `dematricize` so the convention cannot
drift between the two.
"""

from __future__ import annotations

import numpy as np

Tensor3 = np.ndarray  # shape (I1, I2, I3)
Tensor4 = np.ndarray  # shape (D1, D2, D3, D4)
Matrix = np.ndarray  # shape (rows, cols)

MODES = (1, 2, 3)

# Axis permutation applied before reshaping to 2-D.  For mode n the row axis
# comes first and the remaining axes are ordered slowest-to-fastest, with the
# cyclically-next mode fastest:
#   mode 1: columns indexed (i3, i2), i2 fastest  -> I1 x (I2*I3)
#   mode 2: columns indexed (i1, i3), i3 fastest  -> I2 x (I3*I1)
#   mode 3: columns indexed (i2, i1), i1 fastest  -> I3 x (I1*I2)
_MODE_PERMS = {1: (0, 2, 1), 2: (1, 0, 2), 3: (2, 1, 0)}


def _validated(values, ndim: int, kind: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != ndim:
        raise ValueError(f"{kind} requires a {ndim}-D array, got {arr.ndim}-D")
    if any(d < 1 for d in arr.shape):
        raise ValueError(f"{kind} dimensions must be positive, got {arr.shape}")
    if not np.isfinite(arr).all():
        raise ValueError(f"{kind} entries must be finite")
    return arr


def tensor3(values) -> Tensor3:
    """Validate and coerce `values` into a third-order float64 tensor."""
    return _validated(values, 3, "Tensor3")


def tensor4(values) -> Tensor4:
    """Validate and coerce `values` into a fourth-order float64 tensor."""
    return _validated(values, 4, "Tensor4")


def matrix(values) -> Matrix:
    """Validate and coerce `values` into a float64 matrix."""
    return _validated(values, 2, "Matrix")


def _check_mode(mode: int) -> None:
    if mode not in _MODE_PERMS:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def matricize(t: Tensor3, mode: int) -> Matrix:
    """Unfold `t` along `mode` into a matrix (frontal-slice concatenation
    for mode 1, cyclic analogues for modes 2 and 3)."""
    _check_mode(mode)
    t = tensor3(t)
    perm = _MODE_PERMS[mode]
    return np.ascontiguousarray(t.transpose(perm).reshape(t.shape[mode - 1], -1))


def dematricize(m: Matrix, mode: int, dims: tuple[int, int, int]) -> Tensor3:
    """Exact inverse of `matricize` for the given mode and target dims."""
    _check_mode(mode)
    m = matrix(m)
    dims = tuple(int(d) for d in dims)
    if len(dims) != 3 or any(d < 1 for d in dims):
        raise ValueError(f"dims must be three positive integers, got {dims}")
    perm = _MODE_PERMS[mode]
    permuted = tuple(dims[p] for p in perm)
    expected = (dims[mode - 1], permuted[1] * permuted[2])
    if m.shape != expected:
        raise ValueError(
            f"matrix shape {m.shape} does not match mode-{mode} unfolding "
            f"of dims {dims} (expected {expected})"
        )
    inv = np.argsort(perm)
    return np.ascontiguousarray(m.reshape(permuted).transpose(inv))


def mode_n_product(t: Tensor3, u: Matrix, mode: int) -> Tensor3:
    """Multiply `t` along `mode` by `u`, resizing that mode from u.cols
    to u.rows.  `u` must have as many columns as the mode-n size of `t`."""
    _check_mode(mode)
    t = tensor3(t)
    u = matrix(u)
    if u.shape[1] != t.shape[mode - 1]:
        raise ValueError(
            f"matrix has {u.shape[1]} columns but tensor mode-{mode} "
            f"size is {t.shape[mode - 1]}"
        )
    out_dims = list(t.shape)
    out_dims[mode - 1] = u.shape[0]
    return dematricize(u @ matricize(t, mode), mode, tuple(out_dims))


def kronecker(a: Matrix, b: Matrix) -> Matrix:
    """Kronecker product: block (i, j) of the result is a[i, j] * b."""
    return np.kron(matrix(a), matrix(b))


def frobenius_norm(t) -> float:
    """Square root of the sum of squared entries of any dense array."""
    arr = np.asarray(t, dtype=np.float64)
    return float(np.sqrt(np.sum(arr * arr)))
