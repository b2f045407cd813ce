"""Dense float64 matrix arithmetic for desk-scale model surgery.

Matrices are plain 2-D numpy float64 arrays (row-major). Everything here is
deterministic: identical inputs give bit-identical outputs on a given
platform, which the golden tests rely on.

Random matrices come from numpy's PCG64 bit generator driving the ziggurat
`standard_normal` sampler. That generator is part of the package contract
(seeded streams are stable across platforms and numpy versions) and must not
be changed silently.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatch, NonFinite, NonSquare, SingularMatrix


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float64 array, rejecting anything else."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got ndim={arr.ndim}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise DimensionMismatch(f"{name} must be non-empty, got shape {arr.shape}")
    return arr


def check_finite(a: np.ndarray, name: str = "matrix") -> None:
    if not np.isfinite(a).all():
        raise NonFinite(f"{name} contains NaN or Inf")


def matmul(a, b) -> np.ndarray:
    """Matrix product a @ b with an explicit inner-dimension check."""
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise DimensionMismatch(
            f"inner dimensions differ: a is {a.shape[0]}x{a.shape[1]}, "
            f"b is {b.shape[0]}x{b.shape[1]}"
        )
    return a @ b


def invert(a, rel_pivot_tol: float = 1e-12) -> np.ndarray:
    """Invert a square matrix via LU decomposition with partial pivoting.

    A pivot whose magnitude falls below rel_pivot_tol * max|A| raises
    SingularMatrix; the threshold is relative so the decision is invariant
    under scaling of A. The multiply-back residual max|A @ inv(A) - I| stays
    below 1e-8 for condition numbers up to about 1e6.
    """
    a = as_matrix(a, "a")
    n, m = a.shape
    if n != m:
        raise NonSquare(f"cannot invert a {n}x{m} matrix")
    check_finite(a, "a")

    scale = float(np.abs(a).max())
    if scale == 0.0:
        raise SingularMatrix("matrix is exactly zero")
    threshold = rel_pivot_tol * scale

    lu = a.copy()
    perm = np.arange(n)
    for k in range(n):
        p = k + int(np.argmax(np.abs(lu[k:, k])))
        if abs(lu[p, k]) < threshold:
            raise SingularMatrix(
                f"pivot {lu[p, k]:.3e} at elimination step {k} is below "
                f"{rel_pivot_tol:g} * max|A| = {threshold:.3e}"
            )
        if p != k:
            lu[[k, p]] = lu[[p, k]]
            perm[[k, p]] = perm[[p, k]]
        lu[k + 1:, k] /= lu[k, k]
        if k + 1 < n:
            lu[k + 1:, k + 1:] -= np.outer(lu[k + 1:, k], lu[k, k + 1:])

    # Solve A X = I: forward substitution with L (unit diagonal), then back
    # substitution with U, on the row-permuted identity.
    x = np.eye(n)[perm]
    for i in range(1, n):
        x[i] -= lu[i, :i] @ x[:i]
    for i in range(n - 1, -1, -1):
        x[i] = (x[i] - lu[i, i + 1:] @ x[i + 1:]) / lu[i, i]
    return x


def norm_1(a) -> float:
    """Induced 1-norm (maximum absolute column sum)."""
    a = as_matrix(a, "a")
    return float(np.abs(a).sum(axis=0).max())


def condition_1norm(a) -> float:
    """1-norm condition number via the explicit inverse.

    Fine at desk scale; propagates SingularMatrix from invert().
    """
    a = as_matrix(a, "a")
    return norm_1(a) * norm_1(invert(a))


def random_gaussian(rows: int, cols: int, seed: int, scale: float = 1.0) -> np.ndarray:
    """Seeded i.i.d. Normal(0, scale^2) matrix.

    Same (rows, cols, seed, scale) gives a bit-identical matrix on every
    platform (PCG64 stream + ziggurat sampler, see module docstring).
    """
    if rows < 1 or cols < 1:
        raise DimensionMismatch(f"dimensions must be >= 1, got {rows}x{cols}")
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.standard_normal((rows, cols)) * scale
