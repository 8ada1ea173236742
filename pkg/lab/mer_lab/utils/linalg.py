"""
Dense linear algebra and seeded randomness shared by every other module.

Matrices are plain float64 numpy arrays; `as_matrix` enforces the 2-D, finite
contract on the way in and `ensure_finite` on the way out.
"""
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg as sla
from scipy.linalg import lapack

from .validators import (
    ContractError,
    ShapeError,
    NotPositiveDefiniteError,
    as_matrix,
    ensure_finite,
    require_rows,
    require_square_symmetric,
)

JACOBI_TOLERANCE = 1e-12
JACOBI_MAX_SWEEPS = 100


class SeededRng:
    """
    Single-owner random stream: PCG64 bit generator seeded through SeedSequence.

    Normal draws use Box-Muller on two uniform draws so a seed fixes the
    normal stream independently of numpy's ziggurat sampler.
    """

    algorithm = "PCG64 + Box-Muller"

    def __init__(self, seed: Union[int, Sequence[int]]):
        self.seed = seed
        self._seq = np.random.SeedSequence(seed)
        self._gen = np.random.Generator(np.random.PCG64(self._seq))

    def child(self, key: int) -> "SeededRng":
        """Independent stream derived from this rng's seed and `key`."""
        base = list(self.seed) if isinstance(self.seed, (list, tuple)) else [int(self.seed)]
        return SeededRng(base + [int(key)])

    def uniform64(self, size: Optional[int] = None):
        return self._gen.integers(0, 2**64 - 1, size=size, dtype=np.uint64, endpoint=True)

    def uniform(self, size=None):
        return self._gen.random(size)

    def normal(self, size=None):
        shape = () if size is None else size
        count = int(np.prod(shape)) if shape != () else 1
        u1 = self._gen.random(count)
        u2 = self._gen.random(count)
        # 1 - u keeps the log argument in (0, 1]
        values = np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)
        if size is None:
            return float(values[0])
        return values.reshape(shape)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int) -> np.ndarray:
        """`size` distinct indices from range(n), returned in ascending order."""
        return np.sort(self._gen.choice(n, size=size, replace=False))


def matmul(a, b) -> np.ndarray:
    a = as_matrix(a, "a")
    b = as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(
            f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}"
        )
    return ensure_finite(a @ b, "matmul result")


def column_mean_std(z, eps: float) -> Tuple[np.ndarray, np.ndarray]:
    """Column means and sqrt(unbiased variance + eps)."""
    z = as_matrix(z, "z")
    require_rows(z, 2)
    if eps < 0:
        raise ContractError(f"eps must be >= 0, got {eps}")
    means = z.mean(axis=0)
    variances = z.var(axis=0, ddof=1)
    return means, np.sqrt(variances + eps)


def cholesky_logdet(s) -> Tuple[np.ndarray, float]:
    """Lower Cholesky factor of a symmetric PD matrix and its log-determinant."""
    s = as_matrix(s, "s")
    require_square_symmetric(s)
    if s.shape[0] == 0:
        return np.zeros((0, 0)), 0.0
    factor, info = lapack.dpotrf(s, lower=1, clean=1)
    if info > 0:
        raise NotPositiveDefiniteError(pivot=info - 1)
    if info < 0:
        raise ContractError(f"dpotrf rejected argument {-info}")
    logdet = 2.0 * float(np.sum(np.log(np.diag(factor))))
    return factor, logdet


def inverse_from_cholesky(factor: np.ndarray) -> np.ndarray:
    """Symmetric inverse of L·Lᵀ given its lower factor L."""
    inv, info = lapack.dpotri(factor, lower=1)
    if info != 0:
        raise NotPositiveDefiniteError(pivot=max(info - 1, 0))
    lower = np.tril(inv)
    return lower + np.tril(inv, -1).T


def _jacobi_eigenvalues(s: np.ndarray) -> np.ndarray:
    a = s.copy()
    n = a.shape[0]
    scale = np.linalg.norm(a)
    if n < 2 or scale == 0.0:
        return np.diag(a).copy()
    target = JACOBI_TOLERANCE * scale
    for _ in range(JACOBI_MAX_SWEEPS):
        off = np.linalg.norm(a - np.diag(np.diag(a)))
        if off < target:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                tau = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = (1.0 if tau >= 0 else -1.0) / (abs(tau) + np.sqrt(1.0 + tau * tau))
                c = 1.0 / np.sqrt(1.0 + t * t)
                sn = t * c
                col_p = a[:, p].copy()
                col_q = a[:, q].copy()
                a[:, p] = c * col_p - sn * col_q
                a[:, q] = sn * col_p + c * col_q
                row_p = a[p, :].copy()
                row_q = a[q, :].copy()
                a[p, :] = c * row_p - sn * row_q
                a[q, :] = sn * row_p + c * row_q
                a[p, q] = 0.0
                a[q, p] = 0.0
    return np.diag(a).copy()


def sym_eigenvalues(s, method: str = "jacobi") -> np.ndarray:
    """Eigenvalues of a symmetric matrix in ascending order."""
    s = as_matrix(s, "s")
    require_square_symmetric(s)
    if method == "jacobi":
        values = _jacobi_eigenvalues(s)
    elif method == "lapack":
        values = sla.eigvalsh(s) if s.size else np.zeros(0)
    else:
        raise ContractError(f"unknown eigen method '{method}'")
    return np.sort(values)


def singular_values(z) -> np.ndarray:
    """
    Singular values via the smaller Gram matrix, descending.

    Gram eigenvalues below the Gram resolution floor (k * machine eps * the
    largest eigenvalue) are noise of either sign and are clamped to zero
    together with the negative ones.
    """
    z = as_matrix(z, "z")
    rows, cols = z.shape
    k = min(rows, cols)
    if k == 0:
        return np.zeros(0)
    gram = z.T @ z if cols <= rows else z @ z.T
    gram = 0.5 * (gram + gram.T)
    eig = sym_eigenvalues(gram, method="lapack")
    floor = k * np.finfo(np.float64).eps * max(eig[-1], 0.0)
    eig = np.where(eig <= floor, 0.0, eig)
    return np.sqrt(eig)[::-1].copy()


def gaussian_matrix(rng: SeededRng, rows: int, cols: int) -> np.ndarray:
    if rows < 0 or cols < 0:
        raise ShapeError(f"negative dimensions {rows}x{cols}")
    if rows == 0 or cols == 0:
        return np.zeros((rows, cols))
    return rng.normal((rows, cols))


def center_columns(z) -> np.ndarray:
    z = as_matrix(z, "z")
    require_rows(z, 1)
    return z - z.mean(axis=0)
