"""Dense numerical kernels: SPD factorization/solve and simplex projection.

Everything here is pure and operates on float64 arrays. The SPD path is
a thin, contract-checked wrapper around LAPACK's Cholesky; the simplex
projection is the standard sort-and-threshold algorithm.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg


SYMMETRY_TOL = 1e-10


class NotSymmetric(ValueError):
    """Matrix fails the symmetry check (relative tolerance 1e-10)."""


class NotPositiveDefinite(ValueError):
    """Cholesky hit a non-positive pivot (or the input is non-finite)."""


class DimensionMismatch(ValueError):
    """Operand shapes are inconsistent."""


@dataclass(frozen=True)
class SpdFactor:
    """Lower Cholesky factor L of an SPD matrix A, with A = L @ L.T."""

    dim: int
    lower: np.ndarray

    def solve(self, b: np.ndarray) -> np.ndarray:
        return spd_solve(self, b)


def spd_factor(a: np.ndarray) -> SpdFactor:
    """Factor a symmetric positive definite matrix.

    Raises NotSymmetric if ``|A - A.T|`` exceeds 1e-10 relative to the
    magnitude of A, and NotPositiveDefinite if the Cholesky breaks down
    (including non-finite input).
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    scale = max(1.0, float(np.max(np.abs(a))))
    if float(np.max(np.abs(a - a.T))) > SYMMETRY_TOL * scale:
        raise NotSymmetric("matrix is not symmetric within tolerance 1e-10")
    try:
        lower = scipy.linalg.cholesky(a, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from exc
    return SpdFactor(dim=a.shape[0], lower=lower)


def spd_solve(factor: SpdFactor, b: np.ndarray) -> np.ndarray:
    """Solve A z = b given the Cholesky factor of A.

    ``b`` may be a vector of length ``dim`` or a matrix with ``dim``
    rows (one solve per column).
    """
    b = np.asarray(b, dtype=np.float64)
    if b.shape[0] != factor.dim or b.ndim > 2:
        raise DimensionMismatch(
            f"right-hand side of shape {b.shape} does not match dimension {factor.dim}"
        )
    return scipy.linalg.cho_solve((factor.lower, True), b, check_finite=False)


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of a vector onto the probability simplex.

    Sort-and-threshold algorithm, O(L log L): with u the entries of v in
    decreasing order, find the largest j with u_j > (sum_{i<=j} u_i - 1)/j,
    shift by that threshold, and clip at zero.
    """
    v = np.asarray(v, dtype=np.float64).ravel()
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    j = np.arange(1, v.size + 1)
    rho = np.nonzero(u * j > css - 1.0)[0][-1]
    tau = (css[rho] - 1.0) / (rho + 1.0)
    return np.maximum(v - tau, 0.0)


def project_simplex_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise simplex projection of a (d, L) matrix, vectorized."""
    m = np.asarray(m, dtype=np.float64)
    d, L = m.shape
    u = -np.sort(-m, axis=1)
    css = np.cumsum(u, axis=1)
    j = np.arange(1, L + 1)
    cond = u * j > css - 1.0
    # last True index per row; cond[:, 0] is always True
    rho = L - 1 - np.argmax(cond[:, ::-1], axis=1)
    tau = (css[np.arange(d), rho] - 1.0) / (rho + 1.0)
    return np.maximum(m - tau[:, None], 0.0)
