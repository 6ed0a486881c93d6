"""Concave binarity penalty and distances to the binary assignments.

The penalty is ``phi(theta) = sum_i theta_i * (1 - theta_i)`` over all
d*L entries of a group-assignment matrix. It is smooth, concave and
quadratic on the unit box, nonnegative, and vanishes exactly on binary
points. Feasible assignments live on the product of row simplices; the
binary subset consists of one-hot rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


ENTRY_TOL = 1e-12
ROWSUM_TOL = 1e-9

# Binarity test threshold on the sup-distance to the binary set. Iterates
# approach vertices asymptotically in floating point, so an exact
# membership test is unusable; 1e-3 sits far inside the 1/2 radius within
# which a nearby vertex is unambiguous.
TAU_BIN = 1e-3


@dataclass(frozen=True)
class GroupAssignment:
    """Relaxed group membership matrix in [0,1]^{d x L} with unit row sums."""

    theta: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.theta, dtype=np.float64)
        if t.ndim != 2:
            raise ValueError(f"theta must be a (d, L) matrix, got shape {t.shape}")
        object.__setattr__(self, "theta", t)
        if not np.all(np.isfinite(t)):
            raise ValueError("theta has non-finite entries")
        if t.min() < -ENTRY_TOL or t.max() > 1.0 + ENTRY_TOL:
            raise ValueError("theta entries must lie in [0, 1]")
        if np.max(np.abs(t.sum(axis=1) - 1.0)) > ROWSUM_TOL:
            raise ValueError("theta rows must sum to 1")

    @property
    def d(self) -> int:
        return self.theta.shape[0]

    @property
    def L(self) -> int:
        return self.theta.shape[1]

    @classmethod
    def from_group_indices(cls, indices, L: int) -> "GroupAssignment":
        """Binary assignment putting feature i in group indices[i]."""
        indices = np.asarray(indices, dtype=np.intp)
        t = np.zeros((indices.size, L))
        t[np.arange(indices.size), indices] = 1.0
        return cls(t)

    def group_indices(self) -> np.ndarray:
        """Per-feature group index (argmax per row, lowest index on ties)."""
        return np.argmax(self.theta, axis=1)

    def is_binary(self) -> bool:
        return bool(np.all((self.theta == 0.0) | (self.theta == 1.0)))


def _theta_array(theta) -> np.ndarray:
    return theta.theta if isinstance(theta, GroupAssignment) else np.asarray(theta, dtype=np.float64)


def phi(theta) -> float:
    """Binarity penalty: sum over entries of t*(1-t). Zero iff binary."""
    t = _theta_array(theta)
    return float(np.sum(t * (1.0 - t)))


def grad_phi(theta) -> np.ndarray:
    """Entrywise gradient of phi: 1 - 2*t."""
    t = _theta_array(theta)
    return 1.0 - 2.0 * t


def dist_inf_to_bin(theta) -> float:
    """Exact sup-norm distance to the nearest feasible binary assignment.

    The binary set factorizes over rows (each row is some vertex e_l of
    its simplex), so the distance is the max over rows of the distance to
    the row's best vertex. For a row t the distance to e_l is
    max(1 - t_l, max_{m != l} t_m), minimized by l = argmax t; hence per
    row it equals max(1 - t_max, t_second_max).
    """
    t = _theta_array(theta)
    d, L = t.shape
    if L == 1:
        return float(np.max(1.0 - t[:, 0], initial=0.0))
    part = np.partition(t, L - 2, axis=1)
    m1 = part[:, L - 1]
    m2 = part[:, L - 2]
    return float(np.max(np.maximum(1.0 - m1, m2)))


def snap_to_bin(theta) -> GroupAssignment:
    """Replace each row by its nearest vertex (argmax; ties to lowest index).

    The output is exactly binary: phi(snap_to_bin(theta)) == 0.0.
    """
    t = _theta_array(theta)
    idx = np.argmax(t, axis=1)
    return GroupAssignment.from_group_indices(idx, t.shape[1])
