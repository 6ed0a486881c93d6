"""Differentiable lower-level solver for the multi-task group lasso.

Per task the training problem is

    min_w  0.5*||X w - y||^2 + lam * sum_l ||theta_l (.) w||_2 + 0.5*eta*||w||^2

with (.) the entrywise product and theta_l the l-th column of the
relaxed assignment matrix. The group term is dualized:

    lam * sum_l ||theta_l (.) w|| = max_{||u_l|| <= lam} sum_l <theta_l (.) u_l, w>,

and for fixed duals the w-minimization is the ridge system

    w(u) = (X^T X + eta*I)^{-1} (X^T y - sum_l theta_l (.) u_l).

Projected gradient ascent on the concave dual,

    u_l <- Proj_{||.|| <= lam}(u_l + gamma * theta_l (.) w(u)),

is smooth in theta away from the projection boundary, so running a fixed
number q of iterations gives a forward map theta -> w^(q) that an exact
reverse-mode replay differentiates. The system matrix does not depend on
theta or lam, so its Cholesky factor is computed once per task.

The dual gradient map has Lipschitz constant at most
max_l ||theta_l||_inf^2 / lambda_min(X^T X + eta*I) <= 1/eta; the step
size 0.9 * lambda_min(X^T X + eta*I) is 0.9/Lip for the theta-uniform
bound, hence guarantees monotone ascent for every feasible theta.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import TaskData
from .linalg import SpdFactor, spd_factor, spd_solve
from .penalty import GroupAssignment, _theta_array


class NonFiniteIterate(ArithmeticError):
    """Divergence guard: an iterate stopped being finite."""


class TapeMismatch(ValueError):
    """Cotangent or tape contents inconsistent with the recorded solve."""


@dataclass(frozen=True)
class TaskFactor:
    """Per-task cached pieces of the ridge system (theta- and lam-free)."""

    chol: SpdFactor
    xty: np.ndarray
    eta: float
    gamma: float  # dual ascent step size, 0.9 * lambda_min(X^T X + eta*I)


@dataclass(frozen=True)
class LowerTape:
    """Record of one unrolled solve, sufficient to replay its VJP."""

    q: int
    duals: np.ndarray  # (q+1, d, L); duals[0] is the initial point
    w: np.ndarray  # (d,) primal from the final duals
    gamma: float
    lam: float
    theta: np.ndarray  # (d, L) snapshot
    factor: TaskFactor


def precompute(task: TaskData, eta: float) -> TaskFactor:
    """Factor X^T X + eta*I and cache X^T y and the dual step size."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    X = task.X
    a = X.T @ X + eta * np.eye(X.shape[1])
    chol = spd_factor(a)
    lam_min = float(np.linalg.eigvalsh(a)[0])
    return TaskFactor(chol=chol, xty=X.T @ task.y, eta=eta, gamma=0.9 * lam_min)


def _project_ball_columns(v: np.ndarray, lam: float) -> np.ndarray:
    """Project each column of v onto the Euclidean ball of radius lam."""
    norms = np.linalg.norm(v, axis=0)
    scale = np.where(norms > lam, lam / np.maximum(norms, lam), 1.0)
    return v * scale


def _ridge_w(factor: TaskFactor, theta: np.ndarray, duals: np.ndarray) -> np.ndarray:
    return spd_solve(factor.chol, factor.xty - (theta * duals).sum(axis=1))


def lower_solve(
    factor: TaskFactor,
    theta,
    lam: float,
    q: int,
    u0: np.ndarray | None = None,
) -> LowerTape:
    """Run q dual-ascent iterations and record the tape.

    ``u0`` warm-starts the duals (treated as a constant of the map);
    feasibility is enforced by an initial projection. Default is zero.
    """
    if not lam > 0:
        raise ValueError("lam must be positive")
    if q < 1:
        raise ValueError("q must be at least 1")
    th = _theta_array(theta)
    d, L = th.shape
    U = np.zeros((d, L)) if u0 is None else _project_ball_columns(np.asarray(u0, dtype=np.float64), lam)
    duals = np.empty((q + 1, d, L))
    duals[0] = U
    for j in range(q):
        w = _ridge_w(factor, th, U)
        U = _project_ball_columns(U + factor.gamma * th * w[:, None], lam)
        duals[j + 1] = U
        if j % 64 == 0 and not np.all(np.isfinite(U)):
            raise NonFiniteIterate(f"dual iterate non-finite at iteration {j}")
    w = _ridge_w(factor, th, U)
    if not np.all(np.isfinite(w)):
        raise NonFiniteIterate("final primal iterate non-finite")
    return LowerTape(q=q, duals=duals, w=w, gamma=factor.gamma, lam=lam, theta=th, factor=factor)


def solve_w(
    factor: TaskFactor,
    theta,
    lam: float,
    q: int,
    u0: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Tape-free forward pass; returns (w, final duals).

    Same iteration as :func:`lower_solve`, for consumers that only need
    the primal output (loss traces, final metrics).
    """
    if not lam > 0:
        raise ValueError("lam must be positive")
    th = _theta_array(theta)
    U = np.zeros(th.shape) if u0 is None else _project_ball_columns(np.asarray(u0, dtype=np.float64), lam)
    for j in range(q):
        w = _ridge_w(factor, th, U)
        U = _project_ball_columns(U + factor.gamma * th * w[:, None], lam)
        if j % 64 == 0 and not np.all(np.isfinite(U)):
            raise NonFiniteIterate(f"dual iterate non-finite at iteration {j}")
    w = _ridge_w(factor, th, U)
    if not np.all(np.isfinite(w)):
        raise NonFiniteIterate("final primal iterate non-finite")
    return w, U


def lower_vjp(tape: LowerTape, gbar: np.ndarray) -> np.ndarray:
    """d(gbar . w^(q)) / d(theta) by exact reverse-mode replay.

    Intermediate primals and pre-projection duals are recomputed from the
    stored dual iterates with the same operations as the forward pass.
    Through the ball projection the Jacobian of v -> lam*v/||v|| is used
    where ||v|| > lam and the identity elsewhere (boundary counts as
    inside).
    """
    gbar = np.asarray(gbar, dtype=np.float64)
    th = tape.theta
    d, L = th.shape
    if gbar.shape != (d,):
        raise TapeMismatch(f"cotangent shape {gbar.shape} does not match d={d}")
    if tape.duals.shape != (tape.q + 1, d, L):
        raise TapeMismatch("tape dual record inconsistent with its q and theta")
    factor = tape.factor
    gamma = tape.gamma
    lam = tape.lam

    theta_bar = np.zeros((d, L))
    # final primal solve: w = A^{-1}(xty - (th * U_q).sum(1))
    z = spd_solve(factor.chol, gbar)
    theta_bar -= z[:, None] * tape.duals[tape.q]
    u_bar = -z[:, None] * th

    for j in range(tape.q - 1, -1, -1):
        U = tape.duals[j]
        w = _ridge_w(factor, th, U)
        v = U + gamma * th * w[:, None]
        # projection of each column
        norms = np.linalg.norm(v, axis=0)
        outside = norms > lam
        if np.any(outside):
            safe = np.maximum(norms, lam)
            dots = (v * u_bar).sum(axis=0)
            scaled = (lam / safe) * (u_bar - v * (dots / (safe * safe)))
            v_bar = np.where(outside, scaled, u_bar)
        else:
            v_bar = u_bar
        # v = U + gamma * th * w[:, None]
        theta_bar += gamma * v_bar * w[:, None]
        w_bar = gamma * (th * v_bar).sum(axis=1)
        # w = A^{-1}(xty - (th * U).sum(1))
        z = spd_solve(factor.chol, w_bar)
        theta_bar -= z[:, None] * U
        u_bar = v_bar - z[:, None] * th
    return theta_bar


def primal_objective(task: TaskData, theta, lam: float, eta: float, w: np.ndarray) -> float:
    """Training objective 0.5||Xw-y||^2 + lam*sum_l||theta_l (.) w|| + 0.5*eta*||w||^2."""
    th = _theta_array(theta)
    r = task.X @ w - task.y
    group_norms = np.linalg.norm(th * w[:, None], axis=0)
    return float(0.5 * r @ r + lam * group_norms.sum() + 0.5 * eta * w @ w)


def dual_objective(task: TaskData, theta, lam: float, eta: float, duals: np.ndarray) -> float:
    """Concave dual value g(u) = min_w L(w, u) at the given feasible duals."""
    th = _theta_array(theta)
    X = task.X
    a = X.T @ X + eta * np.eye(X.shape[1])
    w = np.linalg.solve(a, X.T @ task.y - (th * duals).sum(axis=1))
    r = X @ w - task.y
    return float(0.5 * r @ r + 0.5 * eta * w @ w + w @ (th * duals).sum(axis=1))
