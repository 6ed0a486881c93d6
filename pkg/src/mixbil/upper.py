"""Upper-level machinery: validation loss, hypergradients, projected Adam.

The upper objective over a batch B of tasks is

    (1/|B|) * sum_{t in B} C_t(w_t^(q)(theta)) + (1/eps) * phi(theta)

with C_t the mean squared validation error. Its theta-gradient is
assembled from per-task vector-Jacobian products through the unrolled
lower-level solver plus the penalty gradient. One stage minimizes this
at fixed eps with minibatch Adam, projecting each row of theta back to
its simplex after every step.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import lowerlevel, penalty
from .data import TaskBundle, TaskData, substream
from .linalg import project_simplex_rows
from .penalty import GroupAssignment


def validation_loss(task_val: TaskData, w: np.ndarray) -> float:
    """Mean squared error 0.5*||X w - y||^2 / n on one split."""
    r = task_val.X @ w - task_val.y
    return float(0.5 * (r @ r) / task_val.y.size)


@dataclass(frozen=True)
class UpperEval:
    loss: float  # mean validation loss over the batch
    penalty: float  # weighted penalty term phi(theta)/eps (0 when eps is inf)
    grad: Optional[np.ndarray]  # d x L gradient of loss + penalty term

    @property
    def objective(self) -> float:
        return self.loss + self.penalty


@dataclass(frozen=True)
class AdamConfig:
    alpha: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps_stab: float = 1e-8
    weight_decay: float = 0.0


@dataclass(frozen=True)
class AdamState:
    """Moment estimates for one (d, L) variable plus its hyperparameters."""

    step: int
    m: np.ndarray
    v: np.ndarray
    cfg: AdamConfig

    @classmethod
    def fresh(cls, d: int, L: int, cfg: AdamConfig) -> "AdamState":
        return cls(step=0, m=np.zeros((d, L)), v=np.zeros((d, L)), cfg=cfg)


def adam_step(state: AdamState, theta: GroupAssignment, grad: np.ndarray) -> tuple[AdamState, GroupAssignment]:
    """One bias-corrected Adam update followed by row-wise simplex projection."""
    cfg = state.cfg
    if grad.shape != state.m.shape or grad.shape != theta.theta.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match state")
    g = grad + cfg.weight_decay * theta.theta if cfg.weight_decay != 0.0 else grad
    t = state.step + 1
    m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * g
    v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * g * g
    m_hat = m / (1.0 - cfg.beta1 ** t)
    v_hat = v / (1.0 - cfg.beta2 ** t)
    raw = theta.theta - cfg.alpha * m_hat / (np.sqrt(v_hat) + cfg.eps_stab)
    return AdamState(step=t, m=m, v=v, cfg=cfg), GroupAssignment(project_simplex_rows(raw))


class GroupLassoObjective:
    """Penalized validation objective of a task bundle at fixed lam.

    Implements the interface consumed by the continuation loop: ``d``,
    ``L``, ``n_units`` and ``evaluate``. Keeps per-task Cholesky factors
    and a warm-start cache of final dual variables (zero before the first
    evaluation of a task, then carried across upper steps).
    """

    def __init__(self, bundle: TaskBundle, lam: float, q: int, eta: float):
        self.bundle = bundle
        self.lam = float(lam)
        self.q = int(q)
        self.eta = float(eta)
        self.d = bundle.d
        self.L = bundle.L
        self.n_units = bundle.T
        self.factors = [lowerlevel.precompute(t.train, eta) for t in bundle.tasks]
        self.warm: dict[int, np.ndarray] = {}

    def reset_warm(self) -> None:
        self.warm.clear()

    def evaluate(
        self,
        theta: GroupAssignment,
        eps: float,
        batch: Sequence[int],
        want_grad: bool = True,
        update_warm: bool = True,
    ) -> UpperEval:
        """Loss, weighted penalty and hypergradient on a batch of tasks.

        Tasks are accumulated in the order given (callers pass ascending
        indices), keeping reductions bit-stable. With ``eps`` infinite the
        penalty term and its gradient contribution are exactly zero.
        """
        if len(batch) == 0:
            raise ValueError("batch must be nonempty")
        loss_sum = 0.0
        grad_sum = np.zeros((self.d, self.L)) if want_grad else None
        for t in batch:
            task = self.bundle.tasks[t]
            u0 = self.warm.get(t)
            if want_grad:
                tape = lowerlevel.lower_solve(self.factors[t], theta, self.lam, self.q, u0=u0)
                w, u_final = tape.w, tape.duals[-1]
            else:
                w, u_final = lowerlevel.solve_w(self.factors[t], theta, self.lam, self.q, u0=u0)
            loss_sum += validation_loss(task.val, w)
            if want_grad:
                n_val = task.val.y.size
                gbar = task.val.X.T @ (task.val.X @ w - task.val.y) / n_val
                grad_sum += lowerlevel.lower_vjp(tape, gbar)
            if update_warm:
                self.warm[t] = u_final
        loss = loss_sum / len(batch)
        if np.isinf(eps):
            pen = 0.0
            grad = grad_sum / len(batch) if want_grad else None
        else:
            pen = penalty.phi(theta) / eps
            grad = grad_sum / len(batch) + penalty.grad_phi(theta) / eps if want_grad else None
        return UpperEval(loss=loss, penalty=pen, grad=grad)

    def task_solutions(self, theta: GroupAssignment, q: Optional[int] = None) -> np.ndarray:
        """Fresh (zero-dual) per-task solutions at theta, as a (d, T) matrix."""
        q = self.q if q is None else q
        cols = [lowerlevel.solve_w(f, theta, self.lam, q)[0] for f in self.factors]
        return np.stack(cols, axis=1)


def evaluate(
    bundle: TaskBundle,
    batch: Sequence[int],
    theta: GroupAssignment,
    lam: float,
    eps: float,
    q: int,
    eta: float,
    warm: Optional[dict[int, np.ndarray]] = None,
    want_grad: bool = True,
) -> UpperEval:
    """One-shot batch evaluation (builds factors; see GroupLassoObjective)."""
    obj = GroupLassoObjective(bundle, lam, q, eta)
    if warm is not None:
        obj.warm = warm
    return obj.evaluate(theta, eps, batch, want_grad=want_grad, update_warm=warm is not None)


@dataclass(frozen=True)
class StageConfig:
    epochs: int = 500
    batch_size: int = 10
    adam: AdamConfig = field(default_factory=AdamConfig)
    # plateau exit: stop once the full-batch objective has not improved
    # by more than exit_tol for exit_patience consecutive epochs
    exit_tol: float = 1e-9
    exit_patience: int = 20


@dataclass
class StageResult:
    theta: GroupAssignment
    objective_trace: np.ndarray  # per-epoch full-batch loss + penalty term
    loss_trace: np.ndarray  # per-epoch full-batch validation part
    dist_trace: np.ndarray  # per-epoch sup-distance to the binary set
    epochs_run: int
    adam_state: AdamState


def run_stage(
    obj,
    theta0: GroupAssignment,
    eps: float,
    cfg: StageConfig,
    rng: np.random.Generator,
    adam_state: Optional[AdamState] = None,
) -> StageResult:
    """Minimize obj at fixed eps: epochs of minibatch Adam over the units.

    Each epoch visits every unit once through a seeded random permutation
    split into batches of ``batch_size``. The full-batch objective and the
    binarity distance are recorded once per epoch (warm caches are read
    but not advanced by the trace evaluation).
    """
    theta = theta0
    state = adam_state if adam_state is not None else AdamState.fresh(obj.d, obj.L, cfg.adam)
    objective_trace: list[float] = []
    loss_trace: list[float] = []
    dist_trace: list[float] = []
    all_units = list(range(obj.n_units))
    best = np.inf
    stall = 0
    epochs_run = 0
    for _epoch in range(cfg.epochs):
        perm = rng.permutation(obj.n_units)
        for start in range(0, obj.n_units, cfg.batch_size):
            chunk = np.sort(perm[start : start + cfg.batch_size]).tolist()
            ev = obj.evaluate(theta, eps, chunk, want_grad=True, update_warm=True)
            state, theta = adam_step(state, theta, ev.grad)
        full = obj.evaluate(theta, eps, all_units, want_grad=False, update_warm=False)
        objective_trace.append(full.objective)
        loss_trace.append(full.loss)
        dist_trace.append(penalty.dist_inf_to_bin(theta))
        epochs_run += 1
        if best - full.objective > cfg.exit_tol:
            best = full.objective
            stall = 0
        else:
            stall += 1
            if stall >= cfg.exit_patience:
                break
    return StageResult(
        theta=theta,
        objective_trace=np.asarray(objective_trace),
        loss_trace=np.asarray(loss_trace),
        dist_trace=np.asarray(dist_trace),
        epochs_run=epochs_run,
        adam_state=state,
    )


def solve_stage(
    bundle: TaskBundle,
    theta0: GroupAssignment,
    lam: float,
    eps: float,
    cfg: StageConfig,
    q: int,
    eta: float,
    seed: int = 0,
) -> StageResult:
    """Standalone single-stage solve on a bundle (fresh warm caches)."""
    obj = GroupLassoObjective(bundle, lam, q, eta)
    return run_stage(obj, theta0, eps, cfg, substream(seed, "stage/standalone"))


def init_theta(d: int, L: int, rng: np.random.Generator) -> GroupAssignment:
    """Near-uniform start: 1/L per entry plus tiny noise, re-projected.

    The noise breaks the exact row-permutation symmetry at which the
    penalty gradient vanishes.
    """
    base = np.full((d, L), 1.0 / L)
    noise = rng.uniform(-1.0 / (100.0 * L), 1.0 / (100.0 * L), size=(d, L))
    return GroupAssignment(project_simplex_rows(base + noise))
