"""Regularised DeePC and its receding-horizon loop.

The optimisation over ``g`` is

    min  |Yf g - y_r|_Q^2 + |Uf g|_R^2 + lambda_y |Yp g - y_ini|^2 + lambda_g |g|^2
    s.t. Up g = u_ini,  u_min <= Uf g <= u_max,  y_min <= Yf g <= y_max

where the slack on the past outputs has been eliminated. Without bounds it
is one symmetric KKT solve whose matrix does not change between time steps,
so it is factorised once. Box bounds are handled with an active-set loop on
top of that factorisation. The same code serves the full Hankel data and the
SVD-reduced matrix, whose row blocks share the ``[Up; Uf; Yp; Yf]`` layout.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np
from scipy import linalg

from .trajectory import HankelSystem, ReducedHankel, Trajectory, numerical_rank

log = logging.getLogger(__name__)

MAX_ACTIVE_SET_ITERATIONS = 100


class RankError(np.linalg.LinAlgError):
    """The past-input block of the data matrix is rank deficient."""


class SolverError(RuntimeError):
    """The active-set iteration failed to converge."""


@dataclass(frozen=True)
class DeePCConfig:
    """Controller hyperparameters.

    ``lambda_y = inf`` turns the past-output relaxation into a hard equality.
    ``lambda_g = 0`` is accepted for comparisons against model-based MPC on
    exact data; the solver then falls back to a least-squares KKT solve.
    """

    t_ini: int = 20
    horizon: int = 20
    q_weight: float = 1000.0
    r_weight: float = 0.25e-3
    lambda_g: float = 1000.0
    lambda_y: float = 3.0e5
    input_bounds: tuple[float, float] | None = None
    output_bounds: tuple[float, float] | None = None
    reference: float = 0.1

    def __post_init__(self):
        if self.t_ini < 0 or self.horizon < 1:
            raise ValueError("t_ini must be >= 0 and horizon >= 1")
        if np.any(np.asarray(self.q_weight) < 0):
            raise ValueError("q_weight must be nonnegative")
        if np.any(np.asarray(self.r_weight) <= 0):
            raise ValueError("r_weight must be positive")
        if self.lambda_g < 0 or not self.lambda_y > 0:
            raise ValueError("need lambda_g >= 0 and lambda_y > 0")
        for name in ("input_bounds", "output_bounds"):
            b = getattr(self, name)
            if b is not None and not b[0] <= b[1]:
                raise ValueError(f"{name}: lower bound exceeds upper bound")

    @property
    def hard_past_outputs(self) -> bool:
        return math.isinf(self.lambda_y)


@dataclass
class ControllerState:
    """The ``t_ini`` most recent inputs and outputs, oldest first."""

    u_ini: deque
    y_ini: deque

    @classmethod
    def zeros(cls, t_ini: int, y0: float = 0.0) -> "ControllerState":
        return cls(deque([0.0] * t_ini, maxlen=t_ini), deque([y0] * t_ini, maxlen=t_ini))

    def push(self, u: float, y: float) -> None:
        self.u_ini.append(float(u))
        self.y_ini.append(float(y))

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        return np.array(self.u_ini, dtype=float), np.array(self.y_ini, dtype=float)


@dataclass(frozen=True)
class DeePCSolution:
    g: np.ndarray
    u_star: np.ndarray
    y_star: np.ndarray
    sigma_y: np.ndarray
    objective: float
    active_set: tuple = ()


def _lift(weight, n: int) -> np.ndarray:
    w = np.asarray(weight, dtype=float)
    return np.full(n, float(w)) if w.ndim == 0 else w.reshape(n).copy()


class DeePC:
    """DeePC problem bound to one data matrix (full ``HankelSystem`` or ``ReducedHankel``)."""

    def __init__(self, data: HankelSystem | ReducedHankel, config: DeePCConfig):
        if data.t_ini != config.t_ini or data.horizon != config.horizon:
            raise ValueError(f"data split ({data.t_ini}, {data.horizon}) does not match "
                             f"config ({config.t_ini}, {config.horizon})")
        self.data = data
        self.config = config
        up, uf, yp, yf = (np.asarray(b, dtype=float) for b in (data.up, data.uf, data.yp, data.yf))
        self.up, self.uf, self.yp, self.yf = up, uf, yp, yf
        c = up.shape[1]
        self.n_vars = c
        if up.shape[0] and numerical_rank(up) < up.shape[0]:
            raise RankError("past-input block is rank deficient; data are not persistently exciting")

        cfg = config
        self.q = _lift(cfg.q_weight, yf.shape[0])
        self.r = _lift(cfg.r_weight, uf.shape[0])
        hess = cfg.lambda_g * np.eye(c) + (uf.T * self.r) @ uf + (yf.T * self.q) @ yf
        if cfg.hard_past_outputs:
            eq = np.vstack([up, yp])
        else:
            hess += cfg.lambda_y * yp.T @ yp
            eq = up
        self.eq = eq
        self.hess = hess
        k = eq.shape[0]
        kkt = np.zeros((c + k, c + k))
        kkt[:c, :c] = hess
        kkt[:c, c:] = eq.T
        kkt[c:, :c] = eq
        self._kkt = kkt
        # a strictly convex Hessian with full-rank equalities gives a regular KKT matrix
        self._direct = cfg.lambda_g > 0 and not cfg.hard_past_outputs
        if self._direct:
            self._lu = linalg.lu_factor(kkt, check_finite=False)
        else:
            self._pinv = np.linalg.pinv(kkt, rcond=1e-13)

        # candidate inequality rows: (row vector, lower, upper, label)
        rows, lo, hi = [], [], []
        if cfg.input_bounds is not None:
            rows.append(uf)
            lo += [cfg.input_bounds[0]] * uf.shape[0]
            hi += [cfg.input_bounds[1]] * uf.shape[0]
        if cfg.output_bounds is not None:
            rows.append(yf)
            lo += [cfg.output_bounds[0]] * yf.shape[0]
            hi += [cfg.output_bounds[1]] * yf.shape[0]
        self.ineq = np.vstack(rows) if rows else np.zeros((0, c))
        self.lower = np.array(lo)
        self.upper = np.array(hi)
        if self._direct and self.ineq.shape[0]:
            padded = np.hstack([self.ineq, np.zeros((self.ineq.shape[0], k))])
            self._kinv_ineq = linalg.lu_solve(self._lu, padded.T)
        self._warm: tuple = ()

    def _rhs(self, u_ini, y_ini, y_ref):
        cfg = self.config
        lin = (self.yf.T * self.q) @ y_ref
        if cfg.hard_past_outputs:
            eq_rhs = np.concatenate([u_ini, y_ini])
        else:
            lin = lin + cfg.lambda_y * self.yp.T @ y_ini
            eq_rhs = u_ini
        return np.concatenate([lin, eq_rhs])

    def _kkt_solve(self, rhs):
        if self._direct:
            return linalg.lu_solve(self._lu, rhs, check_finite=False)
        return self._pinv @ rhs

    def _solve_working(self, rhs, working):
        """Solve the equality QP with the inequality rows in ``working`` held at their bounds."""
        c = self.n_vars
        if not working:
            return self._kkt_solve(rhs)[:c], np.zeros(0)
        idx = np.array([i for i, _ in working])
        vals = np.array([self.lower[i] if side < 0 else self.upper[i] for i, side in working])
        if self._direct:
            z0 = self._kkt_solve(rhs)
            kd = self._kinv_ineq[:, idx]
            schur = self.ineq[idx] @ kd[:c]
            mu = np.linalg.lstsq(schur, self.ineq[idx] @ z0[:c] - vals, rcond=None)[0]
            return z0[:c] - kd[:c] @ mu, mu
        n = self._kkt.shape[0]
        w = len(idx)
        big = np.zeros((n + w, n + w))
        big[:n, :n] = self._kkt
        big[:c, n:] = self.ineq[idx].T
        big[n:, :c] = self.ineq[idx]
        sol = np.linalg.lstsq(big, np.concatenate([rhs, vals]), rcond=None)[0]
        return sol[:c], sol[n:]

    def _active_set(self, rhs):
        working = [w for w in self._warm]
        tol = 1e-9 * max(1.0, float(np.max(np.abs(np.concatenate([self.lower, self.upper])))))
        for _ in range(MAX_ACTIVE_SET_ITERATIONS):
            g, mu = self._solve_working(rhs, working)
            vals = self.ineq @ g
            in_w = {i for i, _ in working}
            viol = np.maximum(self.lower - vals, vals - self.upper)
            if in_w:
                viol[list(in_w)] = -np.inf
            worst = int(np.argmax(viol))
            if viol[worst] > tol:
                working.append((worst, -1 if self.lower[worst] - vals[worst] > 0 else 1))
                continue
            # lower-bound multipliers must be <= 0, upper-bound ones >= 0
            wrong = [mu[j] * side for j, (_, side) in enumerate(working)]
            if wrong and min(wrong) < -1e-12:
                working.pop(int(np.argmin(wrong)))
                continue
            self._warm = tuple(working)
            return g, tuple(working)
        raise SolverError(f"active-set iteration did not converge in {MAX_ACTIVE_SET_ITERATIONS} iterations")

    def solve(self, u_ini, y_ini, reference=None) -> DeePCSolution:
        cfg = self.config
        u_ini = np.asarray(u_ini, dtype=float).reshape(-1)
        y_ini = np.asarray(y_ini, dtype=float).reshape(-1)
        if u_ini.size != self.up.shape[0] or y_ini.size != self.yp.shape[0]:
            raise ValueError(f"expected u_ini/y_ini of length {self.up.shape[0]}/{self.yp.shape[0]}")
        ref = cfg.reference if reference is None else reference
        y_ref = _lift(ref, self.yf.shape[0])
        rhs = self._rhs(u_ini, y_ini, y_ref)
        if self.ineq.shape[0]:
            g, active = self._active_set(rhs)
        else:
            g, active = self._kkt_solve(rhs)[: self.n_vars], ()
        u_star = self.uf @ g
        y_star = self.yf @ g
        sigma = self.yp @ g - y_ini
        lam_y = 0.0 if cfg.hard_past_outputs else cfg.lambda_y
        obj = (float(np.sum(self.q * (y_star - y_ref) ** 2)) + float(np.sum(self.r * u_star**2))
               + lam_y * float(sigma @ sigma) + cfg.lambda_g * float(g @ g))
        return DeePCSolution(g, u_star, y_star, sigma, obj, active)


def solve(data, ctrl_state: ControllerState, config: DeePCConfig) -> DeePCSolution:
    """One-shot solve; builds and factorises the problem on every call."""
    u_ini, y_ini = ctrl_state.arrays()
    return DeePC(data, config).solve(u_ini, y_ini)


def stage_cost(y, u, config: DeePCConfig):
    """``Q (y - y_r)^2 + R u^2`` per sample (works elementwise on arrays)."""
    q = np.asarray(config.q_weight, dtype=float).reshape(-1)[0]
    r = np.asarray(config.r_weight, dtype=float).reshape(-1)[0]
    y = np.asarray(y, dtype=float)
    u = np.asarray(u, dtype=float)
    out = q * (y - config.reference) ** 2 + r * u**2
    return float(out) if out.ndim == 0 else out


class Plant(Protocol):
    dt: float

    def output(self) -> float: ...

    def step(self, u: float) -> float: ...


class LTIPlant:
    """Discrete state-space plant ``x+ = Ax + Bu``, ``y = Cx + Du``.

    ``step(u)`` returns ``C x_k + D u_k`` and then advances the state.
    """

    def __init__(self, a, b, c, d=None, x0=None, dt: float = 1.0):
        self.a = np.atleast_2d(np.asarray(a, dtype=float))
        self.b = np.asarray(b, dtype=float).reshape(self.a.shape[0], -1)
        self.c = np.asarray(c, dtype=float).reshape(-1, self.a.shape[0])
        self.d = np.zeros((self.c.shape[0], self.b.shape[1])) if d is None else np.atleast_2d(d)
        self.x = np.zeros(self.a.shape[0]) if x0 is None else np.asarray(x0, dtype=float).copy()
        self.dt = dt

    def output(self) -> float:
        return float((self.c @ self.x)[0])

    def step(self, u) -> float:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        y = self.c @ self.x + self.d @ u
        self.x = self.a @ self.x + self.b @ u
        return float(y[0]) if y.size == 1 else y

    def simulate(self, u_seq) -> np.ndarray:
        return np.array([self.step(u) for u in u_seq])


@dataclass(frozen=True)
class StepDiagnostics:
    k: int
    t: float
    u_applied: float
    y_measured: float
    objective: float
    slack_norm: float
    g_norm: float


DIAGNOSTICS_HEADER = ["k", "t", "u_applied", "y_measured", "objective", "slack_norm", "g_norm"]


@dataclass
class ClosedLoopResult:
    trajectory: Trajectory
    diagnostics: list[StepDiagnostics]
    ini_history: list = field(default_factory=list)
    error: Exception | None = None

    def write_diagnostics(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(DIAGNOSTICS_HEADER)
            for d in self.diagnostics:
                writer.writerow([d.k, repr(d.t), repr(d.u_applied), repr(d.y_measured),
                                 repr(d.objective), repr(d.slack_norm), repr(d.g_norm)])


def run_closed_loop(plant: Plant, data, config: DeePCConfig, k_end: int,
                    disturbance: Callable[[int], float] | Sequence[float] | None = None,
                    controller: DeePC | None = None, record_ini: bool = False) -> ClosedLoopResult:
    """Receding-horizon DeePC for ``k_end`` samples.

    The first ``t_ini`` samples apply zero torque while the output history
    fills; afterwards each step solves the DeePC problem and applies the first
    optimal input. ``disturbance`` is added to the torque reaching the plant
    but is not seen by the controller. A solver failure stops the loop and the
    partial result carries the exception.
    """
    ctrl = controller or DeePC(data, config)
    t_ini = config.t_ini
    state = ControllerState.zeros(t_ini)
    if callable(disturbance):
        dist = disturbance
    elif disturbance is None:
        dist = lambda k: 0.0  # noqa: E731
    else:
        seq = np.asarray(disturbance, dtype=float)
        dist = lambda k: float(seq[k])  # noqa: E731

    us, ys, diags, inis = [], [], [], []
    error = None
    for k in range(k_end):
        if k < t_ini:
            u = 0.0
            obj = slack = gnorm = float("nan")
        else:
            u_ini, y_ini = state.arrays()
            if record_ini:
                inis.append((u_ini.copy(), y_ini.copy()))
            try:
                sol = ctrl.solve(u_ini, y_ini)
            except (SolverError, np.linalg.LinAlgError) as exc:
                log.error("DeePC solve failed at k=%d: %s", k, exc)
                error = exc
                break
            u = float(sol.u_star[0])
            obj = sol.objective
            slack = float(np.linalg.norm(sol.sigma_y))
            gnorm = float(np.linalg.norm(sol.g))
        try:
            y = float(plant.step(u + dist(k)))
        except Exception as exc:  # plant failure aborts with the partial trajectory
            log.error("plant step failed at k=%d: %s", k, exc)
            error = exc
            break
        us.append(u)
        ys.append(y)
        state.push(u, y)
        diags.append(StepDiagnostics(k, k * plant.dt, u, y, obj, slack, gnorm))
    traj = Trajectory(np.array(us), np.array(ys), plant.dt) if us else None
    return ClosedLoopResult(traj, diags, inis, error)
