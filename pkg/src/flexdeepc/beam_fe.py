"""Finite-element model of a rigid hub carrying a clamped Euler-Bernoulli beam.

The beam is discretised with cubic Hermite elements. Node 0 sits at the hub
and is clamped (its deflection and slope are eliminated), so the elastic
coordinate vector ``a`` holds ``(w_1, phi_1, ..., w_n, phi_n)``. The hub
angle ``theta`` is appended as the last coordinate of the augmented system

    [[M,  m ], [m^T, J~]] [a_tt, theta_tt] + [[K, 0], [0, 0]] [a, theta] = [0, tau]

which keeps the augmented mass matrix symmetric. Time integration uses the
Chung-Hulbert Generalized-alpha scheme with a factorisation computed once.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy import linalg


class ParameterError(ValueError):
    """Raised for physically meaningless model or integrator parameters."""


@dataclass(frozen=True)
class BeamModel:
    """Physical and discretisation parameters of the hub-beam plant.

    Defaults are the values used throughout the experiments: EI = 120,
    rho = 20 kg/m, L = 5 m, J = 400 kg m^2, 20 elements (h = 0.25 m) and a
    0.05 s sample period.
    """

    ei: float = 120.0
    rho: float = 20.0
    length: float = 5.0
    hub_inertia: float = 400.0
    n_elements: int = 20
    dt: float = 0.05

    def __post_init__(self):
        for name in ("ei", "rho", "length", "hub_inertia", "dt"):
            value = getattr(self, name)
            if not np.isfinite(value) or value <= 0:
                raise ParameterError(f"{name} must be positive, got {value!r}")
        if int(self.n_elements) != self.n_elements or self.n_elements < 2:
            raise ParameterError(f"n_elements must be an integer >= 2, got {self.n_elements!r}")

    @property
    def h(self) -> float:
        """Element length."""
        return self.length / self.n_elements

    @property
    def n_dof(self) -> int:
        """Number of elastic coordinates (two per free node)."""
        return 2 * self.n_elements

    def with_overrides(self, **changes) -> "BeamModel":
        return replace(self, **changes)


@dataclass(frozen=True)
class IntegratorConfig:
    """Generalized-alpha parameters derived from the spectral radius ``rho_inf``."""

    rho_inf: float = 0.9

    def __post_init__(self):
        if not 0.0 <= self.rho_inf <= 1.0:
            raise ParameterError(f"rho_inf must lie in [0, 1], got {self.rho_inf!r}")

    @property
    def alpha_m(self) -> float:
        return (2.0 * self.rho_inf - 1.0) / (self.rho_inf + 1.0)

    @property
    def alpha_f(self) -> float:
        return self.rho_inf / (self.rho_inf + 1.0)

    @property
    def gamma(self) -> float:
        return 0.5 - self.alpha_m + self.alpha_f

    @property
    def beta(self) -> float:
        return 0.25 * (1.0 - self.alpha_m + self.alpha_f) ** 2


@dataclass(frozen=True)
class PlantState:
    """Elastic coordinates and hub angle with their first two time derivatives."""

    a: np.ndarray
    a_t: np.ndarray
    a_tt: np.ndarray
    theta: float = 0.0
    theta_t: float = 0.0
    theta_tt: float = 0.0
    time: float = 0.0

    @classmethod
    def rest(cls, n_dof: int, theta: float = 0.0, time: float = 0.0) -> "PlantState":
        z = np.zeros(n_dof)
        return cls(z, z.copy(), z.copy(), float(theta), 0.0, 0.0, time)

    @classmethod
    def from_augmented(cls, d, v, acc, time) -> "PlantState":
        return cls(d[:-1].copy(), v[:-1].copy(), acc[:-1].copy(),
                   float(d[-1]), float(v[-1]), float(acc[-1]), float(time))

    def augmented(self):
        """Return ``(d, v, acc)`` with the hub angle appended to the elastic part."""
        return (np.append(self.a, self.theta),
                np.append(self.a_t, self.theta_t),
                np.append(self.a_tt, self.theta_tt))

    def tip_deflection(self) -> float:
        return float(self.a[-2])


def element_matrices(ei: float, rho: float, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Consistent cubic-Hermite stiffness and mass matrices of one beam element.

    Local DOF order is ``(w_left, phi_left, w_right, phi_right)``. ``ei`` or
    ``rho`` may be zero to isolate one of the two matrices.

    Returns
    -------
    k_e, m_e : ndarray, shape (4, 4)
    """
    if h <= 0 or ei < 0 or rho < 0:
        raise ParameterError(f"need h > 0 and ei, rho >= 0; got ei={ei}, rho={rho}, h={h}")
    k_e = ei / h**3 * np.array([
        [12.0, 6 * h, -12.0, 6 * h],
        [6 * h, 4 * h**2, -6 * h, 2 * h**2],
        [-12.0, -6 * h, 12.0, -6 * h],
        [6 * h, 2 * h**2, -6 * h, 4 * h**2],
    ])
    m_e = rho * h / 420.0 * np.array([
        [156.0, 22 * h, 54.0, -13 * h],
        [22 * h, 4 * h**2, 13 * h, -3 * h**2],
        [54.0, 13 * h, 156.0, -22 * h],
        [-13 * h, -3 * h**2, -22 * h, 4 * h**2],
    ])
    return k_e, m_e


def element_coupling(rho: float, h: float, x_left: float) -> np.ndarray:
    """Element contribution to ``m_i = integral of rho * x * phi_i``."""
    base = np.array([h / 2, h**2 / 12, h / 2, -(h**2) / 12])
    first_moment = np.array([3 * h**2 / 20, h**3 / 30, 7 * h**2 / 20, -(h**3) / 20])
    return rho * (x_left * base + first_moment)


@dataclass(frozen=True)
class AssembledSystem:
    """Global matrices of the hub-beam plant; immutable after construction."""

    model: BeamModel
    mass: np.ndarray
    stiffness: np.ndarray
    coupling: np.ndarray
    total_inertia: float
    mass_aug: np.ndarray = field(repr=False)
    stiff_aug: np.ndarray = field(repr=False)

    @property
    def n_aug(self) -> int:
        return self.mass_aug.shape[0]

    def rest_state(self, theta: float = 0.0) -> PlantState:
        return PlantState.rest(self.model.n_dof, theta)


def assemble(model: BeamModel) -> AssembledSystem:
    """Assemble the clamped-free beam and augment it with the hub equation."""
    n = model.n_elements
    h = model.h
    size = 2 * (n + 1)
    k_full = np.zeros((size, size))
    m_full = np.zeros((size, size))
    c_full = np.zeros(size)
    k_e, m_e = element_matrices(model.ei, model.rho, h)
    for e in range(n):
        idx = slice(2 * e, 2 * e + 4)
        k_full[idx, idx] += k_e
        m_full[idx, idx] += m_e
        c_full[idx] += element_coupling(model.rho, h, e * h)

    # drop the clamped node-0 deflection and slope
    k = k_full[2:, 2:]
    m = m_full[2:, 2:]
    c = c_full[2:]
    j_total = model.hub_inertia + model.rho * model.length**3 / 3.0

    n_dof = model.n_dof
    mass_aug = np.zeros((n_dof + 1, n_dof + 1))
    mass_aug[:n_dof, :n_dof] = m
    mass_aug[:n_dof, n_dof] = c
    mass_aug[n_dof, :n_dof] = c
    mass_aug[n_dof, n_dof] = j_total
    stiff_aug = np.zeros_like(mass_aug)
    stiff_aug[:n_dof, :n_dof] = k

    for arr in (k, m, c, mass_aug, stiff_aug):
        arr.setflags(write=False)
    return AssembledSystem(model, m, k, c, j_total, mass_aug, stiff_aug)


def total_energy(system: AssembledSystem, state: PlantState) -> float:
    """Kinetic energy of hub and beam plus elastic strain energy (J)."""
    d, v, _ = state.augmented()
    return float(0.5 * v @ system.mass_aug @ v + 0.5 * d @ system.stiff_aug @ d)


def modal_frequencies(system: AssembledSystem, lock_hub: bool = False) -> np.ndarray:
    """Ascending natural frequencies (rad/s) of the undamped plant.

    With ``lock_hub`` the hub row and column are removed, leaving the
    clamped cantilever.
    """
    if lock_hub:
        k, m = system.stiffness, system.mass
    else:
        k, m = system.stiff_aug, system.mass_aug
    try:
        eig = linalg.eigh(k, m, eigvals_only=True)
    except linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError(f"generalized eigenproblem failed: {exc}") from exc
    eig = np.clip(eig, 0.0, None)
    return np.sort(np.sqrt(eig))


def boundary_curvature(state: PlantState, model: BeamModel) -> tuple[float, float]:
    """Curvature ``y_xx(0, t)`` and its rate at the clamped root.

    Evaluated from the first element's Hermite interpolant; with node 0
    clamped only node 1 contributes.
    """
    h = model.h
    w, phi = state.a[0], state.a[1]
    w_t, phi_t = state.a_t[0], state.a_t[1]
    return (float(6.0 / h**2 * w - 2.0 / h * phi),
            float(6.0 / h**2 * w_t - 2.0 / h * phi_t))


def tip_output(state: PlantState, model: BeamModel) -> float:
    """Tip angle seen from the inertial frame: ``theta + y(L) / L``."""
    return float(state.theta + state.a[-2] / model.length)


def consistent_state(system: AssembledSystem, d, v, torque: float = 0.0,
                     time: float = 0.0) -> PlantState:
    """Build a state whose acceleration satisfies the equations of motion."""
    d = np.asarray(d, dtype=float)
    v = np.asarray(v, dtype=float)
    rhs = -system.stiff_aug @ d
    rhs[-1] += torque
    acc = linalg.cho_solve(linalg.cho_factor(system.mass_aug), rhs)
    return PlantState.from_augmented(d, v, acc, time)


class Integrator:
    """Generalized-alpha stepper bound to one assembled system.

    The effective matrix depends only on the (constant) matrices and time
    step, so it is Cholesky-factorised once here.
    """

    def __init__(self, system: AssembledSystem, cfg: IntegratorConfig | None = None):
        self.system = system
        self.cfg = cfg or IntegratorConfig()
        c = self.cfg
        dt = system.model.dt
        eff = (1.0 - c.alpha_m) * system.mass_aug + (1.0 - c.alpha_f) * c.beta * dt**2 * system.stiff_aug
        try:
            self._factor = linalg.cho_factor(eff)
        except linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(f"effective matrix is not positive definite: {exc}") from exc
        self._force = np.zeros(system.n_aug)

    @cached_property
    def dt(self) -> float:
        return self.system.model.dt

    def step(self, state: PlantState, torque: float) -> PlantState:
        """Advance one time step with ``torque`` held constant over the step."""
        c = self.cfg
        dt = self.dt
        m = self.system.mass_aug
        k = self.system.stiff_aug
        d, v, acc = state.augmented()
        d_pred = d + dt * v + dt**2 * (0.5 - c.beta) * acc
        force = self._force.copy()
        force[-1] = torque
        rhs = force - c.alpha_m * (m @ acc) - k @ ((1.0 - c.alpha_f) * d_pred + c.alpha_f * d)
        acc_new = linalg.cho_solve(self._factor, rhs)
        d_new = d_pred + c.beta * dt**2 * acc_new
        v_new = v + dt * ((1.0 - c.gamma) * acc + c.gamma * acc_new)
        return PlantState.from_augmented(d_new, v_new, acc_new, state.time + dt)


class FeedbackIntegrator(Integrator):
    """Generalized-alpha stepper with a linear hub-torque law solved implicitly.

    The torque ``gain_d . d + gain_v . v + offset`` is evaluated at the
    same generalized midpoint as the inertial and elastic forces, so the
    law acts as a continuous-time controller rather than a sampled one.
    Stiff boundary feedback (root curvature rate) destabilises a
    zero-order-hold loop at this step size; the implicit form does not.
    """

    def __init__(self, system: AssembledSystem, gain_d, gain_v, cfg: IntegratorConfig | None = None):
        self.system = system
        self.cfg = cfg or IntegratorConfig()
        c = self.cfg
        dt = system.model.dt
        self.gain_d = np.asarray(gain_d, dtype=float)
        self.gain_v = np.asarray(gain_v, dtype=float)
        hub = np.zeros(system.n_aug)
        hub[-1] = 1.0
        self._hub = hub
        eff = ((1.0 - c.alpha_m) * system.mass_aug
               + (1.0 - c.alpha_f) * c.beta * dt**2 * system.stiff_aug
               - (1.0 - c.alpha_f) * np.outer(hub, c.beta * dt**2 * self.gain_d + c.gamma * dt * self.gain_v))
        self._lu = linalg.lu_factor(eff)

    def feedback_torque(self, state: PlantState, offset: float = 0.0) -> float:
        d, v, _ = state.augmented()
        return float(self.gain_d @ d + self.gain_v @ v + offset)

    def step_feedback(self, state: PlantState, offset: float = 0.0,
                      extra: float = 0.0) -> tuple[PlantState, float]:
        """Advance one step; ``extra`` is an exogenous torque held over the step.

        Returns the new state and the feedback torque at the end of the step.
        """
        c = self.cfg
        dt = self.dt
        m = self.system.mass_aug
        k = self.system.stiff_aug
        d, v, acc = state.augmented()
        tau_old = self.feedback_torque(state, offset)
        d_pred = d + dt * v + dt**2 * (0.5 - c.beta) * acc
        v_pred = v + dt * (1.0 - c.gamma) * acc
        tau_pred = float(self.gain_d @ d_pred + self.gain_v @ v_pred + offset)
        hub_force = (1.0 - c.alpha_f) * tau_pred + c.alpha_f * tau_old + extra
        rhs = hub_force * self._hub - c.alpha_m * (m @ acc) - k @ ((1.0 - c.alpha_f) * d_pred + c.alpha_f * d)
        acc_new = linalg.lu_solve(self._lu, rhs)
        d_new = d_pred + c.beta * dt**2 * acc_new
        v_new = v_pred + c.gamma * dt * acc_new
        new = PlantState.from_augmented(d_new, v_new, acc_new, state.time + dt)
        return new, self.feedback_torque(new, offset)


def curvature_operator(model: BeamModel) -> np.ndarray:
    """Row vector mapping augmented coordinates to ``y_xx(0)``."""
    op = np.zeros(model.n_dof + 1)
    op[0] = 6.0 / model.h**2
    op[1] = -2.0 / model.h
    return op


def step(system: AssembledSystem, state: PlantState, torque: float,
         cfg: IntegratorConfig | None = None) -> PlantState:
    """Single Generalized-alpha step; builds a fresh factorisation each call.

    Use :class:`Integrator` for runs of many steps.
    """
    return Integrator(system, cfg).step(state, torque)


def nodal_deflections(state: PlantState) -> np.ndarray:
    """Deflections at nodes 1..n (node 0 is clamped at zero)."""
    return state.a[0::2].copy()
