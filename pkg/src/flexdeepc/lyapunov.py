"""Lyapunov-based boundary control law for the hub-beam plant.

The law feeds back the hub tracking error and rate together with the root
curvature of the beam and its rate. Gains must satisfy a system of eight
inequalities; :func:`check_constraints` evaluates them numerically and
:func:`construct_params` implements the closed-form recipe that produces a
certified set from ``(a2, epsilon1, epsilon2, delta)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

from .beam_fe import BeamModel


class ConstructionError(ValueError):
    """Raised when constructor inputs are out of range or produce an infeasible set."""

    def __init__(self, message, margins=None):
        super().__init__(message)
        self.margins = margins


@dataclass(frozen=True)
class LyapunovParams:
    a1: float
    a2: float
    a3: float
    a4: float
    k1: float
    k2: float
    delta: float
    eta: float

    def as_dict(self) -> dict[str, float]:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class BoundarySignals:
    """Measurements consumed by the control law."""

    e: float
    theta_t: float
    y_xx0: float
    y_xxt0: float


def control_torque(signals: BoundarySignals, params: LyapunovParams, model: BeamModel) -> float:
    """Hub torque commanded by the boundary control law (N m)."""
    p = params
    s = signals
    ei = model.ei
    j = model.hub_inertia
    big_delta = j * s.theta_t + p.a2 * (-s.y_xx0 + p.a1 * s.e)
    return ((-ei * s.y_xx0 + p.a2 * s.y_xxt0 - p.a1 * p.a2 * s.theta_t)
            - ei / p.a2 * s.theta_t
            - p.k1 * big_delta
            + p.k2 * (j * s.theta_t + p.a2 * s.y_xx0 - p.a1 * p.a2 * s.e))


@dataclass(frozen=True)
class ConstraintReport:
    """Margins of every inequality; ``strict`` marks ``> 0`` versus ``>= 0``."""

    margins: dict[str, float]
    strict: dict[str, bool]

    @property
    def passed(self) -> dict[str, bool]:
        return {k: (v > 0 if self.strict[k] else v >= 0) for k, v in self.margins.items()}

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    def failures(self) -> list[str]:
        return [k for k, v in self.passed.items() if not v]


def _sum_with_rounding(*terms: float) -> float:
    # the constructor makes this condition an equality; do not let rounding flip its sign
    total = math.fsum(terms)
    return 0.0 if abs(total) <= 1e-12 * sum(abs(t) for t in terms) else total


def check_constraints(params: LyapunovParams, model: BeamModel) -> ConstraintReport:
    """Evaluate the eight feasibility conditions on the controller gains.

    Positivity is reported as the smallest of the eight parameters.
    """
    a1, a2, a3, a4 = params.a1, params.a2, params.a3, params.a4
    k2, delta, eta = params.k2, params.delta, params.eta
    ei, rho, L, j = model.ei, model.rho, model.length, model.hub_inertia
    pi2, pi4 = math.pi**2, math.pi**4

    margins = {"positivity": min(params.as_dict().values())}
    # the remaining expressions divide by some of the gains
    if margins["positivity"] > 0:
        margins.update({
            "kinetic_weight": 1 - L * a3 - a4,
            "bending_weight": ei / 2 - 2 * rho * L**3 * a3 / pi2 - 8 * rho * L**4 * a4 / pi4,
            "error_weight": ei * a1 / 2 - 2 * rho * L**3 * a4 / pi2,
            "hub_rate_decay": j * ei / a2 - k2 * j**2 - rho * L**2 * a3 / (2 * delta)
            - 2 * rho * L**3 * a4 / 3,
            "beam_rate_decay": (1 - L * delta) * a3 - 4 * a4,
            "root_curvature_decay": _sum_with_rounding(
                k2 * a2**2, -eta * k2 * a1 * a2**2, ei * eta * a4 / 2, -L * ei * a3 / 2),
            "error_decay": k2 * a1**2 * a2**2 - k2 * a1 * a2**2 / eta + ei * a4 / (2 * eta),
        })
    else:
        for name in ("kinetic_weight", "bending_weight", "error_weight", "hub_rate_decay",
                     "beam_rate_decay", "root_curvature_decay", "error_decay"):
            margins[name] = float("nan")
    strict = {k: True for k in margins}
    strict["root_curvature_decay"] = False
    return ConstraintReport(margins, strict)


def k2_upper_bound(a1: float, a2: float, delta: float, model: BeamModel) -> float:
    """Largest admissible ``k2`` (before the ``epsilon2`` factor) in the recipe."""
    ei, rho, L, j = model.ei, model.rho, model.length, model.hub_inertia
    pi2, pi4 = math.pi**2, math.pi**4
    return min(
        ei / (2 * a2**2 * (a1 + 1)),
        pi4 * ei**2 / (8 * rho * L**2 * a2**2 * (4 * L**2 * a1 + pi2)),
        pi2 * ei**2 / (8 * rho * L**3 * a2**2),
        3 * j * ei**2 * delta
        / (a2 * (4 * rho * L**3 * delta * a1 * a2**2 + 3 * ei * j**2 * delta + 3 * rho * L * a2**2)),
    )


def construct_params(a2: float, epsilon1: float, epsilon2: float, delta: float,
                     model: BeamModel, k1: float = 0.1, eta: float = 1.0) -> LyapunovParams:
    """Build a certified gain set.

    ``a4`` is tied to ``k2`` so that the cross term in the decay estimate
    vanishes; this makes the last two conditions hold for every ``eta > 0``.
    ``a3`` is chosen to make the root-curvature condition an equality.
    """
    L = model.length
    if not 0 < delta < 1 / L:
        raise ConstructionError(f"delta must lie in (0, 1/L) = (0, {1 / L:g}), got {delta!r}")
    for name, eps in (("epsilon1", epsilon1), ("epsilon2", epsilon2)):
        if not 0 < eps < 1:
            raise ConstructionError(f"{name} must lie in (0, 1), got {eps!r}")
    if a2 <= 0 or k1 <= 0 or eta <= 0:
        raise ConstructionError("a2, k1 and eta must be positive")

    a1 = (1 - L * delta) / (4 * L) * epsilon1
    k2 = epsilon2 * k2_upper_bound(a1, a2, delta, model)
    a3 = 2 * k2 * a2**2 / (L * model.ei)
    a4 = 2 * k2 * a1 * a2**2 / model.ei
    params = LyapunovParams(a1=a1, a2=a2, a3=a3, a4=a4, k1=k1, k2=k2, delta=delta, eta=eta)
    report = check_constraints(params, model)
    if not report.ok:
        raise ConstructionError(f"constructed gains violate {report.failures()}", report.margins)
    return params


def params_from_gains(a1: float, a2: float, k1: float, k2: float, delta: float,
                      model: BeamModel, eta: float = 1.0) -> LyapunovParams:
    """Recover ``(epsilon1, epsilon2)`` for published gains and run the constructor.

    The returned ``a1`` and ``k2`` reproduce the requested values to rounding.
    """
    L = model.length
    if not 0 < delta < 1 / L:
        raise ConstructionError(f"delta must lie in (0, 1/L), got {delta!r}")
    epsilon1 = a1 * 4 * L / (1 - L * delta)
    epsilon2 = k2 / k2_upper_bound(a1, a2, delta, model)
    return construct_params(a2, epsilon1, epsilon2, delta, model, k1=k1, eta=eta)


# published gains; delta chosen so that epsilon1 stays below one
PUBLISHED_GAINS = {"a1": 0.0428, "a2": 3000.0, "k1": 0.1, "k2": 2.1e-10}
DEFAULT_DELTA = 0.0098


def published_params(model: BeamModel | None = None) -> LyapunovParams:
    return params_from_gains(delta=DEFAULT_DELTA, model=model or BeamModel(), **PUBLISHED_GAINS)
