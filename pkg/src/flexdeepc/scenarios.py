"""Experiment harness for PD data collection and closed-loop scenario runs.

Every run is driven by a :class:`ScenarioConfig` (flat ``key = value`` text
on disk) and a :class:`ScenarioSpec` naming the scenario and controller.
Both controllers are scored with :func:`flexdeepc.deepc.stage_cost` on the
same output, the hub angle plus the tip deflection over the beam length.
"""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .beam_fe import (BeamModel, FeedbackIntegrator, Integrator, IntegratorConfig, assemble,
                      curvature_operator, tip_output, total_energy)
from .deepc import DeePC, DeePCConfig, run_closed_loop, stage_cost
from .lyapunov import BoundarySignals, LyapunovParams, control_torque, params_from_gains
from .trajectory import (ShortDataWarning, Trajectory, is_persistently_exciting, min_data_length,
                         split_past_future, svd_reduce)

log = logging.getLogger(__name__)

SCENARIO_KINDS = ("nominal", "uncertainty", "process_noise", "free_vibration", "data_collection")
CONTROLLERS = ("deepc", "lyapunov", "pd", "none")
RESULT_HEADER = ["k", "t", "u", "y", "theta", "tip_deflection", "stage_cost"]
SUMMARY_HEADER = ["scenario", "controller", "cost", "settling_time", "peak_torque"]


class ConfigError(ValueError):
    """Malformed or unknown configuration entry."""


class CollectionError(RuntimeError):
    """Collected input is not persistently exciting."""


@dataclass(frozen=True)
class ScenarioConfig:
    """All tunable quantities of an experiment.

    Defaults are the published plant, DeePC and Lyapunov values. The PD
    collection settings are our own choice; see the README.
    """

    # plant
    ei: float = 120.0
    hub_inertia: float = 400.0
    rho: float = 20.0
    length: float = 5.0
    element_length: float = 0.25
    dt: float = 0.05
    rho_inf: float = 0.9
    # DeePC
    t_ini: int = 20
    horizon: int = 20
    q_weight: float = 1000.0
    r_weight: float = 2.5e-4
    lambda_g: float = 1000.0
    lambda_y: float = 3.0e5
    rank_rule: str = "80"
    # Lyapunov
    a1: float = 0.0428
    a2: float = 3000.0
    k1: float = 0.1
    k2: float = 2.1e-10
    delta: float = 0.0098
    eta: float = 1.0
    # experiment
    theta_d: float = 0.1
    duration: float = 200.0
    band_fraction: float = 0.02
    noise_std: float = 0.5
    seed: int = 0
    rho_factor: float = 2.0
    impulse: float = 5.0
    # PD data collection
    collect_duration: float = 200.0
    kp: float = 13.3
    kd: float = 1190.0
    dither: float = 0.0564
    dither_hold: int = 20
    references: tuple = (0.0, 0.25, 0.5, -0.25)
    reference_period: float = 10.0
    n_est: int = 40

    def __post_init__(self):
        n = self.length / self.element_length
        if not (n >= 2 and abs(n - round(n)) < 1e-9):
            raise ConfigError(f"length / element_length must be an integer >= 2, got {n:g}")
        if self.duration <= 0 or self.collect_duration <= 0:
            raise ConfigError("durations must be positive")
        if self.noise_std < 0:
            raise ConfigError("noise_std must be nonnegative")
        if self.dither_hold < 1:
            raise ConfigError("dither_hold must be >= 1")
        if self.rank_rule != "gap" and not self.rank_rule.isdigit():
            raise ConfigError(f"rank_rule must be 'gap' or a positive integer, got {self.rank_rule!r}")

    @property
    def n_elements(self) -> int:
        return int(round(self.length / self.element_length))

    def beam_model(self, **overrides) -> BeamModel:
        model = BeamModel(ei=self.ei, rho=self.rho, length=self.length, hub_inertia=self.hub_inertia,
                          n_elements=self.n_elements, dt=self.dt)
        return model.with_overrides(**overrides) if overrides else model

    def deepc_config(self) -> DeePCConfig:
        return DeePCConfig(t_ini=self.t_ini, horizon=self.horizon, q_weight=self.q_weight,
                           r_weight=self.r_weight, lambda_g=self.lambda_g, lambda_y=self.lambda_y,
                           reference=self.theta_d)

    def lyapunov_params(self) -> LyapunovParams:
        return params_from_gains(self.a1, self.a2, self.k1, self.k2, self.delta,
                                 self.beam_model(), eta=self.eta)

    def rank(self):
        return "gap" if self.rank_rule == "gap" else int(self.rank_rule)

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse_value(name: str, raw: str, default):
    if isinstance(default, tuple):
        return tuple(float(v) for v in raw.split(",") if v.strip())
    if isinstance(default, bool):
        return raw.lower() in ("1", "true", "yes")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def dump_config(cfg: ScenarioConfig, path) -> None:
    with open(path, "w") as fh:
        for f in fields(cfg):
            fh.write(f"{f.name} = {_format_value(getattr(cfg, f.name))}\n")


def parse_config(text: str, source: str = "<config>") -> ScenarioConfig:
    defaults = ScenarioConfig()
    known = {f.name for f in fields(ScenarioConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line.strip()!r}")
        key, raw = (s.strip() for s in stripped.split("=", 1))
        if key not in known:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        try:
            values[key] = _parse_value(key, raw, getattr(defaults, key))
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {key!r}: {exc}") from exc
    return replace(defaults, **values)


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    return parse_config(path.read_text(), str(path))


class SpacecraftPlant:
    """Hub-beam plant driven by a held torque; ``step`` returns the tip-angle output."""

    def __init__(self, model: BeamModel, rho_inf: float = 0.9):
        self.model = model
        self.system = assemble(model)
        self.integrator = Integrator(self.system, IntegratorConfig(rho_inf))
        self.state = self.system.rest_state()
        self.dt = model.dt
        self.theta_history: list[float] = []
        self.tip_history: list[float] = []

    def output(self) -> float:
        return tip_output(self.state, self.model)

    def step(self, u: float) -> float:
        self.state = self.integrator.step(self.state, float(u))
        self._record()
        return self.output()

    def _record(self):
        self.theta_history.append(self.state.theta)
        self.tip_history.append(self.state.tip_deflection())


@dataclass(frozen=True)
class ScenarioSpec:
    kind: str
    controller: str
    theta_d: float = 0.1
    duration: float = 200.0
    noise_std: float = 0.0
    seed: int = 0
    plant_overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"unknown scenario kind {self.kind!r}; choose from {SCENARIO_KINDS}")
        if self.controller not in CONTROLLERS:
            raise ValueError(f"unknown controller {self.controller!r}; choose from {CONTROLLERS}")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be nonnegative")

    @classmethod
    def from_config(cls, kind: str, controller: str, cfg: ScenarioConfig) -> "ScenarioSpec":
        overrides = {"rho": cfg.rho * cfg.rho_factor} if kind == "uncertainty" else {}
        noise = cfg.noise_std if kind == "process_noise" else 0.0
        duration = cfg.collect_duration if kind == "data_collection" else cfg.duration
        return cls(kind=kind, controller=controller, theta_d=cfg.theta_d, duration=duration,
                   noise_std=noise, seed=cfg.seed, plant_overrides=overrides)


@dataclass
class ScenarioResult:
    spec: ScenarioSpec
    trajectory: Trajectory
    theta: np.ndarray
    tip_deflection_history: np.ndarray
    stage_costs: np.ndarray
    accumulated_cost: float
    settling_time: float
    peak_torque: float
    notes: list[str] = field(default_factory=list)
    error: Exception | None = None

    @property
    def settled(self) -> bool:
        return math.isfinite(self.settling_time)


def settling_time(output, theta_d: float, band_fraction: float = 0.02, dt: float = 1.0,
                  t0: float = 0.0, absolute_band: float | None = None,
                  step_size: float | None = None) -> float:
    """Time after which ``output`` stays inside the band around ``theta_d``.

    The band half-width is ``band_fraction * |step_size|`` (``step_size``
    defaults to ``theta_d``) unless ``absolute_band`` is given. Samples sit
    at ``t0 + k*dt``; the exit from the band is located by linear
    interpolation between the last sample outside and the first inside.
    Returns ``inf`` if the final sample is outside the band.
    """
    if band_fraction <= 0:
        raise ValueError("band_fraction must be positive")
    if absolute_band is not None:
        band = float(absolute_band)
        if band <= 0:
            raise ValueError("absolute_band must be positive")
    else:
        ref = theta_d if step_size is None else step_size
        if ref == 0:
            raise ValueError("a zero reference step needs an absolute band")
        band = band_fraction * abs(ref)
    err = np.abs(np.asarray(output, dtype=float) - theta_d)
    if err.size == 0:
        raise ValueError("empty output history")
    outside = np.nonzero(err > band)[0]
    if outside.size == 0:
        return float(t0)
    i = int(outside[-1])
    if i == err.size - 1:
        return math.inf
    frac = (err[i] - band) / (err[i] - err[i + 1])
    return float(t0 + (i + frac) * dt)


def _pd_torque(state, ref, kp, kd):
    return kp * (ref - state.theta) - kd * state.theta_t


def collect_data(plant: SpacecraftPlant, duration: float, pd_gains: tuple[float, float],
                 dither: float, references: Sequence[float], seed: int, *,
                 reference_period: float = 50.0, dither_hold: int = 1, depth: int = 40,
                 n_est: int = 40, noise_std: float = 0.0) -> Trajectory:
    """Record a PD-controlled run with uniform dither on the torque.

    The reference cycles through ``references`` every ``reference_period``
    seconds; a fresh dither value is drawn every ``dither_hold`` samples.
    ``noise_std`` adds an unrecorded Gaussian torque disturbance, which makes
    the data inconsistent with any low-order linear model.
    Raises :class:`CollectionError` if the input is not persistently
    exciting of order ``n_est + depth``.
    """
    kp, kd = pd_gains
    dt = plant.dt
    T = int(round(duration / dt))
    needed = min_data_length(1, n_est, depth)
    if T < needed:
        log.warning("collection length %d is below the %d samples needed for order %d excitation",
                    T, needed, n_est + depth)
    refs = np.asarray(references, dtype=float)
    if refs.size == 0:
        raise ValueError("need at least one reference")
    rng = np.random.default_rng(seed)
    w = np.random.default_rng([seed, 1]).normal(0.0, noise_std, T) if noise_std > 0 else np.zeros(T)
    u = np.empty(T)
    y = np.empty(T)
    d = 0.0
    for k in range(T):
        ref = refs[int(k * dt // reference_period) % refs.size]
        if k % dither_hold == 0:
            d = rng.uniform(-dither, dither) if dither > 0 else 0.0
        u[k] = _pd_torque(plant.state, ref, kp, kd) + d
        y[k] = plant.step(u[k] + w[k])
    traj = Trajectory(u, y, dt)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ShortDataWarning)
        ok = is_persistently_exciting(u, n_est + depth)
    if not ok:
        raise CollectionError(f"input is not persistently exciting of order {n_est + depth}; "
                              "increase the dither or lengthen the run")
    log.info("collected %d samples, persistently exciting of order %d", T, n_est + depth)
    return traj


def collect_from_config(cfg: ScenarioConfig) -> Trajectory:
    plant = SpacecraftPlant(cfg.beam_model(), cfg.rho_inf)
    return collect_data(plant, cfg.collect_duration, (cfg.kp, cfg.kd), cfg.dither, cfg.references,
                        cfg.seed, reference_period=cfg.reference_period, dither_hold=cfg.dither_hold,
                        depth=cfg.t_ini + cfg.horizon, n_est=cfg.n_est)


def lyapunov_feedback(params: LyapunovParams, model: BeamModel, theta_d: float):
    """Express the boundary law as ``gain_d . d + gain_v . v + offset``.

    The law is linear in the state, so the gains are read off by evaluating
    :func:`control_torque` on unit vectors. ``model`` supplies the EI and J
    the controller believes in.
    """
    n = model.n_dof + 1
    curv = curvature_operator(model)

    def law(d, v):
        sig = BoundarySignals(e=d[-1] - theta_d, theta_t=v[-1], y_xx0=curv @ d, y_xxt0=curv @ v)
        return control_torque(sig, params, model)

    zero = np.zeros(n)
    offset = law(zero, zero)
    eye = np.eye(n)
    gain_d = np.array([law(eye[i], zero) - offset for i in range(n)])
    gain_v = np.array([law(zero, eye[i]) - offset for i in range(n)])
    return gain_d, gain_v, offset


def _noise(spec: ScenarioSpec, n: int) -> np.ndarray:
    if spec.noise_std == 0:
        return np.zeros(n)
    return np.random.default_rng(spec.seed).normal(0.0, spec.noise_std, n)


def _finish(spec, cfg, u, y, theta, tip, notes, error=None) -> ScenarioResult:
    u = np.asarray(u, dtype=float)
    y = np.asarray(y, dtype=float)
    dcfg = replace(cfg.deepc_config(), reference=spec.theta_d)
    costs = np.atleast_1d(stage_cost(y, u, dcfg)) if y.size else np.zeros(0)
    if error is not None or y.size == 0 or not np.all(np.isfinite(y)):
        ts = math.inf
    elif spec.theta_d == 0:
        ts = settling_time(y, 0.0, cfg.band_fraction, cfg.dt, absolute_band=cfg.band_fraction * 0.1)
    else:
        ts = settling_time(y, spec.theta_d, cfg.band_fraction, cfg.dt)
    return ScenarioResult(spec=spec, trajectory=Trajectory(u, y, cfg.dt) if y.size else None,
                          theta=np.asarray(theta, dtype=float), tip_deflection_history=np.asarray(tip, dtype=float),
                          stage_costs=costs, accumulated_cost=float(costs.sum()), settling_time=ts,
                          peak_torque=float(np.max(np.abs(u))) if u.size else 0.0, notes=notes, error=error)


def run_scenario(spec: ScenarioSpec, cfg: ScenarioConfig | None = None,
                 data: Trajectory | None = None) -> ScenarioResult:
    """Run one scenario and compute its metrics.

    ``data`` is the nominal-plant collection used by DeePC. Plant overrides
    apply to the executed plant only; the DeePC data and the Lyapunov gains
    are always built from the nominal configuration.
    """
    cfg = cfg or ScenarioConfig()
    nominal = cfg.beam_model()
    model = nominal.with_overrides(**spec.plant_overrides) if spec.plant_overrides else nominal
    n = int(round(spec.duration / cfg.dt))
    noise = _noise(spec, n)
    notes = [f"executed plant: ei={model.ei!r} rho={model.rho!r} hub_inertia={model.hub_inertia!r}",
             f"controller model: ei={nominal.ei!r} rho={nominal.rho!r} hub_inertia={nominal.hub_inertia!r}",
             f"process noise std={spec.noise_std!r} seed={spec.seed}"]
    log.info("scenario %s/%s: %s", spec.kind, spec.controller, "; ".join(notes))

    if spec.kind == "data_collection":
        plant = SpacecraftPlant(model, cfg.rho_inf)
        traj = collect_data(plant, spec.duration, (cfg.kp, cfg.kd), cfg.dither, cfg.references,
                            spec.seed, reference_period=cfg.reference_period,
                            dither_hold=cfg.dither_hold, depth=cfg.t_ini + cfg.horizon, n_est=cfg.n_est)
        return _finish(spec, cfg, traj.u, traj.y, plant.theta_history, plant.tip_history, notes)

    if spec.controller == "lyapunov":
        return _run_lyapunov(spec, cfg, nominal, model, noise, notes)

    plant = SpacecraftPlant(model, cfg.rho_inf)
    if spec.controller == "deepc":
        if data is None:
            raise ValueError("DeePC scenarios need collected data")
        dcfg = replace(cfg.deepc_config(), reference=spec.theta_d)
        reduced = svd_reduce(split_past_future(data, dcfg.t_ini, dcfg.horizon), cfg.rank())
        notes.append(f"data matrix reduced to {reduced.h_bar.shape[0]}x{reduced.rank}")
        res = run_closed_loop(plant, reduced, dcfg, n, disturbance=noise, controller=DeePC(reduced, dcfg))
        u = res.trajectory.u if res.trajectory is not None else []
        y = res.trajectory.y if res.trajectory is not None else []
        return _finish(spec, cfg, u, y, plant.theta_history, plant.tip_history, notes, res.error)

    u = np.zeros(n)
    y = np.zeros(n)
    energies = []
    for k in range(n):
        if spec.controller == "pd":
            u[k] = _pd_torque(plant.state, spec.theta_d, cfg.kp, cfg.kd)
        elif spec.kind == "free_vibration" and k == 0:
            u[k] = cfg.impulse
        y[k] = plant.step(u[k] + noise[k])
        if spec.kind == "free_vibration":
            energies.append(total_energy(plant.system, plant.state))
    # with rho_inf < 1 the integrator delivers a one-step pulse over a few
    # steps, so the reference energy is taken one second after the impulse
    ref = int(round(1.0 / cfg.dt))
    if spec.kind == "free_vibration" and n > ref + 1:
        e0 = energies[ref]
        notes.append(f"energy drift after impulse: {(energies[-1] - e0) / e0!r}")
    return _finish(spec, cfg, u, y, plant.theta_history, plant.tip_history, notes)


def _run_lyapunov(spec, cfg, nominal, model, noise, notes) -> ScenarioResult:
    params = cfg.lyapunov_params()
    gain_d, gain_v, offset = lyapunov_feedback(params, nominal, spec.theta_d)
    notes.append("lyapunov gains: " + ", ".join(f"{k}={v!r}" for k, v in params.as_dict().items()))
    system = assemble(model)
    integ = FeedbackIntegrator(system, gain_d, gain_v, IntegratorConfig(cfg.rho_inf))
    state = system.rest_state()
    n = noise.size
    u = np.empty(n)
    y = np.empty(n)
    theta = np.empty(n)
    tip = np.empty(n)
    tau = integ.feedback_torque(state, offset)
    error = None
    for k in range(n):
        u[k] = tau
        state, tau = integ.step_feedback(state, offset, extra=noise[k])
        y[k] = tip_output(state, model)
        theta[k] = state.theta
        tip[k] = state.tip_deflection()
        if not math.isfinite(y[k]):
            error = FloatingPointError(f"non-finite output at step {k}")
            u, y, theta, tip = u[:k + 1], y[:k + 1], theta[:k + 1], tip[:k + 1]
            break
    return _finish(spec, cfg, u, y, theta, tip, notes, error)


def export(result: ScenarioResult, path) -> None:
    """Write the per-step result table."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_HEADER)
        traj = result.trajectory
        if traj is None:
            return
        for k in range(len(traj)):
            writer.writerow([k, repr(float(traj.t[k])), repr(float(traj.u[k])), repr(float(traj.y[k])),
                             repr(float(result.theta[k])), repr(float(result.tip_deflection_history[k])),
                             repr(float(result.stage_costs[k]))])


def read_result(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != RESULT_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        rows = list(reader)
    return {name: np.array([float(r[name]) for r in rows]) for name in RESULT_HEADER}


def summary_row(result: ScenarioResult) -> list[str]:
    return [result.spec.kind, result.spec.controller, repr(result.accumulated_cost),
            repr(result.settling_time), repr(result.peak_torque)]


def write_summary(results: Sequence[ScenarioResult], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_HEADER)
        for r in results:
            writer.writerow(summary_row(r))


def read_summary(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != SUMMARY_HEADER:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [{"scenario": r["scenario"], "controller": r["controller"], "cost": float(r["cost"]),
                 "settling_time": float(r["settling_time"]), "peak_torque": float(r["peak_torque"])}
                for r in reader]


def compare(cfg: ScenarioConfig, data: Trajectory | None = None,
            kinds: Sequence[str] = ("nominal", "uncertainty", "process_noise"),
            controllers: Sequence[str] = ("lyapunov", "deepc")) -> list[ScenarioResult]:
    """Run every (scenario, controller) pair, collecting data once if needed."""
    if data is None and "deepc" in controllers:
        data = collect_from_config(cfg)
    return [run_scenario(ScenarioSpec.from_config(kind, ctrl, cfg), cfg, data)
            for kind in kinds for ctrl in controllers]
