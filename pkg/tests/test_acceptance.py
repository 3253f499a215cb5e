"""Acceptance criteria of the toolkit, one printed PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py`` or directly as a script.
"""

import math
import time
import warnings
from dataclasses import replace

import numpy as np
import pytest

from conftest import random_lti, simulate_lti
from flexdeepc.beam_fe import BeamModel, Integrator, IntegratorConfig, assemble, modal_frequencies, total_energy
from flexdeepc.deepc import DeePCConfig, LTIPlant, run_closed_loop
from flexdeepc.lyapunov import BoundarySignals, check_constraints, control_torque, published_params
from flexdeepc.scenarios import ScenarioConfig, collect_from_config, compare, write_summary
from flexdeepc.trajectory import (ShortDataWarning, Trajectory, build_hankel, choose_rank, is_persistently_exciting,
                                  min_data_length, split_past_future, svd_reduce)

# tolerances
MODAL_RTOL = 5e-3
ENERGY_DRIFT = 1e-3
LEMMA_RESIDUAL = 1e-8
MPC_ATOL = 1e-6
REDUCED_ATOL = 1e-6
SETTLING_BAND = 0.02
LYAP_INFLATION = 1.25
DEEPC_SETTLING_CHANGE = 0.10
NOISE_COST_CHANGE = 0.05

ANALYTIC_W1 = 1.8751040687**2 * math.sqrt(120.0 / (20.0 * 5.0**4))


def _emit(capsys, name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}"
    if capsys is None:
        print(line)
    else:
        with capsys.disabled():
            print("\n" + line)
    return ok


def check_modal_anchor(capsys=None):
    t0 = time.perf_counter()
    w20 = modal_frequencies(assemble(BeamModel(n_elements=20)), lock_hub=True)[0]
    elapsed = time.perf_counter() - t0
    w40 = modal_frequencies(assemble(BeamModel(n_elements=40)), lock_hub=True)[0]
    err20, err40 = abs(w20 - ANALYTIC_W1) / ANALYTIC_W1, abs(w40 - ANALYTIC_W1) / ANALYTIC_W1
    ok = err20 < MODAL_RTOL and err40 <= err20 and elapsed < 1.0
    return _emit(capsys, "FE modal anchor", ok,
                 f"w1={w20:.6f} vs {ANALYTIC_W1:.6f} (rel err {err20:.2e}, 40 elements {err40:.2e}), {elapsed:.3f} s")


def check_energy(capsys=None):
    t0 = time.perf_counter()
    system = assemble(BeamModel())
    integ = Integrator(system, IntegratorConfig(1.0))
    state = integ.step(system.rest_state(), 5.0)
    e0 = total_energy(system, state)
    worst = 0.0
    for _ in range(2000):
        state = integ.step(state, 0.0)
        worst = max(worst, abs(total_energy(system, state) - e0) / e0)
    elapsed = time.perf_counter() - t0
    ok = worst < ENERGY_DRIFT and elapsed < 1.0
    return _emit(capsys, "Energy conservation", ok, f"max drift {worst:.2e} over 2000 steps, {elapsed:.3f} s")


def check_fundamental_lemma(capsys=None):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    n, depth = 3, 10
    worst = 0.0
    bound_ok = True
    for _ in range(20):
        a, b, c = random_lti(rng, n)
        T = 150
        u = rng.normal(size=T)
        pe = is_persistently_exciting(u, n + depth)
        h = np.vstack([build_hankel(u, depth), build_hankel(simulate_lti(a, b, c, u), depth)])
        for _ in range(5):
            uf = rng.normal(size=depth)
            w = np.concatenate([uf, simulate_lti(a, b, c, uf, rng.normal(size=n)).ravel()])
            g = np.linalg.lstsq(h, w, rcond=None)[0]
            worst = max(worst, float(np.linalg.norm(h @ g - w)))
        short = rng.normal(size=min_data_length(1, n, depth) - 1)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ShortDataWarning)
            bound_ok &= pe and not is_persistently_exciting(short, n + depth)
    elapsed = time.perf_counter() - t0
    ok = worst < LEMMA_RESIDUAL and bound_ok and elapsed < 5.0
    return _emit(capsys, "Fundamental-lemma suite", ok,
                 f"20 systems, max residual {worst:.2e}, length bound respected={bound_ok}, {elapsed:.3f} s")


def _mpc_first_input(a, b, c, x, horizon, q, r, ref):
    phi = np.vstack([c @ np.linalg.matrix_power(a, i) for i in range(horizon)])
    gamma = np.zeros((horizon, horizon))
    for i in range(horizon):
        for j in range(i):
            gamma[i, j] = (c @ np.linalg.matrix_power(a, i - 1 - j) @ b).item()
    return np.linalg.solve(q * gamma.T @ gamma + r * np.eye(horizon), -q * gamma.T @ (phi @ x - ref))[0]


def check_mpc_oracle(capsys=None):
    t0 = time.perf_counter()
    a = np.array([[1.0, 0.1], [0.0, 1.0]])
    b = np.array([[0.005], [0.1]])
    c = np.array([[1.0, 0.0]])
    rng = np.random.default_rng(7)
    t_ini, horizon, q, r, ref = 4, 15, 100.0, 0.1, 1.0
    u = rng.normal(size=150)
    data = split_past_future(Trajectory(u, simulate_lti(a, b, c, u).ravel(), 0.1), t_ini, horizon)
    cfg = DeePCConfig(t_ini=t_ini, horizon=horizon, q_weight=q, r_weight=r, lambda_g=0.0,
                      lambda_y=math.inf, reference=ref)
    res = run_closed_loop(LTIPlant(a, b, c, dt=0.1), data, cfg, 50)
    x = np.zeros(2)
    u_mpc = []
    for k in range(50):
        uk = 0.0 if k < t_ini else _mpc_first_input(a, b, c, x, horizon, q, r, ref)
        u_mpc.append(uk)
        x = a @ x + b.ravel() * uk
    elapsed = time.perf_counter() - t0
    err = float(np.max(np.abs(res.trajectory.u - np.array(u_mpc)))) if res.error is None else math.inf
    ok = err < MPC_ATOL and elapsed < 5.0
    return _emit(capsys, "DeePC = MPC oracle", ok, f"max input difference {err:.2e} over 50 steps, {elapsed:.3f} s")


def check_svd_fidelity(capsys=None):
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    a, b, c = random_lti(rng, 4)
    u = rng.normal(size=400)
    full = split_past_future(Trajectory(u, simulate_lti(a, b, c, u).ravel(), 1.0), 8, 12)
    red = svd_reduce(full)
    cfg = DeePCConfig(t_ini=8, horizon=12, q_weight=100.0, r_weight=0.1, lambda_g=1.0, lambda_y=1e4, reference=1.0)
    u_full = run_closed_loop(LTIPlant(a, b, c), full, cfg, 60).trajectory.u
    u_red = run_closed_loop(LTIPlant(a, b, c), red, cfg, 60).trajectory.u
    err = float(np.max(np.abs(u_full - u_red)))
    sc = split_past_future(collect_from_config(ScenarioConfig()), 20, 20)
    # a turning-point threshold above every observed gap forces the fallback
    fallback = svd_reduce(sc, lambda s: choose_rank(s, min_ratio=np.inf))
    elapsed = time.perf_counter() - t0
    ok = err < REDUCED_ATOL and fallback.h_bar.shape == (80, 80) and elapsed < 10.0
    return _emit(capsys, "SVD-reduction fidelity", ok,
                 f"LTI rank {red.rank}, max input difference {err:.2e}; spacecraft fallback size "
                 f"{fallback.h_bar.shape[0]}x{fallback.h_bar.shape[1]}, {elapsed:.3f} s")


def _rel_change(a, b):
    if math.isinf(a) or math.isinf(b):
        return math.inf if a != b or math.isinf(a) else 0.0
    return abs(b - a) / a


def check_closed_loop(capsys=None):
    t0 = time.perf_counter()
    results = compare(ScenarioConfig())
    elapsed = time.perf_counter() - t0
    r = {(x.spec.kind, x.spec.controller): x for x in results}
    ts = {k: v.settling_time for k, v in r.items()}
    cost = {k: v.accumulated_cost for k, v in r.items()}
    a_ok = all(math.isfinite(ts[("nominal", k)]) for k in ("lyapunov", "deepc"))
    b_ok = all(cost[(s, "deepc")] < cost[(s, "lyapunov")] for s in ("nominal", "uncertainty"))
    ly_ts_nom, ly_ts_unc = ts[("nominal", "lyapunov")], ts[("uncertainty", "lyapunov")]
    inflation = ly_ts_unc / ly_ts_nom if math.isfinite(ly_ts_nom) and math.isfinite(ly_ts_unc) else math.nan
    dp_change = _rel_change(ts[("nominal", "deepc")], ts[("uncertainty", "deepc")])
    c_ok = inflation >= LYAP_INFLATION and dp_change <= DEEPC_SETTLING_CHANGE
    noise = {k: abs(cost[("process_noise", k)] - cost[("nominal", k)]) / cost[("nominal", k)]
             for k in ("lyapunov", "deepc")}
    d_ok = all(v <= NOISE_COST_CHANGE for v in noise.values())
    ok = a_ok and b_ok and c_ok and d_ok and elapsed < 180.0
    def fmt(t):
        return f"{t:.1f} s" if math.isfinite(t) else "not settled"

    detail = (f"(a) lyapunov {fmt(ts[('nominal', 'lyapunov')])}, deepc {fmt(ts[('nominal', 'deepc')])} "
              f"-> {'ok' if a_ok else 'no'}; "
              f"(b) cost nominal {cost[('nominal', 'deepc')]:.0f}<{cost[('nominal', 'lyapunov')]:.0f}, "
              f"uncertainty {cost[('uncertainty', 'deepc')]:.0f}<{cost[('uncertainty', 'lyapunov')]:.0f} "
              f"-> {'ok' if b_ok else 'no'}; "
              f"(c) lyapunov inflation {inflation:.2f}, deepc change {dp_change:.2f} -> {'ok' if c_ok else 'no'}; "
              f"(d) noise cost change lyapunov {noise['lyapunov']:.3f} deepc {noise['deepc']:.3f} "
              f"-> {'ok' if d_ok else 'no'}; {elapsed:.1f} s")
    return _emit(capsys, "Closed-loop trends", ok, detail)


def check_lyapunov(capsys=None):
    t0 = time.perf_counter()
    model = BeamModel()
    p = published_params(model)
    report = check_constraints(p, model)
    strict_ok = all(v > 0 for k, v in report.margins.items() if report.strict[k])
    rest = control_torque(BoundarySignals(0.0, 0.0, 0.0, 0.0), p, model)
    elapsed = time.perf_counter() - t0
    ok = report.ok and strict_ok and len(report.margins) == 8 and rest == 0.0 and elapsed < 1.0
    worst = min(report.margins, key=report.margins.get)
    return _emit(capsys, "Lyapunov feasibility", ok,
                 f"a1={p.a1:.4g} a2={p.a2:g} a3={p.a3:.3g} a4={p.a4:.3g} k2={p.k2:.3g}; all eight pass={report.ok}, "
                 f"smallest margin {worst}={report.margins[worst]:.3g}; rest torque {rest}; {elapsed:.3f} s")


def check_determinism(tmp_dir, capsys=None):
    cfg = replace(ScenarioConfig(), seed=5)
    texts = []
    for i in range(2):
        path = tmp_dir / f"summary_{i}.csv"
        write_summary(compare(cfg, kinds=("process_noise",)), path)
        texts.append(path.read_bytes())
    ok = texts[0] == texts[1]
    return _emit(capsys, "Determinism", ok, f"summary CSV identical across reruns={ok} ({len(texts[0])} bytes)")


class TestAcceptance:
    def test_fe_modal_anchor(self, capsys):
        assert check_modal_anchor(capsys)

    def test_energy_conservation(self, capsys):
        assert check_energy(capsys)

    def test_fundamental_lemma_suite(self, capsys):
        assert check_fundamental_lemma(capsys)

    def test_deepc_equals_mpc(self, capsys):
        assert check_mpc_oracle(capsys)

    def test_svd_reduction_fidelity(self, capsys):
        assert check_svd_fidelity(capsys)

    def test_closed_loop_trends(self, capsys):
        assert check_closed_loop(capsys)

    def test_lyapunov_feasibility(self, capsys):
        assert check_lyapunov(capsys)

    def test_determinism(self, tmp_path, capsys):
        assert check_determinism(tmp_path, capsys)


if __name__ == "__main__":
    import tempfile
    from pathlib import Path

    with tempfile.TemporaryDirectory() as d:
        results = [check_modal_anchor(), check_energy(), check_fundamental_lemma(), check_mpc_oracle(),
                   check_svd_fidelity(), check_closed_loop(), check_lyapunov(), check_determinism(Path(d))]
    print(f"{sum(results)}/{len(results)} criteria met")
