"""Acceptance gate: one test per criterion, run at the stated sizes and tolerances.

Each test attaches ``criterion`` and ``detail`` properties; ``conftest.py``
prints one PASS/FAIL line per criterion at the end of the session.
"""

from __future__ import annotations

import time

import numpy as np
import pytest

from aflsim.metrics import cumulative_wall_clock, energy_proxy
from aflsim.orchestrator import (
    ExperimentConfig,
    build_dataset,
    regression_table_config,
    run_afl,
    run_sync_fl,
    svm_table_config,
)
from aflsim.theory import (
    check_drift_bound,
    check_recursion,
    check_residual_floor,
    check_theorem,
    residual_floor,
    ridge_experiment,
    sampling_variance_formula,
    population_variance,
    sequential_bound,
    sequential_closed_form,
    theorem_bound_curve,
    theorem_experiment,
    verify_martingale_identity,
    verify_sampling_variance,
    verify_sequential_participation_bound,
)

from oracles import cumulative_metrics, gradient_descent

SEEDS = range(5)


def report(record_property, number, detail):
    record_property("criterion", str(number))
    record_property("detail", detail)


@pytest.fixture(scope="module")
def regression_runs():
    runs = {}
    for seed in SEEDS:
        t0 = time.perf_counter()
        afl = run_afl(regression_table_config(seed=seed))
        elapsed = time.perf_counter() - t0
        runs[seed] = (afl, elapsed)
    return runs


@pytest.fixture(scope="module")
def ridge():
    return ridge_experiment(seeds=tuple(range(20)), rounds=100)


def test_criterion_01_sampling_variance(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    populations = [rng.permutation(np.arange(1.0, 6.0))] + [rng.normal(size=5) for _ in range(20)]
    populations += [rng.normal(size=(5, 2)) for _ in range(20)]
    for pop in populations:
        assert len(np.unique(np.atleast_2d(pop.T).T, axis=0)) == 5
        for s in range(1, 6):
            rep = verify_sampling_variance(pop, s, "without")
            analytic = sampling_variance_formula(population_variance(pop), 5, s, "without")
            worst = max(worst, abs(rep.empirical - analytic))
    big = rng.normal(size=100)
    mc = verify_sampling_variance(big, 30, "without", trials=100_000, rng=rng)
    rel = abs(mc.empirical - mc.analytic) / mc.analytic
    elapsed = time.perf_counter() - t0
    report(record_property, 1, f"max exact gap {worst:.2e}, MC relative error {rel:.4f}, {elapsed:.1f}s")
    assert worst <= 1e-12
    assert rel <= 0.02
    assert elapsed < 10


def test_criterion_02_sequential_participation(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst_gap, worst_ratio, cases = 0.0, 0.0, 0
    for C in range(2, 7):
        for J in range(1, C + 1):
            for I in range(1, 5):
                for _ in range(50):
                    pop = rng.normal(size=(C, 2))
                    rep = verify_sequential_participation_bound(C, J, I, pop, tolerance=1e-10)
                    nu2 = population_variance(pop)
                    worst_gap = max(worst_gap, abs(rep.empirical - sequential_closed_form(J, I, C, nu2)))
                    worst_ratio = max(worst_ratio, rep.empirical / sequential_bound(J, I, nu2))
                    cases += 1
    elapsed = time.perf_counter() - t0
    report(record_property, 2,
           f"{cases} cases, max |enum - closed| {worst_gap:.2e}, max LHS/bound {worst_ratio:.3f}, {elapsed:.1f}s")
    assert worst_gap <= 1e-10
    assert worst_ratio <= 1.0
    assert elapsed < 120


def test_criterion_03_martingale(record_property):
    t0 = time.perf_counter()
    rep = verify_martingale_identity(10, 1.0, 1_000_000, rng=np.random.default_rng(3))
    elapsed = time.perf_counter() - t0
    rel = abs(rep.empirical - rep.analytic) / rep.analytic
    report(record_property, 3, f"LHS {rep.empirical:.4f}, RHS {rep.analytic:.4f}, gap {rel:.4%}, {elapsed:.1f}s")
    assert rel <= 0.01
    assert rep.empirical <= 10.0
    assert elapsed < 30


def test_criterion_04a_afl_equals_sync(record_property):
    cfg = regression_table_config(tau_max=0, fraction=1.0, rounds=50)
    afl, sync = run_afl(cfg), run_sync_fl(cfg)
    same = afl.identical_to(sync)
    report(record_property, "4a", f"50-round traces bit-identical: {same}")
    assert same


def test_criterion_04b_single_client_is_gradient_descent(record_property):
    cfg = ExperimentConfig(C=1, fraction=1.0, I=1, batch=2000, tau_max=0, rounds=100)
    trace = run_afl(cfg)
    data = build_dataset(cfg)
    lrs = [cfg.gamma0 / np.sqrt(t + 1) for t in range(100)]
    oracle = gradient_descent(data.features, data.targets, 100, lrs)
    gap = float(np.max(np.abs(trace.globals - oracle)))
    report(record_property, "4b", f"max |AFL - GD| over 100 steps {gap:.2e}")
    assert gap <= 1e-12


def test_criterion_05_regression_reproduction(record_property, regression_runs):
    finals, ratios, times = [], [], []
    for seed, (trace, elapsed) in regression_runs.items():
        losses = trace.server_losses
        finals.append(losses[-1])
        ratios.append(losses[0] / losses[-1])
        times.append(elapsed)
    mean_final = float(np.mean(finals))
    report(record_property, 5,
           f"mean final loss {mean_final:.4f}, min round-1/final ratio {min(ratios):.0f}x, "
           f"slowest run {max(times):.1f}s")
    assert max(times) < 300
    assert min(ratios) >= 10
    assert mean_final <= 0.1


def test_criterion_06_svm_reproduction(record_property):
    t0 = time.perf_counter()
    trace = run_afl(svm_table_config())
    elapsed = time.perf_counter() - t0
    losses = trace.server_losses
    ratio = losses[299] / losses[0]
    ma = np.convolve(losses, np.ones(50) / 50, mode="valid")
    ma900, ma1000 = ma[900 - 50], ma[1000 - 50]
    change = abs(ma1000 - ma900) / ma1000
    report(record_property, 6,
           f"loss(300)/loss(1) = {ratio:.3f} (need <= 0.30), MA50 change 900->1000 {change:.2%}, {elapsed:.0f}s")
    assert elapsed < 600
    assert change <= 0.05
    assert ratio <= 0.30


def test_criterion_07_fraction_ordering(record_property, regression_runs):
    finals = {}
    for fraction in (0.2, 0.9):
        finals[fraction] = float(np.mean(
            [run_afl(regression_table_config(seed=s, fraction=fraction)).server_losses[-1] for s in SEEDS]
        ))
    report(record_property, 7, f"mean final loss: fraction 0.9 -> {finals[0.9]:.4f}, 0.2 -> {finals[0.2]:.4f}")
    assert finals[0.9] <= finals[0.2]


def test_criterion_08_sync_vs_async(record_property, regression_runs):
    afl50, sync50, afl_end, sync_end = [], [], [], []
    for seed, (afl, _) in regression_runs.items():
        sync = run_sync_fl(regression_table_config(seed=seed))
        afl50.append(afl.server_losses[49])
        sync50.append(sync.server_losses[49])
        afl_end.append(afl.server_losses[-1])
        sync_end.append(sync.server_losses[-1])
    a50, s50 = np.mean(afl50), np.mean(sync50)
    a_end, s_end = np.mean(afl_end), np.mean(sync_end)
    rel = abs(a_end - s_end) / min(a_end, s_end)
    report(record_property, 8,
           f"round 50: sync {s50:.4f} vs AFL {a50:.4f}; round 400: AFL {a_end:.4f} vs sync {s_end:.4f} ({rel:.1%})")
    assert s50 <= a50
    assert rel <= 0.5


def test_criterion_09_drift_bound(record_property, ridge):
    cfg = ridge.config
    rep = check_drift_bound(ridge.traces, ridge.constants, ridge.lam, cfg.J, cfg.I, ridge.objective)
    report(record_property, 9,
           f"bound held in {rep.details['rounds_held']}/{rep.details['rounds']} rounds, worst ratio {rep.empirical:.4f}")
    assert rep.details["rounds_held"] == rep.details["rounds"] == 100
    assert rep.passed


def test_criterion_10_recursion(record_property, ridge):
    cfg = ridge.config
    rep = check_recursion(ridge.traces, ridge.constants, ridge.lam, cfg.J, cfg.I, cfg.C, ridge.objective)
    report(record_property, 10, f"recursion held (3 SE) in {rep.empirical:.0%} of rounds over {rep.trials} seeds")
    assert rep.trials == 20
    assert rep.empirical >= 0.95


def test_criterion_11_theorem(record_property, ridge):
    ex = theorem_experiment(rounds=300)
    cfg = ex.config
    assert ex.lam_tilde <= 1 / (6 * ex.constants.L)
    dom = check_theorem(ex.traces, ex.constants, ex.objective, ex.lam_tilde, cfg.C, cfg.J, cfg.I)
    floor_reports = [check_residual_floor(ex.constants, ex.lam_tilde, cfg.C, cfg.J, cfg.I, ex.traces[0].globals[0])]
    k = ridge.constants
    lam_tilde = 1 / (6 * k.L)
    floor_reports.append(check_residual_floor(k, lam_tilde, 4, 4, 3, ridge.traces[0].globals[0]))
    direct = theorem_bound_curve(k, lam_tilde, 4, 4, 3, np.array([1e12]), ridge.traces[0].globals[0])[0]
    floor_gap = max(abs(r.empirical - r.analytic) for r in floor_reports)
    floor_gap = max(floor_gap, abs(direct - residual_floor(k, lam_tilde, 4, 3)))
    report(record_property, 11,
           f"max suboptimality/bound {dom.empirical:.3f} over {len(dom.details['bound'])} round counts, "
           f"floor gap {floor_gap:.1e}")
    assert dom.passed and dom.empirical <= 1.0
    assert floor_gap <= 1e-12


def test_criterion_12_metric_formulas(record_property):
    rng = np.random.default_rng(12)
    worst = 0.0
    for k in range(10):
        C = int(rng.integers(2, 9))
        cfg = ExperimentConfig(
            C=C, rounds=int(rng.integers(5, 30)), I=1, n=60 * C, d=2, min_per_client=5,
            fraction=float(rng.uniform(0.3, 1.0)), base_mean=float(rng.uniform(0.1, 3.0)),
            jitter=float(rng.uniform(0.0, 0.5)), tau_max=int(rng.integers(0, 4)), seed=100 + k,
        )
        trace = run_afl(cfg)
        powers = {c: float(rng.uniform(10, 300)) for c in range(C)}
        wall, energy = cumulative_metrics(trace.records, powers)
        worst = max(worst, float(np.max(np.abs(cumulative_wall_clock(trace) - wall))))
        worst = max(worst, float(np.max(np.abs(energy_proxy(trace, powers) - energy))))
    report(record_property, 12, f"max deviation from brute-force recomputation {worst:.1e} over 10 traces")
    assert worst <= 1e-9
