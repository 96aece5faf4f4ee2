"""End-to-end acceptance gates for the toolkit.

Each test evaluates one shipping criterion at its stated tolerance, prints a
single `[acceptance] criterion NN (<name>): PASS|FAIL` line, and then
asserts. Runtime budgets are part of the criteria and asserted where stated.

Criterion 05 note: its second clause pins the fastest-queue throughput to a
fixed single-carrier reference within 10% up to load 0.8. The exact model
(confirmed by an independent Monte Carlo) pools both carriers as load grows
and exceeds that reference by ~12-26% for loads 0.6-0.8, so the clause fails
by construction; it is asserted faithfully and left red rather than loosened.
"""

import time

from caflow.capacity import PRESET_PHI_GRID, solve_preset
from caflow.cli import run_validate
from caflow.ctmc import solve_model
from caflow.model import (
    CellConfig,
    Policy,
    TrafficMix,
    fluid_total_drift,
    harmonic_capacity,
    mixed_mean_throughput,
)
from caflow.sim import Stop, Warmup, simulate


def _finish(num, name, failures):
    status = "PASS" if not failures else "FAIL"
    print(f"[acceptance] criterion {num:02d} ({name}): {status}")
    assert not failures, f"criterion {num:02d} ({name}):\n" + "\n".join(failures)


def _gamma_bar(report, phi, j):
    if phi == 1.0:
        return report.gamma_sc(j)
    if phi == 0.0:
        return report.gamma_dc(j)
    return mixed_mean_throughput(report.gamma_sc(j), report.gamma_dc(j), phi)


def test_c01_dc_only_exactness():
    failures = []
    started = time.monotonic()
    cfg = CellConfig.single_area(1, 1)
    for rho in [round(0.1 * k, 1) for k in range(1, 10)]:
        traffic = TrafficMix(2.0 * rho, 0.0, 1.0)
        report, _ = solve_model(cfg, traffic, target_blocking=5e-9)
        expected = 2.0 * (1.0 - rho)
        err = abs(report.gamma_dc(0) - expected) / expected
        if err >= 0.01:
            failures.append(f"rho={rho}: relative error {err:.3%} >= 1%")
        if report.diagnostics.blocking_dc >= 1e-8:
            failures.append(f"rho={rho}: blocking {report.diagnostics.blocking_dc:.2e} >= 1e-8")
    elapsed = time.monotonic() - started
    if elapsed >= 10.0:
        failures.append(f"runtime {elapsed:.1f}s >= 10s")
    _finish(1, "dc-only exactness", failures)


def test_c02_multi_area_dc_only():
    from caflow.capacity import scenario_presets

    failures = []
    started = time.monotonic()
    for name in ("dc-hsdpa", "db-hsdpa", "lte"):
        cfg, _ = scenario_presets(name)
        c_bar = harmonic_capacity(cfg)
        for rho in (0.2, 0.5, 0.8):
            traffic = TrafficMix(rho * c_bar, 0.0, 1.0)
            report, _ = solve_model(cfg, traffic)
            for j, area in enumerate(cfg.areas):
                expected = area.c_total * (1.0 - rho)
                err = abs(report.gamma_dc(j) - expected) / expected
                if err >= 0.02:
                    failures.append(
                        f"{name} rho={rho} area={j + 1}: error {err:.3%} >= 2%"
                    )
    elapsed = time.monotonic() - started
    if elapsed >= 300.0:
        failures.append(f"runtime {elapsed:.1f}s >= 300s")
    _finish(2, "multi-area dc-only balancing", failures)


def test_c03_equal_capacity_sc_curve():
    failures = []
    cfg = CellConfig.single_area(1, 1)
    grid = [0.02] + [round(0.1 * k, 1) for k in range(1, 10)]
    gammas = []
    for rho in grid:
        traffic = TrafficMix(2.0 * rho, 1.0, 1.0)
        report, _ = solve_model(cfg, traffic)
        gammas.append(report.gamma_sc(0))
    if abs(gammas[0] - 1.0) >= 0.02:
        failures.append(f"gamma at rho=0.02 is {gammas[0]:.4f}, off 1.0 by >= 2%")
    for (r_a, g_a), (r_b, g_b) in zip(zip(grid, gammas), zip(grid[1:], gammas[1:])):
        if not g_b < g_a:
            failures.append(f"gamma not strictly decreasing between rho={r_a} and {r_b}")
    for rho, gamma in zip(grid, gammas):
        if gamma < (1.0 - rho) - 1e-9:
            failures.append(f"rho={rho}: gamma {gamma:.4f} below the single-PS reference")
    ratios = [g / (2.0 * (1.0 - r)) for r, g in zip(grid, gammas)]
    for (r_a, q_a), (r_b, q_b) in zip(zip(grid, ratios), zip(grid[1:], ratios[1:])):
        if not q_b > q_a:
            failures.append(f"pooled-capacity ratio not increasing between rho={r_a} and {r_b}")
    if not 0.75 <= ratios[-1] <= 1.0:
        failures.append(f"ratio at rho=0.9 is {ratios[-1]:.4f}, outside [0.75, 1.0]")
    _finish(3, "equal-capacity SC curve properties", failures)


def test_c04_traffic_mix_insensitivity():
    failures = []
    for c2 in (1, "1.3"):
        cfg = CellConfig.single_area(1, c2)
        total = cfg.areas[0].c_total
        values = {}
        for phi in (0.0, 0.5, 1.0):
            report, _ = solve_model(cfg, TrafficMix(0.5 * total, phi, 1.0))
            values[phi] = report
        sc_change = abs(values[1.0].gamma_sc(0) - values[0.5].gamma_sc(0)) / values[1.0].gamma_sc(0)
        dc_change = abs(values[0.0].gamma_dc(0) - values[0.5].gamma_dc(0)) / values[0.0].gamma_dc(0)
        if sc_change > 0.15:
            failures.append(f"C2={c2}: SC throughput moved {sc_change:.1%} > 15%")
        if dc_change > 0.15:
            failures.append(f"C2={c2}: DC throughput moved {dc_change:.1%} > 15%")
    _finish(4, "traffic-mix insensitivity", failures)


def test_c05_jfq_dominance_and_fast_carrier_reference():
    failures = []
    cfg = CellConfig.single_area(1, 2)
    for rho in [round(0.1 * k, 1) for k in range(1, 10)]:
        traffic = TrafficMix(3.0 * rho, 1.0, 1.0)
        jfq, _ = solve_model(cfg, traffic, Policy.JFQ)
        jsq, _ = solve_model(cfg, traffic, Policy.JSQ)
        if jfq.gamma_sc(0) < jsq.gamma_sc(0) - 1e-8:
            failures.append(
                f"rho={rho}: fastest-queue {jfq.gamma_sc(0):.6f} below "
                f"shortest-queue {jsq.gamma_sc(0):.6f}"
            )
        if 0.2 <= rho <= 0.8:
            reference = 2.0 * (1.0 - rho)
            deviation = abs(jfq.gamma_sc(0) - reference) / reference
            if deviation > 0.10:
                failures.append(
                    f"rho={rho}: |gamma - C2(1-rho)|/C2(1-rho) = {deviation:.1%} > 10% "
                    f"(gamma={jfq.gamma_sc(0):.4f}, reference={reference:.4f})"
                )
    _finish(5, "jfq dominance and fast-carrier reference band", failures)


def test_c06_mixed_traffic_trend():
    failures = []
    cfg = CellConfig.single_area(1, 2)
    slope_magnitude = {}
    for rho in (0.2, 0.5, 0.8):
        bars = []
        for phi in (0.0, 0.25, 0.5, 0.75, 1.0):
            report, _ = solve_model(cfg, TrafficMix(3.0 * rho, phi, 1.0))
            bars.append(_gamma_bar(report, phi, 0))
            if phi == 0.5:
                slope_magnitude[rho] = abs(report.gamma_sc(0) - report.gamma_dc(0))
        for a, b in zip(bars, bars[1:]):
            if b > a + 1e-9:
                failures.append(f"rho={rho}: mean throughput increased with the SC share")
    if not slope_magnitude[0.2] > slope_magnitude[0.8]:
        failures.append(
            f"class gap at rho=0.2 ({slope_magnitude[0.2]:.4f}) not larger than "
            f"at rho=0.8 ({slope_magnitude[0.8]:.4f})"
        )
    _finish(6, "mixed-traffic mean-throughput trend", failures)


def test_c07_simulator_ctmc_cross_validation():
    failures = []
    started = time.monotonic()
    cfg = CellConfig.single_area(1, 2)
    for phi in (0.0, 0.5, 1.0):
        traffic = TrafficMix(1.5, phi, 1.0)  # rho = 0.5
        report, _ = solve_model(cfg, traffic)
        truths = {}
        if phi > 0:
            truths["sc"] = report.gamma_sc(0)
        if phi < 1:
            truths["dc"] = report.gamma_dc(0)
        hits = {kind: 0 for kind in truths}
        for replication in range(20):
            rep = simulate(
                cfg, traffic, Policy.JFQ, stop=Stop(completions=60_000),
                seed=42, stream=replication, n_batches=10,
            )
            for kind, truth in truths.items():
                est = rep.estimate(kind, 0)
                if est.gamma_hat is not None and abs(est.gamma_hat - truth) <= est.half_width:
                    hits[kind] += 1
        for kind, count in hits.items():
            if count < 18:
                failures.append(f"phi={phi} {kind}: only {count}/20 intervals covered")
    elapsed = time.monotonic() - started
    if elapsed >= 600.0:
        failures.append(f"runtime {elapsed:.1f}s >= 600s")
    _finish(7, "simulator vs exact solver cross-validation", failures)


def test_c08_capacity_table():
    failures = []
    results = {}
    for name in ("db-hsdpa", "dc-hsdpa", "lte"):
        for phi in PRESET_PHI_GRID:
            results[(name, phi)] = solve_preset(name, phi, seed=0)
    for name in ("db-hsdpa", "dc-hsdpa", "lte"):
        thetas = [results[(name, phi)].theta_star for phi in PRESET_PHI_GRID]
        for (phi_a, th_a), (phi_b, th_b) in zip(
            zip(PRESET_PHI_GRID, thetas), zip(PRESET_PHI_GRID[1:], thetas[1:])
        ):
            if th_b < th_a - 1e-9:
                failures.append(
                    f"{name}: theta* rose from {th_b:.3f} to {th_a:.3f} as phi "
                    f"went {phi_b} -> {phi_a}"
                )
    for phi in PRESET_PHI_GRID:
        db = results[("db-hsdpa", phi)].theta_star
        dc = results[("dc-hsdpa", phi)].theta_star
        if not db > dc:
            failures.append(f"phi={phi}: db-hsdpa {db:.3f} not above dc-hsdpa {dc:.3f}")
    for name in ("db-hsdpa", "lte"):
        result = results[(name, 1.0)]
        if result.deviation is None or abs(result.deviation) > 0.30:
            failures.append(
                f"{name} phi=1: deviation {result.deviation} from reference "
                f"{result.reference} exceeds 30%"
            )
    _finish(8, "capacity table", failures)


def test_c09_stability_mirrors():
    failures = []
    cfg = CellConfig.single_area(1, 1)
    for rho in (0.5, 0.9, 0.999, 1.0, 1.001, 1.1, 1.5):
        drift = fluid_total_drift(cfg, TrafficMix(2.0 * rho, 0.5, 1.0))
        want = (rho > 1.0) - (rho < 1.0)
        got = (drift > 0.0) - (drift < 0.0)
        if want != got:
            failures.append(f"rho={rho}: drift sign {got} but load sign {want}")
    report = simulate(
        cfg, TrafficMix(2.2, 0.5, 1.0), Policy.JFQ,
        stop=Stop(horizon=60.0), warmup=Warmup(0.2, 10**9), seed=1,
    )
    if not report.trend.unstable:
        failures.append(
            f"overloaded run not flagged (slope {report.trend.slope:.4f}, "
            f"t {report.trend.t_stat:.2f})"
        )
    _finish(9, "stability mirrors", failures)


def test_c10_structural_invariant_suite(capsys):
    failures = []
    started = time.monotonic()
    rc = run_validate()
    elapsed = time.monotonic() - started
    out = capsys.readouterr().out
    with capsys.disabled():
        if rc != 0:
            for line in out.splitlines():
                if "FAIL" in line:
                    failures.append(line)
        if elapsed >= 120.0:
            failures.append(f"runtime {elapsed:.1f}s >= 120s")
        _finish(10, "structural invariant suite", failures)
