from fractions import Fraction
from pathlib import Path

import pytest

import caflow.cli as cli
from caflow.cli import (
    RunSpec,
    SweepGrid,
    emit_config,
    main,
    parse_config_text,
    run_reproduce,
    run_validate,
)
from caflow.errors import ConfigError
from caflow.model import CellConfig, Policy, TrafficMix


MINIMAL = (
    "areas.1.c1 = 1\n"
    "areas.1.c2 = 1\n"
    "areas.1.q = 1\n"
    "traffic.lambda = 1.0\n"
    "traffic.phi = 0.5\n"
    "traffic.sigma = 1\n"
)


def write_cfg(tmp_path, text, name="run.cfg"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


# --- parsing -------------------------------------------------------------------


def test_parse_minimal_config():
    spec = parse_config_text(MINIMAL)
    assert spec.cfg.n_areas == 1
    assert spec.traffic.phi == 0.5
    assert spec.policy is Policy.JFQ
    assert spec.seed == 0
    assert spec.max_total is None


def test_parse_accepts_comments_and_policy():
    spec = parse_config_text(MINIMAL + "policy = jsq  # baseline\nseed = 9\n")
    assert spec.policy is Policy.JSQ
    assert spec.seed == 9


def test_parse_exact_capacities():
    spec = parse_config_text(MINIMAL.replace("areas.1.c2 = 1", "areas.1.c2 = 1.4"))
    assert spec.cfg.areas[0].c2_exact == Fraction(7, 5)


def test_parse_radii_derive_q():
    text = (
        "areas.1.c1 = 10\nareas.1.c2 = 10\n"
        "areas.2.c1 = 1\nareas.2.c2 = 1\n"
        "geometry.radii = 300, 600\n"
        "traffic.lambda = 1\ntraffic.phi = 0\ntraffic.sigma = 1\n"
    )
    spec = parse_config_text(text)
    assert spec.cfg.areas[0].q == 0.25
    assert spec.cfg.radii == (300.0, 600.0)


def test_parse_rejects_bad_q_sum():
    text = MINIMAL.replace("areas.1.q = 1", "areas.1.q = 0.9")
    with pytest.raises(ConfigError, match="sum to 1"):
        parse_config_text(text)


def test_parse_rejects_phi_out_of_range():
    with pytest.raises(ConfigError, match="traffic.phi"):
        parse_config_text(MINIMAL.replace("traffic.phi = 0.5", "traffic.phi = 1.5"))


def test_parse_rejects_unknown_key_with_line_number():
    with pytest.raises(ConfigError, match=r":7: unknown key 'traffic.lamda'"):
        parse_config_text(MINIMAL + "traffic.lamda = 2\n")


def test_parse_rejects_duplicates_and_gaps():
    with pytest.raises(ConfigError, match="duplicate key"):
        parse_config_text(MINIMAL + "traffic.phi = 0.2\n")
    text = MINIMAL + "areas.3.c1 = 1\nareas.3.c2 = 1\nareas.3.q = 0\n"
    with pytest.raises(ConfigError, match="without gaps"):
        parse_config_text(text)


def test_parse_reports_all_problems():
    bad = "areas.1.c1 = 0\nnonsense line\ntraffic.phi = 2\n"
    with pytest.raises(ConfigError) as err:
        parse_config_text(bad)
    message = str(err.value)
    assert "expected 'key = value'" in message
    assert "missing traffic.lambda" in message


def test_config_round_trip_is_exact():
    spec = RunSpec(
        cfg=CellConfig(
            areas=(
                cli.AreaSpec("10", "14", 0.25),
                cli.AreaSpec("1/3", "1.4", 0.75),
            )
        ),
        traffic=TrafficMix(2.7182818, 0.31830988, 1.5),
        policy=Policy.BERNOULLI,
        max_total=77,
        seed=12345,
    )
    again = parse_config_text(emit_config(spec))
    assert again == spec
    # exact rationals survive the text form
    assert again.cfg.areas[1].c1_exact == Fraction(1, 3)


def test_format_exact_rendering():
    assert cli._format_exact(Fraction(14)) == "14"
    assert cli._format_exact(Fraction(7, 5)) == "1.4"
    assert cli._format_exact(Fraction(13, 10)) == "1.3"
    assert cli._format_exact(Fraction(1, 3)) == "1/3"
    assert cli._format_exact(Fraction(3, 8)) == "0.375"


# --- runners through main() -------------------------------------------------------


def test_main_solve_writes_deterministic_csv(tmp_path):
    cfg = write_cfg(tmp_path, MINIMAL + "seed = 5\n")
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "solve.csv").read_bytes()
    b = (tmp_path / "b" / "solve.csv").read_bytes()
    assert a == b
    header = a.decode().splitlines()
    assert header[0] == "# dataset=solve"
    assert any(line.startswith("# seed=5") for line in header)


def test_main_rejects_bad_config(tmp_path, capsys):
    cfg = write_cfg(tmp_path, MINIMAL.replace("areas.1.q = 1", "areas.1.q = 0.9"))
    assert main(["solve", "--config", str(cfg), "--out", str(tmp_path)]) == 1
    assert "sum to 1" in capsys.readouterr().err


def test_main_numerical_failure_exit_code(tmp_path, capsys):
    # a truncation whose lattice exceeds the state budget is a numerical
    # failure (exit 2), not a config error
    cfg = write_cfg(tmp_path, MINIMAL)
    rc = main(["solve", "--config", str(cfg), "--out", str(tmp_path),
               "--max-total", "400"])
    assert rc == 2
    assert "budget" in capsys.readouterr().err


def test_main_simulate_emits_estimates_and_trace(tmp_path):
    cfg = write_cfg(tmp_path, MINIMAL)
    rc = main([
        "simulate", "--config", str(cfg), "--out", str(tmp_path),
        "--completions", "3000", "--trace-limit", "40",
    ])
    assert rc == 0
    body = (tmp_path / "simulate.csv").read_text().splitlines()
    assert body[-2].split(",")[0] == "policy"
    trace = (tmp_path / "simulate_trace.csv").read_text().splitlines()
    assert trace[-1].split(",")[1] in {"T1", "T2", "T3", "T4", "T5", "T6"}
    assert len(trace) > 20


def test_main_sweep_orders_rows(tmp_path):
    cfg = write_cfg(tmp_path, MINIMAL)
    rc = main([
        "sweep", "--config", str(cfg), "--out", str(tmp_path),
        "--rhos", "0.2,0.4", "--phis", "0,1",
    ])
    assert rc == 0
    rows = [
        line.split(",") for line in (tmp_path / "sweep.csv").read_text().splitlines()
        if not line.startswith("#")
    ][1:]
    assert [(r[4], r[2]) for r in rows] == [
        ("0.2", "0"), ("0.2", "1"), ("0.4", "0"), ("0.4", "1")
    ]


def test_sweep_parallel_matches_serial(tmp_path, monkeypatch):
    cfg = write_cfg(tmp_path, MINIMAL)
    monkeypatch.setenv(cli.WORKERS_ENV, "2")
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "par"),
                 "--rhos", "0.3", "--phis", "0,0.5"]) == 0
    monkeypatch.setenv(cli.WORKERS_ENV, "1")
    assert main(["sweep", "--config", str(cfg), "--out", str(tmp_path / "ser"),
                 "--rhos", "0.3", "--phis", "0,0.5"]) == 0
    assert (tmp_path / "par" / "sweep.csv").read_bytes() == \
        (tmp_path / "ser" / "sweep.csv").read_bytes()


def test_sweep_grid_validation():
    with pytest.raises(ConfigError):
        SweepGrid(rhos=(), phis=(0.5,))
    with pytest.raises(ConfigError):
        SweepGrid(rhos=(1.2,), phis=(0.5,))
    with pytest.raises(ConfigError):
        SweepGrid(rhos=(0.5,), phis=(1.5,))


def test_main_capacity_custom_config(tmp_path):
    cfg = write_cfg(tmp_path, MINIMAL.replace("traffic.phi = 0.5", "traffic.phi = 0"))
    rc = main([
        "capacity", "--config", str(cfg), "--phi", "0", "--target", "0.4",
        "--evaluator", "ctmc", "--out", str(tmp_path),
    ])
    assert rc == 0
    lines = (tmp_path / "capacity.csv").read_text().splitlines()
    row = lines[-1].split(",")
    assert row[0] == "custom"
    assert float(row[2]) == pytest.approx(1.6, rel=0.02)


def test_main_capacity_needs_target_or_scenario(tmp_path, capsys):
    cfg = write_cfg(tmp_path, MINIMAL)
    rc = main(["capacity", "--config", str(cfg), "--phi", "0.5", "--out", str(tmp_path)])
    assert rc == 1
    assert "target" in capsys.readouterr().err


# --- reproduce ----------------------------------------------------------------------


def test_reproduce_fig2_columns_and_anchors(tmp_path):
    path = run_reproduce("fig2", tmp_path, seed=0)
    lines = path.read_text().splitlines()
    meta = [l for l in lines if l.startswith("#")]
    for key in ("config=", "policy=", "evaluator=", "truncation=", "seed=0"):
        assert any(key in l for l in meta), f"missing {key} header"
    table = [l.split(",") for l in lines if not l.startswith("#")]
    assert table[0] == ["rho", "gamma_sc_jsq", "gamma_ps_ref"]
    first = table[1]
    assert float(first[0]) == 0.05
    # single SC user gets the full rate of one carrier as load vanishes
    assert float(first[1]) == pytest.approx(1.0, rel=0.02)
    for row in table[1:]:
        assert float(row[1]) >= float(row[2]) - 1e-9


def test_reproduce_unknown_figure():
    with pytest.raises(ConfigError, match="fig6"):
        run_reproduce("fig7", Path("unused"))


def test_reproduce_mixed_figures_smoke(tmp_path, monkeypatch):
    # coarse grids keep this a plumbing test; rho = 0.9 with mixed traffic
    # exercises the simulator fallback
    monkeypatch.setattr(cli, "FIG_RHO_GRID", (0.3, 0.9))
    monkeypatch.setattr(cli, "FIG3_PHIS", (0.0, 0.5))
    monkeypatch.setattr(cli, "FIG5_PHIS", (0.5, 1.0))
    monkeypatch.setattr(cli, "FIG6_LOADS", (0.3,))
    monkeypatch.setattr(cli, "FIG6_PHIS", (0.0, 0.5, 1.0))
    monkeypatch.setattr(cli, "SIM_FALLBACK_COMPLETIONS", 20_000)
    for figure, expected_cols in (
        ("fig3", ["rho", "phi", "gamma_sc", "gamma_dc", "gamma_bar", "evaluator"]),
        ("fig4", ["rho", "gamma_sc_jfq", "gamma_sc_jsq", "gamma_ps_c2_ref"]),
        ("fig5", ["rho", "phi", "gamma_sc", "gamma_dc", "gamma_bar", "evaluator"]),
        ("fig6", ["load", "phi", "gamma_sc", "gamma_dc", "gamma_bar", "evaluator"]),
    ):
        path = run_reproduce(figure, tmp_path, seed=1)
        lines = [l for l in path.read_text().splitlines() if not l.startswith("#")]
        assert lines[0].split(",") == expected_cols
        assert len(lines) > 1
    fig3 = [l.split(",") for l in (tmp_path / "fig3.csv").read_text().splitlines()
            if not l.startswith("#")][1:]
    used = {row[-1] for row in fig3}
    assert used == {"ctmc", "sim"}
    for row in fig3:
        rho, phi, gamma_dc, evaluator = float(row[0]), float(row[1]), row[3], row[-1]
        if phi == 0.0 and evaluator == "ctmc":
            # DC-only rows follow the pooled-capacity closed form
            assert float(gamma_dc) == pytest.approx(2.0 * (1.0 - rho), rel=0.01)


# --- validate ------------------------------------------------------------------------


def test_run_validate_passes(capsys):
    assert run_validate() == 0
    out = capsys.readouterr().out
    assert out.count("[PASS]") == len(cli.VALIDATION_CHECKS)
    assert "FAIL" not in out


def test_run_validate_detects_corrupted_generator(capsys):
    from dataclasses import replace

    def corrupted():
        gen = cli._default_generator()
        bad = gen.Q.tolil()
        bad[0, 0] = 1.0  # break the zero row-sum invariant
        return replace(gen, Q=bad.tocsr())

    assert run_validate(generator_factory=corrupted) == 3
    out = capsys.readouterr().out
    assert "[FAIL] generator-row-sums" in out


def test_run_validate_reports_skips(capsys):
    def tiny_budget_factory():
        raise cli.StateSpaceTooLargeError("budget exceeded for this check")

    rc = run_validate(generator_factory=tiny_budget_factory)
    out = capsys.readouterr().out
    # the generator-dependent checks fail hard (factory raised a caflow error
    # other than a skip); the stationary check reports SKIP
    assert "[SKIP] stationary-solution" in out
    assert rc == 3
