"""Command-line front end: config files, experiment runners, CSV datasets.

Config files are flat ``key = value`` text (``#`` comments allowed)::

    areas.1.c1 = 10        # carrier-1 peak rate of area 1 (Mbit/s)
    areas.1.c2 = 14
    areas.1.q  = 0.5       # or derive all q from geometry.radii = r1, r2, ...
    traffic.lambda = 2.0   # flow arrivals per second
    traffic.phi    = 0.5   # SC fraction
    traffic.sigma  = 1.0   # mean flow volume (Mbit)
    ctmc.max_total = 60    # optional truncation start
    policy = jfq           # jfq | jsq | bernoulli
    seed = 0

Capacities may be decimal strings or ``p/q`` rationals and are kept exact.
Unknown, duplicate, or malformed keys are rejected with line numbers.

All CSV output uses 6 significant digits, ``.`` decimals, LF endings, UTF-8,
and carries ``# key=value`` header lines naming the configuration, policy,
evaluator, truncation, and seed, so every dataset is regenerable from its own
file. Identical inputs produce byte-identical files.

Debug dumps (:func:`caflow.ctmc.dump_distribution_csv`,
:func:`caflow.ctmc.dump_generator_csv`) list state components first, value
last: ``n1_1,n2_1,m_1,...,probability`` for a distribution and
``from_<comps>,to_<comps>,rate`` for a generator, one row per matrix entry.
"""

from __future__ import annotations

import argparse
import os
import re
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import capacity as capacity_mod
from .ctmc import (
    DEFAULT_STATE_BUDGET,
    SOLVE_TOL,
    Truncation,
    build_generator,
    jfq_route,
    solve_model,
    solve_stationary,
)
from .errors import (
    CaflowError,
    ConfigError,
    ConvergenceError,
    DegenerateSolveError,
    StateSpaceTooLargeError,
)
from .model import (
    AreaSpec,
    CellConfig,
    Policy,
    SystemState,
    TrafficMix,
    dc_aggregate_rate,
    harmonic_capacity,
    mixed_mean_throughput,
    offered_load,
    ring_area_probabilities,
    vb_split,
)
from .sim import Stop, Warmup, simulate

WORKERS_ENV = "CAFLOW_WORKERS"

#: state budget for the bundled datasets; larger mixed-traffic points fall
#: back to the simulator (recorded per row)
REPRO_MAX_STATES = 250_000
SIM_FALLBACK_COMPLETIONS = 120_000

FIG_RHO_GRID = tuple(round(0.05 * k, 2) for k in range(1, 20))
FIG3_PHIS = (0.0, 0.5, 1.0)
FIG5_PHIS = (0.0, 0.1, 0.5, 1.0)
FIG6_LOADS = (0.2, 0.5, 0.8)
FIG6_PHIS = tuple(round(0.1 * k, 1) for k in range(11))
FIGURES = ("fig2", "fig3", "fig4", "fig5", "fig6", "table1")


# ---------------------------------------------------------------------------
# config files


@dataclass(frozen=True)
class RunSpec:
    cfg: CellConfig
    traffic: TrafficMix
    policy: Policy = Policy.JFQ
    max_total: int | None = None
    seed: int = 0


@dataclass(frozen=True)
class SweepGrid:
    """Load and mix axes of a sweep; points run in row-major (rho, phi) order."""

    rhos: tuple[float, ...]
    phis: tuple[float, ...]

    def __post_init__(self):
        if not self.rhos or not self.phis:
            raise ConfigError("sweep grids must be non-empty")
        if any(not (0.0 < r < 1.0) for r in self.rhos):
            raise ConfigError("sweep loads must lie strictly inside (0, 1)")
        if any(not (0.0 <= p <= 1.0) for p in self.phis):
            raise ConfigError("sweep SC fractions must lie in [0, 1]")

    def points(self):
        for rho in self.rhos:
            for phi in self.phis:
                yield rho, phi


_AREA_KEY = re.compile(r"^areas\.(\d+)\.(c1|c2|q)$")
_SCALAR_KEYS = {
    "geometry.radii",
    "traffic.lambda",
    "traffic.phi",
    "traffic.sigma",
    "ctmc.max_total",
    "policy",
    "seed",
}


def parse_config_text(text: str, source: str = "<config>") -> RunSpec:
    entries: dict[str, tuple[int, str]] = {}
    problems: list[tuple[int | None, str]] = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            problems.append((lineno, f"expected 'key = value', got {raw.strip()!r}"))
            continue
        key, value = (part.strip() for part in line.split("=", 1))
        if not (_AREA_KEY.match(key) or key in _SCALAR_KEYS):
            problems.append((lineno, f"unknown key {key!r}"))
            continue
        if key in entries:
            problems.append((lineno, f"duplicate key {key!r} (first set on line {entries[key][0]})"))
            continue
        entries[key] = (lineno, value)

    def take(key):
        return entries.pop(key, None)

    def parse_float(key, item, lo=None, hi=None):
        lineno, value = item
        try:
            number = float(value)
        except ValueError:
            problems.append((lineno, f"{key}: not a number: {value!r}"))
            return None
        if lo is not None and number < lo:
            problems.append((lineno, f"{key}: must be >= {lo}, got {value}"))
            return None
        if hi is not None and number > hi:
            problems.append((lineno, f"{key}: must be <= {hi}, got {value}"))
            return None
        return number

    # areas
    area_items: dict[int, dict[str, tuple[int, str]]] = {}
    for key in list(entries):
        match = _AREA_KEY.match(key)
        if match:
            idx = int(match.group(1))
            area_items.setdefault(idx, {})[match.group(2)] = entries.pop(key)
    radii_item = take("geometry.radii")
    radii = None
    if radii_item is not None:
        lineno, value = radii_item
        try:
            radii = tuple(float(part) for part in value.split(","))
        except ValueError:
            problems.append((lineno, f"geometry.radii: not a comma-separated number list: {value!r}"))
            radii = None

    areas = []
    if not area_items:
        problems.append((None, "no areas defined (need areas.1.c1, areas.1.c2, ...)"))
    else:
        expected = list(range(1, max(area_items) + 1))
        if sorted(area_items) != expected:
            problems.append((None, f"area indices must be 1..{len(area_items)} without gaps"))
        ring_qs = None
        if radii is not None and len(radii) == len(area_items):
            try:
                ring_qs = ring_area_probabilities(radii)
            except ConfigError as exc:
                problems.append((radii_item[0], f"geometry.radii: {exc}"))
        for idx in sorted(area_items):
            spec = area_items[idx]
            missing = {"c1", "c2"} - set(spec)
            if missing:
                problems.append((None, f"area {idx}: missing {sorted(missing)}"))
                continue
            q_item = spec.get("q")
            if q_item is None and ring_qs is None:
                problems.append((None, f"area {idx}: needs q (or a full geometry.radii list)"))
                continue
            q = parse_float(f"areas.{idx}.q", q_item, 0.0, 1.0) if q_item else ring_qs[idx - 1]
            if q is None:
                continue
            try:
                areas.append(AreaSpec(spec["c1"][1], spec["c2"][1], q))
            except ConfigError as exc:
                problems.append((spec["c1"][0], f"area {idx}: {exc}"))

    lam = phi = sigma = None
    item = take("traffic.lambda")
    if item is None:
        problems.append((None, "missing traffic.lambda"))
    else:
        lam = parse_float("traffic.lambda", item, lo=0.0)
    item = take("traffic.phi")
    if item is None:
        problems.append((None, "missing traffic.phi"))
    else:
        phi = parse_float("traffic.phi", item, lo=0.0, hi=1.0)
    item = take("traffic.sigma")
    if item is None:
        problems.append((None, "missing traffic.sigma"))
    else:
        sigma = parse_float("traffic.sigma", item)
        if sigma is not None and sigma <= 0:
            problems.append((item[0], f"traffic.sigma: must be > 0, got {sigma}"))
            sigma = None

    policy = Policy.JFQ
    item = take("policy")
    if item is not None:
        try:
            policy = Policy(item[1].lower())
        except ValueError:
            problems.append((item[0], f"policy: must be one of jfq, jsq, bernoulli, got {item[1]!r}"))

    seed = 0
    item = take("seed")
    if item is not None:
        try:
            seed = int(item[1])
            if seed < 0:
                raise ValueError
        except ValueError:
            problems.append((item[0], f"seed: must be a non-negative integer, got {item[1]!r}"))

    max_total = None
    item = take("ctmc.max_total")
    if item is not None:
        try:
            max_total = int(item[1])
            if max_total < 1:
                raise ValueError
        except ValueError:
            problems.append((item[0], f"ctmc.max_total: must be a positive integer, got {item[1]!r}"))

    cfg = None
    if areas and not problems:
        try:
            cfg = CellConfig(areas=tuple(areas), radii=radii)
        except ConfigError as exc:
            problems.append((None, str(exc)))

    if problems or cfg is None or None in (lam, phi, sigma):
        lines = [
            (f"{source}:{lineno}: {msg}" if lineno else f"{source}: {msg}")
            for lineno, msg in problems
        ]
        raise ConfigError("invalid configuration:\n" + "\n".join(lines), diagnostics=problems)

    return RunSpec(
        cfg=cfg,
        traffic=TrafficMix(lam, phi, sigma),
        policy=policy,
        max_total=max_total,
        seed=seed,
    )


def parse_config(path: str | Path) -> RunSpec:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_config_text(text, source=str(path))


def _format_exact(value: Fraction) -> str:
    """Exact text form: integer, terminating decimal, or p/q."""
    if value.denominator == 1:
        return str(value.numerator)
    den = value.denominator
    twos = fives = 0
    while den % 2 == 0:
        den //= 2
        twos += 1
    while den % 5 == 0:
        den //= 5
        fives += 1
    if den == 1:
        digits = max(twos, fives)
        scaled = value.numerator * 10**digits // value.denominator
        text = f"{scaled:0{digits + 1}d}"
        return f"{text[:-digits]}.{text[-digits:]}" if digits else text
    return f"{value.numerator}/{value.denominator}"


def emit_config(spec: RunSpec) -> str:
    """Text form of a run spec; parses back to an equal spec."""
    lines = []
    for idx, area in enumerate(spec.cfg.areas, start=1):
        lines.append(f"areas.{idx}.c1 = {_format_exact(area.c1_exact)}")
        lines.append(f"areas.{idx}.c2 = {_format_exact(area.c2_exact)}")
        lines.append(f"areas.{idx}.q = {area.q!r}")
    if spec.cfg.radii is not None:
        lines.append("geometry.radii = " + ", ".join(repr(r) for r in spec.cfg.radii))
    lines.append(f"traffic.lambda = {spec.traffic.lambda_total!r}")
    lines.append(f"traffic.phi = {spec.traffic.phi!r}")
    lines.append(f"traffic.sigma = {spec.traffic.sigma!r}")
    if spec.max_total is not None:
        lines.append(f"ctmc.max_total = {spec.max_total}")
    lines.append(f"policy = {spec.policy.value}")
    lines.append(f"seed = {spec.seed}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# CSV emission


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.6g}"
    return str(value)


def write_csv(path: Path, meta: list[tuple[str, str]], columns: list[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for key, value in meta:
            fh.write(f"# {key}={value}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_cell(v) for v in row) + "\n")
    return path


def _config_summary(cfg: CellConfig) -> str:
    parts = []
    for area in cfg.areas:
        parts.append(
            f"(c1={_format_exact(area.c1_exact)},c2={_format_exact(area.c2_exact)},q={area.q:g})"
        )
    return ";".join(parts)


# ---------------------------------------------------------------------------
# runners


def _solve_columns(n_areas: int) -> list[str]:
    cols = ["policy", "lambda", "phi", "sigma", "rho"]
    for j in range(1, n_areas + 1):
        cols += [f"gamma_sc_{j}", f"gamma_dc_{j}", f"gamma_bar_{j}"]
    cols += ["blocking_sc", "blocking_dc", "residual", "states", "max_total", "method"]
    return cols


def _solve_row(spec_policy, traffic, rho, report) -> list:
    row = [spec_policy.value, traffic.lambda_total, traffic.phi, traffic.sigma, rho]
    for area in report.per_area:
        row += [area.gamma_sc, area.gamma_dc, area.gamma_bar]
    diag = report.diagnostics
    row += [diag.blocking_sc, diag.blocking_dc, diag.residual, diag.states,
            diag.max_total, diag.method]
    return row


def run_solve(
    spec: RunSpec,
    out_dir: Path,
    *,
    tolerance: float = SOLVE_TOL,
    max_states: int = DEFAULT_STATE_BUDGET,
) -> Path:
    trunc = Truncation(max_total=spec.max_total) if spec.max_total else None
    report, _ = solve_model(
        spec.cfg, spec.traffic, spec.policy, trunc, tol=tolerance, max_states=max_states
    )
    rho = offered_load(spec.cfg, spec.traffic).rho
    meta = [
        ("dataset", "solve"),
        ("config", _config_summary(spec.cfg)),
        ("policy", spec.policy.value),
        ("evaluator", "ctmc"),
        ("truncation", f"max_total={report.diagnostics.max_total}"),
        ("seed", str(spec.seed)),
    ]
    return write_csv(
        out_dir / "solve.csv", meta, _solve_columns(spec.cfg.n_areas),
        [_solve_row(spec.policy, spec.traffic, rho, report)],
    )


def run_simulate(
    spec: RunSpec,
    out_dir: Path,
    *,
    completions: int | None = None,
    horizon: float | None = None,
    warmup_fraction: float = 0.2,
    warmup_completions: int = 10_000,
    trace_limit: int = 0,
) -> Path:
    if completions is None and horizon is None:
        completions = 50_000
    report = simulate(
        spec.cfg,
        spec.traffic,
        spec.policy,
        stop=Stop(horizon=horizon, completions=completions),
        warmup=Warmup(warmup_fraction, warmup_completions),
        seed=spec.seed,
        collect_trace=trace_limit,
    )
    rho = offered_load(spec.cfg, spec.traffic).rho
    cols = ["policy", "lambda", "phi", "sigma", "rho", "seed"]
    row: list = [spec.policy.value, spec.traffic.lambda_total, spec.traffic.phi,
                 spec.traffic.sigma, rho, spec.seed]
    for kind in ("sc", "dc"):
        for j in range(spec.cfg.n_areas):
            est = report.estimates.get((kind, j))
            cols += [f"gamma_{kind}_{j + 1}", f"half_{kind}_{j + 1}", f"n_{kind}_{j + 1}"]
            if est is None:
                row += [None, None, 0]
            else:
                row += [est.gamma_hat, est.half_width, est.completions]
    cols += ["unstable", "slope", "t_stat", "events", "sim_time"]
    row += [report.trend.unstable, report.trend.slope, report.trend.t_stat,
            report.events, report.sim_time]
    meta = [
        ("dataset", "simulate"),
        ("config", _config_summary(spec.cfg)),
        ("policy", spec.policy.value),
        ("evaluator", "sim"),
        ("truncation", "none"),
        ("seed", str(spec.seed)),
        ("ci_level", "0.95"),
    ]
    path = write_csv(out_dir / "simulate.csv", meta, cols, [row])
    if trace_limit > 0:
        comps = [f"{name}_{j + 1}" for j in range(spec.cfg.n_areas) for name in ("n1", "n2", "m")]
        write_csv(
            out_dir / "simulate_trace.csv",
            meta + [("trace_limit", str(trace_limit))],
            ["time", "event", "area"] + comps,
            [[ev.time, ev.label, ev.area + 1, *ev.state_after] for ev in report.trace],
        )
    return path


def _sweep_worker(payload):
    cfg, sigma, policy, rho, phi, max_total, tolerance, max_states = payload
    lam = rho * harmonic_capacity(cfg) / sigma
    traffic = TrafficMix(lam, phi, sigma)
    trunc = Truncation(max_total=max_total) if max_total else None
    report, _ = solve_model(cfg, traffic, policy, trunc, tol=tolerance, max_states=max_states)
    return _solve_row(policy, traffic, rho, report)


def resolve_workers() -> int:
    value = os.environ.get(WORKERS_ENV, "1")
    try:
        return max(1, int(value))
    except ValueError:
        return 1


def run_sweep(
    spec: RunSpec,
    grid: SweepGrid,
    out_dir: Path,
    *,
    tolerance: float = SOLVE_TOL,
    max_states: int = DEFAULT_STATE_BUDGET,
    workers: int | None = None,
) -> Path:
    workers = resolve_workers() if workers is None else workers
    payloads = [
        (spec.cfg, spec.traffic.sigma, spec.policy, rho, phi, spec.max_total,
         tolerance, max_states)
        for rho, phi in grid.points()
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_sweep_worker, payloads))
    else:
        rows = [_sweep_worker(p) for p in payloads]
    meta = [
        ("dataset", "sweep"),
        ("config", _config_summary(spec.cfg)),
        ("policy", spec.policy.value),
        ("evaluator", "ctmc"),
        ("truncation", f"auto(start={spec.max_total or 'heuristic'})"),
        ("seed", str(spec.seed)),
        ("grid_rhos", ",".join(f"{r:g}" for r in grid.rhos)),
        ("grid_phis", ",".join(f"{p:g}" for p in grid.phis)),
    ]
    return write_csv(out_dir / "sweep.csv", meta, _solve_columns(spec.cfg.n_areas), rows)


CAPACITY_COLUMNS = [
    "scenario", "phi", "theta_star", "achieved_gamma_edge", "evaluator",
    "reference_theta", "rel_deviation", "note",
]


def _capacity_row(scenario: str, phi: float, result) -> list:
    return [
        scenario, phi, result.theta_star, result.achieved_gamma, result.evaluator,
        result.reference, result.deviation, result.note,
    ]


def run_capacity(
    out_dir: Path,
    *,
    scenario: str | None = None,
    spec: RunSpec | None = None,
    phi: float,
    target: float | None = None,
    evaluator: str = "auto",
    tolerance: float = 0.01,
    seed: int = 0,
) -> Path:
    if scenario is not None:
        result = capacity_mod.solve_preset(
            scenario, phi, evaluator=evaluator, seed=seed, rel_tol=tolerance
        )
        label = scenario
        cfg = capacity_mod.scenario_presets(scenario)[0]
    else:
        if spec is None or target is None:
            raise ConfigError("capacity needs --scenario or both --config and --target")
        if evaluator == "auto":
            evaluator = "ctmc"
        query = capacity_mod.CapacityQuery(
            cfg=spec.cfg, phi=phi, target_gamma=target, evaluator=evaluator,
            rel_tol=tolerance, sigma=spec.traffic.sigma, seed=seed, policy=spec.policy,
        )
        result = capacity_mod.max_sustainable_intensity(query)
        label = "custom"
        cfg = spec.cfg
    meta = [
        ("dataset", "capacity"),
        ("config", _config_summary(cfg)),
        ("policy", "jfq"),
        ("evaluator", result.evaluator),
        ("truncation", "auto"),
        ("seed", str(seed)),
        ("theta_tolerance", f"{tolerance:g}"),
    ]
    return write_csv(
        out_dir / "capacity.csv", meta, CAPACITY_COLUMNS,
        [_capacity_row(label, phi, result)],
    )


# ---------------------------------------------------------------------------
# bundled datasets


def _gamma_point(cfg, phi, rho, policy, seed, stream, max_states=REPRO_MAX_STATES):
    """(gamma_sc, gamma_dc, gamma_bar, evaluator) at one (rho, phi) point.

    Prefers the exact solver; falls back to the simulator when the truncated
    lattice within the blocking target would exceed the state budget.
    """
    lam = rho * harmonic_capacity(cfg)
    traffic = TrafficMix(lam, phi, 1.0)
    try:
        report, _ = solve_model(cfg, traffic, policy, max_states=max_states)
        if report.diagnostics.reliable:
            return report.gamma_sc(0), report.gamma_dc(0), report.gamma_bar(0), "ctmc"
    except StateSpaceTooLargeError:
        pass
    rep = simulate(
        cfg, traffic, policy,
        stop=Stop(completions=SIM_FALLBACK_COMPLETIONS),
        warmup=Warmup(0.2, SIM_FALLBACK_COMPLETIONS // 10),
        seed=seed, stream=stream, n_batches=10,
    )
    gamma_sc = rep.estimates.get(("sc", 0))
    gamma_dc = rep.estimates.get(("dc", 0))
    gamma_sc = gamma_sc.gamma_hat if gamma_sc else None
    gamma_dc = gamma_dc.gamma_hat if gamma_dc else None
    if phi == 1.0:
        gamma_bar = gamma_sc
    elif phi == 0.0:
        gamma_bar = gamma_dc
    elif gamma_sc is not None and gamma_dc is not None:
        gamma_bar = mixed_mean_throughput(gamma_sc, gamma_dc, phi)
    else:
        gamma_bar = None
    return gamma_sc, gamma_dc, gamma_bar, "sim"


def _meta(dataset, cfg, policy, evaluator, seed, **extra):
    meta = [
        ("dataset", dataset),
        ("config", _config_summary(cfg)),
        ("policy", policy),
        ("evaluator", evaluator),
        ("truncation", f"auto(budget={REPRO_MAX_STATES} states)"),
        ("seed", str(seed)),
    ]
    meta.extend((k, str(v)) for k, v in extra.items())
    return meta


def _repro_fig2(seed):
    cfg = CellConfig.single_area(1, 1)
    rows = []
    for rho in FIG_RHO_GRID:
        traffic = TrafficMix(2.0 * rho, 1.0, 1.0)
        report, _ = solve_model(cfg, traffic, Policy.JFQ, max_states=REPRO_MAX_STATES)
        rows.append([rho, report.gamma_sc(0), 1.0 - rho])
    meta = _meta(
        "fig2", cfg, "jsq", "ctmc", seed,
        note="shortest-queue curve computed as the equal-capacity fastest-queue "
             "solve (identical generators); reference is one PS server of rate 1",
    )
    return meta, ["rho", "gamma_sc_jsq", "gamma_ps_ref"], rows


def _repro_fig3(seed):
    cfg = CellConfig.single_area(1, 1)
    rows = []
    stream = 0
    for phi in FIG3_PHIS:
        for rho in FIG_RHO_GRID:
            gamma_sc, gamma_dc, gamma_bar, used = _gamma_point(
                cfg, phi, rho, Policy.JFQ, seed, stream
            )
            rows.append([rho, phi, gamma_sc, gamma_dc, gamma_bar, used])
            stream += 1
    meta = _meta("fig3", cfg, "jfq", "ctmc+sim-fallback", seed)
    return meta, ["rho", "phi", "gamma_sc", "gamma_dc", "gamma_bar", "evaluator"], rows


def _repro_fig4(seed):
    cfg = CellConfig.single_area(1, 2)
    rows = []
    for rho in FIG_RHO_GRID:
        traffic = TrafficMix(3.0 * rho, 1.0, 1.0)
        jfq, _ = solve_model(cfg, traffic, Policy.JFQ, max_states=REPRO_MAX_STATES)
        jsq, _ = solve_model(cfg, traffic, Policy.JSQ, max_states=REPRO_MAX_STATES)
        rows.append([rho, jfq.gamma_sc(0), jsq.gamma_sc(0), 2.0 * (1.0 - rho)])
    meta = _meta(
        "fig4", cfg, "jfq,jsq", "ctmc", seed,
        note="reference is one PS server of the larger capacity",
    )
    return meta, ["rho", "gamma_sc_jfq", "gamma_sc_jsq", "gamma_ps_c2_ref"], rows


def _repro_fig5(seed):
    cfg = CellConfig.single_area(1, "1.3")
    rows = []
    stream = 0
    for phi in FIG5_PHIS:
        for rho in FIG_RHO_GRID:
            gamma_sc, gamma_dc, gamma_bar, used = _gamma_point(
                cfg, phi, rho, Policy.JFQ, seed, stream
            )
            rows.append([rho, phi, gamma_sc, gamma_dc, gamma_bar, used])
            stream += 1
    meta = _meta("fig5", cfg, "jfq", "ctmc+sim-fallback", seed)
    return meta, ["rho", "phi", "gamma_sc", "gamma_dc", "gamma_bar", "evaluator"], rows


def _repro_fig6(seed):
    cfg = CellConfig.single_area(1, 2)
    rows = []
    stream = 0
    for rho in FIG6_LOADS:
        for phi in FIG6_PHIS:
            gamma_sc, gamma_dc, gamma_bar, used = _gamma_point(
                cfg, phi, rho, Policy.JFQ, seed, stream
            )
            rows.append([rho, phi, gamma_sc, gamma_dc, gamma_bar, used])
            stream += 1
    meta = _meta("fig6", cfg, "jfq", "ctmc+sim-fallback", seed)
    return meta, ["load", "phi", "gamma_sc", "gamma_dc", "gamma_bar", "evaluator"], rows


def _repro_table1(seed):
    rows = []
    for name in ("db-hsdpa", "dc-hsdpa", "lte"):
        for phi in capacity_mod.PRESET_PHI_GRID:
            result = capacity_mod.solve_preset(name, phi, seed=seed)
            rows.append(_capacity_row(name, phi, result))
    cfgs = "; ".join(
        f"{name}: {_config_summary(capacity_mod.scenario_presets(name)[0])}"
        for name in ("db-hsdpa", "dc-hsdpa", "lte")
    )
    meta = [
        ("dataset", "table1"),
        ("config", cfgs),
        ("policy", "jfq"),
        ("evaluator", "ctmc for single-class mixes, sim for mixed traffic"),
        ("truncation", f"auto(budget={DEFAULT_STATE_BUDGET} states)"),
        ("seed", str(seed)),
        ("note", "edge capacities are exact tenths of the center; reference values "
                 "are reported for comparison, not asserted"),
    ]
    return meta, CAPACITY_COLUMNS, rows


_REPRO_BUILDERS = {
    "fig2": _repro_fig2,
    "fig3": _repro_fig3,
    "fig4": _repro_fig4,
    "fig5": _repro_fig5,
    "fig6": _repro_fig6,
    "table1": _repro_table1,
}


def run_reproduce(figure: str, out_dir: Path, seed: int = 0) -> Path:
    if figure not in _REPRO_BUILDERS:
        raise ConfigError(f"unknown figure {figure!r}; valid: {', '.join(FIGURES)}")
    meta, columns, rows = _REPRO_BUILDERS[figure](seed)
    return write_csv(out_dir / f"{figure}.csv", meta, columns, rows)


# ---------------------------------------------------------------------------
# validation suite


class CheckFailed(Exception):
    pass


class CheckSkipped(Exception):
    pass


def _default_generator():
    cfg = CellConfig.single_area(1, 2)
    traffic = TrafficMix(1.5, 0.5, 1.0)
    return build_generator(cfg, traffic, Truncation(max_total=12))


def _check_generator_row_sums(gen_factory, _max_states):
    gen = gen_factory()
    sums = np.abs(np.asarray(gen.Q.sum(axis=1)).ravel())
    bound = 1e-10 * max(1.0, gen.unif)
    if sums.max() > bound:
        raise CheckFailed(f"max |row sum| = {sums.max():.3e} exceeds {bound:.3e}")
    coo = gen.Q.tocoo()
    off = coo.row != coo.col
    src = gen.space.counts[coo.row[off]].astype(np.int64)
    dst = gen.space.counts[coo.col[off]].astype(np.int64)
    if np.abs(dst - src).sum(axis=1).max(initial=0) != 1:
        raise CheckFailed("an off-diagonal entry links states that are not unit neighbors")
    if coo.data[off].min(initial=0.0) < 0:
        raise CheckFailed("negative off-diagonal rate")
    return f"{gen.Q.shape[0]} states, max |row sum| {sums.max():.2e}"


def _check_stationary_solution(gen_factory, max_states):
    try:
        gen = gen_factory()
        dist = solve_stationary(gen)
    except StateSpaceTooLargeError as exc:
        raise CheckSkipped(str(exc)) from None
    if dist.pi.min() < 0:
        raise CheckFailed("negative stationary probability")
    if abs(dist.pi.sum() - 1.0) > 1e-10:
        raise CheckFailed(f"pi sums to {dist.pi.sum()!r}")
    if dist.residual > SOLVE_TOL:
        raise CheckFailed(f"residual {dist.residual:.3e} above {SOLVE_TOL}")
    return f"residual {dist.residual:.2e}, sum deviation {abs(dist.pi.sum() - 1.0):.2e}"


def _check_jfq_jsq_identity(_gen_factory, _max_states):
    cfg = CellConfig.single_area("1.7", "1.7")
    traffic = TrafficMix(2.0, 0.6, 1.0)
    gen_a = build_generator(cfg, traffic, Truncation(max_total=10), Policy.JFQ)
    gen_b = build_generator(cfg, traffic, Truncation(max_total=10), Policy.JSQ)
    diff = (gen_a.Q != gen_b.Q).nnz
    if diff:
        raise CheckFailed(f"{diff} entries differ between JFQ and JSQ generators")
    return f"identical matrices with {gen_a.Q.nnz} entries"


def _check_routing_scale_invariance(_gen_factory, _max_states):
    capacities = [(1, 2), ("1.3", "2.6"), (Fraction(3, 7), Fraction(5, 7)), (10, 14)]
    scales = [2, Fraction(3, 2), Fraction(7, 5), 10]
    checked = 0
    for c1, c2 in capacities:
        base_cfg = CellConfig.single_area(c1, c2)
        for lam in scales:
            cfg = CellConfig.single_area(
                base_cfg.areas[0].c1_exact * lam, base_cfg.areas[0].c2_exact * lam
            )
            for n1 in range(5):
                for n2 in range(5):
                    for m in range(3):
                        state = SystemState((n1, n2, m))
                        if jfq_route(state, 0, base_cfg) is not jfq_route(state, 0, cfg):
                            raise CheckFailed(
                                f"scaling by {lam} changed the route in state {state.counts}"
                            )
                        checked += 1
    return f"{checked} routing decisions invariant under capacity scaling"


def _check_vb_conservation(_gen_factory, _max_states):
    worst = 0.0
    for c1, c2 in [(1, 2), ("1.3", "0.7"), (Fraction(5, 3), Fraction(7, 11))]:
        cfg = CellConfig.single_area(c1, c2)
        for n1 in range(4):
            for n2 in range(4):
                for m in range(1, 4):
                    state = SystemState((n1, n2, m))
                    for dt in (1e-3, 0.25, 2.0):
                        s1, s2 = vb_split(state, 0, cfg, dt)
                        total = dc_aggregate_rate(state, 0, cfg) * dt
                        worst = max(worst, abs(s1 + s2 - total) / max(total, 1e-30))
    if worst > 1e-12:
        raise CheckFailed(f"volume split misses the aggregate by {worst:.3e} (relative)")
    return f"worst relative imbalance {worst:.2e}"


def _check_csv_determinism(_gen_factory, _max_states):
    spec = parse_config_text(
        "areas.1.c1 = 1\nareas.1.c2 = 2\nareas.1.q = 1\n"
        "traffic.lambda = 1.5\ntraffic.phi = 0.5\ntraffic.sigma = 1\nseed = 3\n"
    )
    outputs = []
    with tempfile.TemporaryDirectory() as tmp:
        for sub in ("a", "b"):
            path = run_solve(spec, Path(tmp) / sub)
            outputs.append(path.read_bytes())
    if outputs[0] != outputs[1]:
        raise CheckFailed("two identical solve runs produced different bytes")
    round_trip = parse_config_text(emit_config(spec))
    if round_trip != spec:
        raise CheckFailed("config round-trip changed the parsed settings")
    return f"byte-identical output ({len(outputs[0])} bytes), config round-trip exact"


VALIDATION_CHECKS = [
    ("generator-row-sums", _check_generator_row_sums),
    ("stationary-solution", _check_stationary_solution),
    ("jfq-jsq-identity", _check_jfq_jsq_identity),
    ("routing-scale-invariance", _check_routing_scale_invariance),
    ("vb-conservation", _check_vb_conservation),
    ("csv-determinism", _check_csv_determinism),
]


def run_validate(
    generator_factory=None,
    max_states: int = DEFAULT_STATE_BUDGET,
    out=None,
) -> int:
    """Run the structural invariant suite; exit code 0 iff every check passes.

    Checks that cannot run within the state budget report SKIP, not PASS.
    """
    out = out if out is not None else sys.stdout
    factory = generator_factory or _default_generator
    failed = 0
    for name, check in VALIDATION_CHECKS:
        started = time.monotonic()
        try:
            detail = check(factory, max_states)
            status = "PASS"
        except CheckSkipped as exc:
            status, detail = "SKIP", str(exc)
        except CheckFailed as exc:
            status, detail = "FAIL", str(exc)
            failed += 1
        except CaflowError as exc:
            status, detail = "FAIL", f"{type(exc).__name__}: {exc}"
            failed += 1
        elapsed = time.monotonic() - started
        print(f"[{status}] {name} ({elapsed:.2f}s): {detail}", file=out)
    print(
        f"{'all checks passed' if not failed else f'{failed} check(s) FAILED'}",
        file=out,
    )
    return 0 if failed == 0 else 3


# ---------------------------------------------------------------------------
# argument parsing


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="caflow",
        description="flow-level performance toolkit for two-carrier cells",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="key=value config file")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")

    p_solve = sub.add_parser("solve", help="stationary solve of one configuration")
    add_common(p_solve)
    p_solve.add_argument("--max-total", type=int, default=None, help="truncation start")
    p_solve.add_argument("--tolerance", type=float, default=SOLVE_TOL,
                         help="stationary residual tolerance")

    p_sim = sub.add_parser("simulate", help="event-driven simulation of one configuration")
    add_common(p_sim)
    p_sim.add_argument("--completions", type=int, default=None)
    p_sim.add_argument("--horizon", type=float, default=None, help="simulated seconds")
    p_sim.add_argument("--trace-limit", type=int, default=0,
                       help="also dump up to N events as a trace CSV")

    p_sweep = sub.add_parser("sweep", help="solve over a grid of loads and mixes")
    add_common(p_sweep)
    p_sweep.add_argument("--rhos", required=True,
                         help="comma-separated loads in (0,1), e.g. 0.1,0.2,0.5")
    p_sweep.add_argument("--phis", default=None,
                         help="comma-separated SC fractions (default: the config phi)")
    p_sweep.add_argument("--tolerance", type=float, default=SOLVE_TOL)

    p_cap = sub.add_parser("capacity", help="invert an edge-throughput target")
    p_cap.add_argument("--scenario", choices=sorted(capacity_mod.REFERENCE_THETA),
                       default=None)
    p_cap.add_argument("--config", default=None)
    p_cap.add_argument("--target", type=float, default=None,
                       help="edge mean-throughput target (Mbit/s); presets bundle one")
    p_cap.add_argument("--phi", type=float, required=True)
    p_cap.add_argument("--evaluator", choices=("auto",) + capacity_mod.EVALUATORS,
                       default="auto")
    p_cap.add_argument("--tolerance", type=float, default=0.01,
                       help="relative tolerance on theta")
    p_cap.add_argument("--out", default="out")
    p_cap.add_argument("--seed", type=int, default=0)

    p_repro = sub.add_parser("reproduce", help="emit a bundled study dataset")
    p_repro.add_argument("figure", choices=FIGURES)
    p_repro.add_argument("--out", default="out")
    p_repro.add_argument("--seed", type=int, default=0)

    p_val = sub.add_parser("validate", help="run the structural invariant suite")
    p_val.add_argument("--max-states", type=int, default=DEFAULT_STATE_BUDGET)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "validate":
            return run_validate(max_states=args.max_states)

        if args.command == "capacity":
            spec = parse_config(args.config) if args.config else None
            path = run_capacity(
                Path(args.out),
                scenario=args.scenario,
                spec=spec,
                phi=args.phi,
                target=args.target,
                evaluator=args.evaluator,
                tolerance=args.tolerance,
                seed=args.seed,
            )
            print(path)
            return 0

        if args.command == "reproduce":
            path = run_reproduce(args.figure, Path(args.out), seed=args.seed)
            print(path)
            return 0

        spec = parse_config(args.config)
        if args.seed is not None:
            spec = RunSpec(cfg=spec.cfg, traffic=spec.traffic, policy=spec.policy,
                           max_total=spec.max_total, seed=args.seed)
        out_dir = Path(args.out)
        if args.command == "solve":
            if args.max_total is not None:
                spec = RunSpec(cfg=spec.cfg, traffic=spec.traffic, policy=spec.policy,
                               max_total=args.max_total, seed=spec.seed)
            path = run_solve(spec, out_dir, tolerance=args.tolerance)
        elif args.command == "simulate":
            path = run_simulate(
                spec, out_dir,
                completions=args.completions, horizon=args.horizon,
                trace_limit=args.trace_limit,
            )
        elif args.command == "sweep":
            rhos = tuple(float(x) for x in args.rhos.split(","))
            phis = (
                tuple(float(x) for x in args.phis.split(","))
                if args.phis else (spec.traffic.phi,)
            )
            path = run_sweep(spec, SweepGrid(rhos=rhos, phis=phis), out_dir,
                             tolerance=args.tolerance)
        else:  # pragma: no cover
            parser.error(f"unhandled command {args.command}")
            return 2
        print(path)
        return 0
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except (StateSpaceTooLargeError, ConvergenceError, DegenerateSolveError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


def console_main() -> None:  # pragma: no cover
    sys.exit(main())


if __name__ == "__main__":  # pragma: no cover
    console_main()
