"""Experiment driver: sweeps, per-cell artifacts, aggregation, self checks.

Each sweep cell writes its own directory (distance curves as CSV, a
``result.json`` with full provenance) so interrupted sweeps resume without
recomputing finished cells.  Aggregation produces a long-format CSV with a
fixed column set plus threshold-crossing contours of the maximum distance.
"""

from __future__ import annotations

import csv
import json
import time
from pathlib import Path

import numpy as np

from . import __version__
from .bath import BathSpec
from .config import Cell, ExperimentConfig
from .metrics import max_distance
from .operators import SingleQubit, build_hamiltonian, eigensystem, vectorize
from .optimize import (
    SingleQubitParams,
    TwoQubitParams,
    fit_single_qubit,
    fit_two_qubit,
    transition_shifts,
)
from .sled import (
    TimeGrid,
    generate_noise,
    noise_spectrum,
    reconstruct_superoperator,
    run_ensemble,
    time_grid_for,
)
from .weak_coupling import liouvillian, propagator_sequence, steady_state_time

DELTA_THRESHOLD = 0.1  # validity contour level for summary reports

AGGREGATE_COLUMNS = [
    "g", "kappa", "beta", "solver", "delta_max", "delta_max_opt",
    "kappa_opt", "beta_opt", "a1", "a2", "a3", "dw12", "dw23", "dw34",
    "omega_q_opt", "converged", "delta_max_stderr",
]


def _cell_grid(config: ExperimentConfig, cell: Cell) -> tuple[TimeGrid, int]:
    t_max = config.window.resolve_t_max(cell.bath.kappa, cell.bath.beta,
                                        config.omega_ref)
    if config.window.n_steps is not None:
        grid = TimeGrid(t_max=t_max, n_steps=config.window.n_steps)
    else:
        grid = time_grid_for(cell.spec, cell.bath, t_max)
    points = config.window.distance_points
    stride = max(1, int(np.ceil(grid.n_steps / points)))
    n_steps = stride * int(np.ceil(grid.n_steps / stride))
    return TimeGrid(t_max=t_max, n_steps=n_steps), stride


def _jackknife_delta(times, bm_seq, props) -> float:
    deltas = np.array([max_distance(times, bm_seq, m).delta_max
                       for m in props.jackknife_matrices()])
    n_b = deltas.size
    if n_b < 2:
        return float("nan")
    return float(np.sqrt((n_b - 1) / n_b * ((deltas - deltas.mean()) ** 2).sum()))


def run_cell(config: ExperimentConfig, cell: Cell, cell_dir: Path,
             n_workers: int = 1) -> dict:
    """Compute one sweep cell and write its artifacts; returns the record."""
    cell_dir.mkdir(parents=True, exist_ok=True)
    grid, stride = _cell_grid(config, cell)
    t_start = time.perf_counter()
    props = reconstruct_superoperator(
        cell.spec, cell.bath, grid, config.sled.n_traj,
        config.sled.master_seed, sample_stride=stride, n_workers=n_workers,
        chunk_size=config.sled.chunk_size,
        checkpoint=cell_dir / "sled_checkpoint.npz")
    record = {
        "cell": cell.name,
        "values": cell.values,
        "grid": {"t_max": grid.t_max, "n_steps": grid.n_steps,
                 "stride": stride},
        "sled": {"n_traj": config.sled.n_traj,
                 "master_seed": config.sled.master_seed,
                 "max_trace_drift": props.max_trace_drift,
                 "max_hermiticity_defect": props.max_hermiticity_defect},
        "provenance": {"version": __version__,
                       "config_hash": config.config_hash()},
        "solvers": {},
    }
    for kind in config.solvers:
        lv = liouvillian(kind, cell.spec, cell.bath)
        seq = propagator_sequence(lv, props.times)
        curve = max_distance(props.times, seq, props.matrices, metadata={
            "solver": kind, "n_traj": config.sled.n_traj,
            "master_seed": config.sled.master_seed, **cell.values})
        curve.to_csv(cell_dir / f"delta_{kind}.csv")
        t_relax = steady_state_time(lv)
        entry = {
            "delta_max": curve.delta_max,
            "argmax_time": curve.argmax_time,
            "delta_max_stderr": _jackknife_delta(props.times, seq, props),
            "steady_state_time": t_relax,
            "converged": bool(t_relax <= grid.t_max),
        }
        if config.optimize.enabled:
            entry["fit"] = _fit_cell(config, cell, kind, props)
        record["solvers"][kind] = entry
    record["runtime_seconds"] = time.perf_counter() - t_start
    (cell_dir / "result.json").write_text(
        json.dumps(record, indent=2, sort_keys=True))
    return record


def _fit_cell(config: ExperimentConfig, cell: Cell, kind: str, props) -> dict:
    opt = config.optimize
    if isinstance(cell.spec, SingleQubit):
        start = SingleQubitParams(kappa=cell.bath.kappa, beta=cell.bath.beta,
                                  omega_q=cell.spec.omega_q)
        fit = fit_single_qubit(props, start, kind, cell.bath,
                               shift_rates=opt.shift_rates, xtol=opt.xtol,
                               ftol=opt.ftol, max_iter=opt.max_iter)
        return {
            "delta_max_opt": fit.delta_max_opt,
            "converged": fit.converged,
            "n_evaluations": fit.n_evaluations,
            "kappa_opt": fit.params.kappa,
            "beta_opt": fit.params.beta,
            "omega_q_opt": fit.params.omega_q,
        }
    start = TwoQubitParams(kappa=cell.bath.kappa, beta=cell.bath.beta,
                           a1=1.0, a2=0.0, a3=0.0)
    fit = fit_two_qubit(props, start, kind, cell.spec, cell.bath,
                        n_starts=opt.n_starts, xtol=opt.xtol, ftol=opt.ftol,
                        max_iter=opt.max_iter)
    eig = eigensystem(build_hamiltonian(cell.spec))
    shifts = transition_shifts(fit.params, eig)
    return {
        "delta_max_opt": fit.delta_max_opt,
        "converged": fit.converged,
        "n_evaluations": fit.n_evaluations,
        "kappa_opt": fit.params.kappa,
        "beta_opt": fit.params.beta,
        "a1": fit.params.a1, "a2": fit.params.a2, "a3": fit.params.a3,
        "transition_shifts": shifts.values.tolist(),
        "n_attempts": len(fit.attempts),
    }


def run(config: ExperimentConfig, n_workers: int = 1,
        log=print) -> int:
    """Run every sweep cell, isolating per-cell failures; 0 if all succeed."""
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(
        json.dumps(config.raw, indent=2, sort_keys=True))
    cells = config.cells()
    failures = 0
    for cell in cells:
        cell_dir = out_dir / cell.name
        marker = cell_dir / "result.json"
        if marker.exists():
            try:
                previous = json.loads(marker.read_text())
                if previous["provenance"]["config_hash"] == config.config_hash():
                    log(f"{cell.name}: already complete, skipping")
                    continue
            except (json.JSONDecodeError, KeyError):
                pass
        try:
            record = run_cell(config, cell, cell_dir, n_workers=n_workers)
        except Exception as err:  # isolate the cell, keep sweeping
            failures += 1
            cell_dir.mkdir(parents=True, exist_ok=True)
            (cell_dir / "failed.json").write_text(json.dumps(
                {"cell": cell.name, "values": cell.values,
                 "error": f"{type(err).__name__}: {err}"}, indent=2))
            log(f"{cell.name}: FAILED ({type(err).__name__}: {err})")
            continue
        deltas = ", ".join(
            f"{k}={v['delta_max']:.4f}" for k, v in record["solvers"].items())
        log(f"{cell.name}: {deltas} ({record['runtime_seconds']:.1f}s)")
    return 1 if failures else 0


def _row_from_record(record: dict, kind: str, entry: dict) -> dict:
    values = record["values"]
    fit = entry.get("fit", {})
    shifts = fit.get("transition_shifts", [])
    return {
        "g": values.get("g", ""),
        "kappa": values["kappa"],
        "beta": values["beta"],
        "solver": kind,
        "delta_max": entry["delta_max"],
        "delta_max_opt": fit.get("delta_max_opt", ""),
        "kappa_opt": fit.get("kappa_opt", ""),
        "beta_opt": fit.get("beta_opt", ""),
        "a1": fit.get("a1", ""), "a2": fit.get("a2", ""),
        "a3": fit.get("a3", ""),
        "dw12": shifts[0] if len(shifts) > 0 else "",
        "dw23": shifts[1] if len(shifts) > 1 else "",
        "dw34": shifts[2] if len(shifts) > 2 else "",
        "omega_q_opt": fit.get("omega_q_opt", ""),
        "converged": entry["converged"],
        "delta_max_stderr": entry.get("delta_max_stderr", ""),
    }


def _threshold_crossings(rows: list[dict]) -> list[dict]:
    """Log-interpolated kappa where delta_max crosses the threshold.

    Rows are grouped by (solver, beta, g); within each group the crossing is
    located between adjacent kappa samples bracketing the threshold.
    """
    groups: dict = {}
    for row in rows:
        key = (row["solver"], row["beta"], row["g"])
        groups.setdefault(key, []).append(row)
    out = []
    for (solver, beta, g), members in sorted(groups.items(), key=str):
        members.sort(key=lambda r: r["kappa"])
        for lo, hi in zip(members[:-1], members[1:]):
            d0, d1 = lo["delta_max"], hi["delta_max"]
            if (d0 - DELTA_THRESHOLD) * (d1 - DELTA_THRESHOLD) < 0:
                k0, k1 = lo["kappa"], hi["kappa"]
                frac = (DELTA_THRESHOLD - d0) / (d1 - d0)
                kappa_cross = np.exp(np.log(k0)
                                     + frac * (np.log(k1) - np.log(k0)))
                out.append({"solver": solver, "beta": beta, "g": g,
                            "kappa_cross": float(kappa_cross)})
    return out


def report(directory, log=print) -> int:
    """Aggregate per-cell artifacts into CSV tables and a text summary."""
    out_dir = Path(directory)
    records = []
    broken = []
    for marker in sorted(out_dir.glob("cell_*/result.json")):
        try:
            records.append(json.loads(marker.read_text()))
        except json.JSONDecodeError:
            broken.append(str(marker))
    for marker in sorted(out_dir.glob("cell_*/failed.json")):
        broken.append(str(marker))
    if broken:
        for b in broken:
            log(f"unusable cell artifact: {b}")
    if not records:
        log(f"no completed cells found under {out_dir}")
        return 1

    rows = []
    for record in records:
        for kind, entry in sorted(record["solvers"].items()):
            rows.append(_row_from_record(record, kind, entry))
    agg_path = out_dir / "aggregate.csv"
    with agg_path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=AGGREGATE_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)

    crossings = _threshold_crossings(rows)
    contour_path = out_dir / "contours.csv"
    with contour_path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh,
                                fieldnames=["solver", "beta", "g", "kappa_cross"])
        writer.writeheader()
        writer.writerows(crossings)

    log(f"aggregated {len(records)} cells -> {agg_path}")
    by_solver: dict = {}
    for row in rows:
        by_solver.setdefault(row["solver"], []).append(row["delta_max"])
    for solver, deltas in sorted(by_solver.items()):
        ok = sum(1 for d in deltas if d < DELTA_THRESHOLD)
        log(f"{solver}: {ok}/{len(deltas)} cells below "
            f"delta_max={DELTA_THRESHOLD}")
    return 1 if broken else 0


def noise_check(config: ExperimentConfig, n_traj: int = 2000,
                log=print) -> int:
    """Validate synthesized noise statistics against the defining integrals."""
    from scipy import integrate

    cell = config.cells()[0]
    bath = cell.bath
    t_max = 6.0 / config.omega_ref
    n_steps = int(np.ceil(t_max * bath.omega_c / 0.1))
    grid = TimeGrid(t_max=t_max, n_steps=n_steps)
    zeta = np.stack([generate_noise(bath, grid, config.sled.master_seed, i)
                     for i in range(n_traj)])

    def oracle(tau):
        def f(w):
            return float(noise_spectrum(bath, w)) / np.pi
        if tau == 0.0:
            head, _ = integrate.quad(f, 0, 10 * bath.omega_c,
                                     points=[bath.omega_c], limit=300)
            tail, _ = integrate.quad(f, 10 * bath.omega_c, np.inf, limit=300)
            return head + tail
        val, _ = integrate.quad(f, 0, np.inf, weight="cos", wvar=tau,
                                limit=300, limlst=300)
        return val

    status = 0
    c0 = oracle(0.0)
    for k in (0, n_steps // 2):
        m = zeta[:, k].mean()
        bound = 3.0 * np.sqrt(c0 / n_traj)
        ok = abs(m) < bound
        status |= 0 if ok else 1
        log(f"mean zeta(t={k * grid.dt:.2f}) = {m:+.3e} "
            f"(|.| < {bound:.3e}): {'PASS' if ok else 'FAIL'}")
    for tau in (0.0, 1.0 / config.omega_ref, 5.0 / config.omega_ref):
        lag = int(round(tau / grid.dt))
        origins = np.arange(0, n_steps + 1 - lag, 25)
        prods = (zeta[:, origins] * zeta[:, origins + lag]).mean(axis=1)
        mean, stderr = prods.mean(), prods.std(ddof=1) / np.sqrt(n_traj)
        want = oracle(tau)
        ok = abs(mean - want) < 3.0 * stderr
        status |= 0 if ok else 1
        log(f"autocovariance lag {tau:.2f}: {mean:+.4e} vs {want:+.4e} "
            f"(3 sigma = {3 * stderr:.1e}): {'PASS' if ok else 'FAIL'}")
    return status


def selftest(log=print) -> int:
    """Fast invariant suite covering every module's core identities."""
    from .metrics import channel_from_kraus, choi_min_eigenvalue, kraus_operators
    from .bath import noise_power

    rng = np.random.default_rng(0)
    checks = []

    bath = BathSpec.from_kappa(beta=1.7, kappa=0.06, omega_c=50.0)
    w = rng.uniform(0.05, 4.0, size=64)
    db = np.abs(noise_power(bath, -w)
                - np.exp(-bath.beta * w) * noise_power(bath, w)).max()
    checks.append(("detailed balance S(-w) = e^{-bw} S(w)", db < 1e-12, db))

    n = 4
    a = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    b = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    rho = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    kron_dev = np.abs(vectorize(a @ rho @ b)
                      - np.kron(b.T, a) @ vectorize(rho)).max()
    checks.append(("vectorization kronecker identity", kron_dev < 1e-12,
                   kron_dev))

    spec = SingleQubit(1.0)
    lv = liouvillian("lindblad_global", spec, bath)
    t1, t2 = 0.63, 1.41
    semi = np.abs(propagator_sequence(lv, np.array([t1 + t2]))[0]
                  - propagator_sequence(lv, np.array([t2]))[0]
                  @ propagator_sequence(lv, np.array([t1]))[0]).max()
    checks.append(("semigroup T(t1+t2) = T(t2) T(t1)", semi < 1e-8, semi))

    t_super = propagator_sequence(lv, np.array([0.9]))[0]
    cp = choi_min_eigenvalue(t_super)
    round_trip = np.abs(channel_from_kraus(kraus_operators(t_super))
                        - t_super).max()
    checks.append(("lindblad channel completely positive", cp >= -1e-9, cp))
    checks.append(("choi/kraus round trip", round_trip < 1e-8, round_trip))

    grid = TimeGrid(t_max=1.0, n_steps=100)
    rho0 = np.diag([0.0, 1.0]).astype(complex)
    r1 = run_ensemble(spec, bath, rho0, grid, 96, 5, sample_stride=10)
    r2 = run_ensemble(spec, bath, rho0, grid, 96, 5, sample_stride=10,
                      chunk_size=64)
    det = np.array_equal(r1.states, r2.states)
    checks.append(("ensemble determinism across chunkings", det,
                   float(not det)))
    checks.append(("per-trajectory trace conservation",
                   r1.max_trace_drift < 1e-10, r1.max_trace_drift))

    status = 0
    for name, ok, value in checks:
        log(f"{name}: {'PASS' if ok else 'FAIL'} ({value:.3e})")
        status |= 0 if ok else 1
    return status
