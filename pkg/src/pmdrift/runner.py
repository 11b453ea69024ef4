"""Experiment pipelines and the manifest-last output contract."""

from __future__ import annotations

import logging
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, ExperimentConfig
from .exact import (
    Barenblatt,
    BarenblattParams,
    Equilibrium,
    EquilibriumProfile,
    from_descriptor,
    solve_mass_constant,
)
from .field import DENSITY, Grid, ScalarField, density_values, read_snapshot
from .io import DISTANCE_HEADER, emit_csv, emit_manifest, file_entries, write_trajectory
from .potential import Potential
from .solver import Trajectory, evolve
from .verify import (
    Domain,
    classify,
    comparison_experiment,
    conservation_report,
    convergence_experiment,
    gridded_tol,
    touching_test,
)

log = logging.getLogger(__name__)

MASS_TOL = 1e-10
ORDER_TOL = 1e-8


def bump_density(grid: Grid, center, width: float, total: float) -> ScalarField:
    """(1 - |x - c|^2 / w^2)_+ scaled to the requested discrete mass."""
    r2 = np.sum((grid.centers() - np.asarray(center, float)) ** 2, axis=-1)
    shape = np.maximum(1.0 - r2 / width**2, 0.0)
    s = shape.sum() * grid.cell_volume
    if s == 0:
        raise ValueError("bump does not cover any cell centre")
    return ScalarField(grid, shape * (total / s), DENSITY)


def build_initial(init: dict, grid: Grid, phi: Potential, m: float) -> ScalarField:
    kind = init["type"]
    if kind == "bump":
        return bump_density(grid, init["center"], init["width"], init["mass"])
    if kind == "barenblatt":
        sol = Barenblatt(BarenblattParams(init["tau"], init["C"], m, grid.d), init["center"])
        return sol.sample(grid, 0.0, DENSITY)
    if kind == "equilibrium":
        C0 = init["C0"]
        if C0 is None:
            C0 = solve_mass_constant(phi, m, init["mass"], grid)
        return Equilibrium(EquilibriumProfile(phi, C0, m)).sample(grid, 0.0, DENSITY)
    if kind == "snapshot":
        f, _ = read_snapshot(init["path"])
        if f.grid != grid:
            raise ValueError(f"snapshot grid {f.grid} does not match the configured grid")
        return f if f.kind == DENSITY else ScalarField(grid, density_values(f.values, m), DENSITY)
    return ScalarField(grid, np.zeros(grid.shape), DENSITY)


def perturbed(traj: Trajectory, c: float) -> Trajectory:
    """Copy of ``traj`` with pressure u + c t (no longer a solution for c != 0)."""
    out = Trajectory(traj.grid, traj.m, center=traj.center)
    for k, t in enumerate(traj.times):
        out.record(t, density_values(traj.pressure(k) + c * t, traj.m))
    return out


# pipelines ----------------------------------------------------------------


def _simulate(cfg: ExperimentConfig, out: Path):
    grid, phi = cfg.make_grid(), cfg.make_potential()
    rho0 = build_initial(cfg.initial, grid, phi, cfg.m)
    traj = evolve(rho0, phi, cfg.solver_config())
    files = write_trajectory(traj, out)
    cons = conservation_report(traj)
    summary = {"conservation": cons.to_dict(), "steps": traj.steps, "snapshots": len(traj),
               "grid": grid.to_dict(), "potential": phi.to_dict()}
    return files, summary, cons.drift <= MASS_TOL and not cons.halted


def _oracle(cfg: ExperimentConfig, out: Path):
    phi = cfg.make_potential()
    if not phi.is_zero:
        raise ConfigError("config.potential: the Barenblatt oracle needs a zero potential")
    init = cfg.initial or {"type": "barenblatt", "tau": 1.0, "C": 1.0, "center": None}
    if init["type"] != "barenblatt":
        raise ConfigError("config.initial.type: the Barenblatt oracle needs a barenblatt initial state")
    g = cfg.grid
    d = len(g["lower"])
    params = BarenblattParams(init["tau"], init["C"], cfg.m, d)
    sol = Barenblatt(params, init["center"])
    band = cfg.options["band"]
    spacings = [g["h"], g["h"] / 2] if cfg.options["refine"] else [g["h"]]
    rows, entries = [], []
    ok = True
    for h in spacings:
        grid = Grid.from_spacing(g["lower"], g["upper"], h)
        traj = evolve(sol.sample(grid, 0.0, DENSITY), Potential.zero(d), cfg.solver_config())
        t = traj.times[-1]
        pts = grid.centers()
        inside = np.linalg.norm(pts - sol.center(t), axis=-1) <= band * float(params.radius(t))
        err = float(np.max(np.abs(traj.pressure(len(traj) - 1) - sol.value(pts, t))[inside]))
        cons = conservation_report(traj)
        rows.append((h, err, cons.drift, traj.steps))
        entries.append({"h": h, "linf_error": err, "mass_drift": cons.drift, "t": t,
                        "halted": cons.halted})
        ok &= cons.drift <= MASS_TOL and not cons.halted
    files = [emit_csv(("h", "linf_error", "mass_drift", "steps"), rows, out / "oracle.csv")]
    summary = {"runs": entries, "tol": {"linf_error": 0.02, "ratio": 1.7, "mass_drift": MASS_TOL}}
    ok &= entries[0]["linf_error"] <= 0.02
    if len(entries) == 2:
        ratio = entries[0]["linf_error"] / max(entries[1]["linf_error"], 1e-300)
        summary["ratio"] = ratio
        summary["order"] = float(np.log2(ratio))
        ok &= ratio >= 1.7
    return files, summary, bool(ok)


def random_ordered_pair(grid: Grid, rng: np.random.Generator):
    """Nested smooth bumps and a random convex quadratic potential."""
    lo_b = np.asarray(grid.lower)
    hi_b = np.asarray(grid.upper)
    mid = 0.5 * (lo_b + hi_b)
    L = 0.5 * float(np.min(hi_b - lo_b))
    d = grid.d
    phi = Potential.quadratic(rng.uniform(0.25, 2.0), mid + rng.uniform(-0.125, 0.125, d) * L)
    c = mid + rng.uniform(-0.1, 0.1, d) * L
    w = rng.uniform(0.12, 0.3) * L
    x = grid.centers()

    def bump(center, width, amp):
        return amp * np.maximum(1.0 - np.sum((x - center) ** 2, axis=-1) / width**2, 0.0)

    lower = bump(c, w, rng.uniform(0.2, 1.0))
    upper = lower + bump(c + rng.uniform(-0.05, 0.05, d) * L, w + rng.uniform(0.07, 0.2) * L,
                         rng.uniform(0.05, 0.5))
    return ScalarField(grid, lower), ScalarField(grid, upper), phi


def _comparison(cfg: ExperimentConfig, out: Path):
    grid = cfg.make_grid()
    rng = np.random.default_rng(cfg.seed)
    config = cfg.solver_config()
    rows, reports = [], []
    worst = 0.0
    for i in range(cfg.options["pairs"]):
        lo, hi, phi = random_ordered_pair(grid, rng)
        rep = comparison_experiment(lo, hi, phi, config)
        rel = rep.max_violation / float(hi.values.max())
        worst = max(worst, rel)
        first = np.nan if rep.first_violation_time is None else rep.first_violation_time
        rows.append((i, rep.max_violation, rel, rep.strictly_separated, first))
        reports.append({**rep.to_dict(), "relative_violation": rel, "potential": phi.to_dict()})
    files = [emit_csv(("pair", "max_violation", "relative_violation", "strictly_separated",
                       "first_violation_time"), rows, out / "ordering.csv")]
    summary = {"pairs": reports, "worst_relative_violation": worst, "tol": ORDER_TOL}
    ok = worst <= ORDER_TOL and not any(r["halted"] for r in reports)
    return files, summary, bool(ok)


def _convergence(cfg: ExperimentConfig, out: Path):
    grid, phi = cfg.make_grid(), cfg.make_potential()
    rho0 = build_initial(cfg.initial, grid, phi, cfg.m)
    opts = cfg.options
    rep = convergence_experiment(rho0, phi, cfg.solver_config(), opts["window"], opts["rate_expected"])
    files = [emit_csv(DISTANCE_HEADER, rep.rows(), out / "distances.csv")]
    files += write_trajectory(rep.trajectory, out / "trajectory")
    cons = conservation_report(rep.trajectory)
    summary = {**rep.to_dict(), "conservation": cons.to_dict()}
    tol = gridded_tol(grid.h)
    ok = cons.drift <= MASS_TOL and not cons.halted
    if rep.at_equilibrium:
        pass
    elif rep.rate_expected:
        fits = (rep.l1_fit, 0.98), (rep.fb_fit, 0.95)
        ok &= all(f is not None and f.alpha > 0 and f.r2 >= r2 for f, r2 in fits)
        ok &= bool(rep.sup_fb[-1] <= tol)
    else:
        ok &= bool(rep.hausdorff_fb[-1] <= tol)
    return files, summary, bool(ok)


def _classify(cfg: ExperimentConfig, out: Path):
    opts = cfg.options
    cand = dict(opts["candidate"])
    sol = from_descriptor(cand)
    dom = opts["domain"]
    domain = Domain(tuple(dom["lower"]), tuple(dom["upper"]), tuple(dom["times"]), dom["h"],
                    dom["radius"])
    rep = classify(sol, domain, cfg.make_potential(), opts["tol"])
    expect = opts["expect"]
    if expect is None:
        ok = rep.verdict != "inconclusive"
    elif expect == "not-supersolution":
        ok = not rep.supersolution
    elif expect == "not-subsolution":
        ok = not rep.subsolution
    elif expect in ("subsolution", "supersolution"):
        ok = getattr(rep, expect)
    else:
        ok = rep.verdict == expect
    return [], {"classification": rep.to_dict(), "expect": expect}, bool(ok)


def _touching(cfg: ExperimentConfig, out: Path):
    grid, phi = cfg.make_grid(), cfg.make_potential()
    opts = cfg.options
    solver = cfg.solver_config()
    if opts["source"] == "exact":
        init = cfg.initial
        if init["type"] != "barenblatt" or not phi.is_zero:
            raise ConfigError("config.options.source: exact touching runs need a barenblatt "
                              "initial state and a zero potential")
        sol = Barenblatt(BarenblattParams(init["tau"], init["C"], cfg.m, grid.d), init["center"])
        n_out = int(np.floor(solver.t_end / solver.dt_out + 1e-9))
        times = [k * solver.dt_out for k in range(n_out + 1)]
        if times[-1] < solver.t_end - 1e-12:
            times.append(solver.t_end)
        traj = Trajectory.from_exact(sol, grid, times)
    else:
        traj = evolve(build_initial(cfg.initial, grid, phi, cfg.m), phi, solver)
    if opts["perturb"] > 0:
        traj = perturbed(traj, opts["perturb"])
    reports = [touching_test(traj, phi, mode, opts["n"], cfg.seed, opts["tol"])
               for mode in opts["modes"]]
    rows = [(r.mode, r.descriptors, r.touched, r.skipped, r.violations,
             np.nan if r.worst_margin is None else r.worst_margin) for r in reports]
    files = [emit_csv(("mode", "descriptors", "touched", "skipped", "violations", "worst_margin"),
                      rows, out / "touching.csv")]
    if opts["perturb"] > 0:
        ok = any(r.violations > 0 for r in reports)
    else:
        ok = all(r.violations == 0 for r in reports)
    return files, {"reports": [r.to_dict() for r in reports], "perturb": opts["perturb"]}, ok


PIPELINES = {
    "simulate": _simulate,
    "barenblatt-oracle": _oracle,
    "comparison": _comparison,
    "convergence": _convergence,
    "classify": _classify,
    "touching": _touching,
}


def run_experiment(cfg: ExperimentConfig, out=None, seed: int | None = None) -> dict:
    """Run one experiment and write its manifest last.

    Pipeline errors do not propagate: they produce a manifest with
    ``status = "failed"`` and the error string.
    """
    if seed is not None:
        cfg = replace(cfg, seed=int(seed))
    out = Path(out if out is not None else cfg.output)
    cfg = replace(cfg, output=str(out))
    out.mkdir(parents=True, exist_ok=True)
    manifest = out / "manifest.json"
    if manifest.exists():
        manifest.unlink()
    start = time.perf_counter()
    status, error, files, summary, passed = "ok", None, [], {}, False
    try:
        files, summary, passed = PIPELINES[cfg.kind](cfg, out)
    except Exception as exc:  # recorded in the failed-run manifest
        log.exception("experiment %s failed", cfg.kind)
        status, error = "failed", f"{type(exc).__name__}: {exc}"
        passed = False
    data = {
        "tool": "pmdrift",
        "version": __version__,
        "config": cfg.to_dict(),
        "status": status,
        "error": error,
        "files": file_entries(out, files),
        "summary": summary,
        "passed": bool(passed),
        "wall_clock_s": time.perf_counter() - start,
    }
    emit_manifest(data, manifest)
    return data


def _run_job(args):
    cfg, out, seed = args
    return run_experiment(cfg, out, seed)
