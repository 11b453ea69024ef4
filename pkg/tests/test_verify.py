import numpy as np
import pytest

from pmdrift.exact import (
    Barenblatt,
    BarenblattParams,
    Equilibrium,
    EquilibriumProfile,
    TravelingWave,
    TravelingWaveParams,
    equilibrium_mass,
    solve_mass_constant,
)
from pmdrift.field import DENSITY, PRESSURE, Grid, ScalarField, density_values
from pmdrift.potential import Potential
from pmdrift.solver import SolverConfig, Trajectory, evolve
from pmdrift.verify import (
    ANALYTIC,
    FINITE_DIFFERENCE,
    Domain,
    QuadraticTest,
    classify,
    comparison_experiment,
    conservation_report,
    convergence_experiment,
    pmed_residual,
    residual_values,
    touching_test,
)

POTENTIALS = [
    Potential.quadratic(),
    Potential.quadratic(0.7, [0.2]),
    Potential.cone(1.0),
    Potential.polynomial([0.0, 0.0, 1.0, 0.0, 0.25]),
    Potential.anisotropic([[2.0, 0.5], [0.5, 1.0]]),
    Potential.quadratic(d=2),
]


def bump(grid, c=0.0, w=0.5, a=1.0):
    x = grid.centers()
    return ScalarField(grid, a * np.maximum(w**2 - np.sum((x - c) ** 2, axis=-1), 0.0), DENSITY)


def spacetime(pts, times):
    pts = np.atleast_2d(pts)
    return np.concatenate([np.column_stack([pts, np.full(len(pts), t)]) for t in times])


# residuals ----------------------------------------------------------------


@pytest.mark.parametrize("phi", POTENTIALS, ids=lambda p: f"{p.form}{p.d}")
def test_equilibrium_residual_vanishes(phi):
    sol = Equilibrium(EquilibriumProfile(phi, 1.0, 2.0))
    rng = np.random.default_rng(7)
    pts = rng.uniform(-1.2, 1.2, (4000, phi.d))
    pts = pts[phi.value(pts) < 0.9][:1000]
    assert len(pts) == 1000
    res = pmed_residual(sol, spacetime(pts, [0.0]), phi)
    assert all(s.provenance == ANALYTIC for s in res)
    assert np.max(np.abs(residual_values(res))) <= 1e-12


def test_barenblatt_residual_with_and_without_drift():
    sol = Barenblatt(BarenblattParams(1.0, 1.0, 2.0, 1))
    x = np.linspace(-1.5, 1.5, 31)[:, None]
    s = spacetime(x, [0.0, 0.5])
    assert np.max(np.abs(residual_values(pmed_residual(sol, s)))) <= 1e-12
    phi = Potential.quadratic()
    vals = residual_values(pmed_residual(sol, s, phi))
    dv = sol.derivatives(s[:, :1], s[:, 1])
    drift = dv.grad[:, 0] * 2 * s[:, 0] + dv.u * 2.0
    np.testing.assert_allclose(vals, -drift, atol=1e-12)
    assert np.max(np.abs(vals)) > 0.1


def test_samples_near_front_are_inconclusive():
    p = BarenblattParams(1.0, 1.0, 2.0, 1)
    sol = Barenblatt(p)
    r = float(p.radius(0.0))
    res = pmed_residual(sol, [[r - 1e-3, 0.0], [0.0, 0.0], [r + 1.0, 0.0]], margin=1e-2)
    assert [s.inconclusive for s in res] == [True, False, True]
    assert residual_values(res).size == 1


def test_gridded_residual_masks_front():
    p = BarenblattParams(1.0, 0.5, 2.0, 1)
    sol = Barenblatt(p)
    for h in (0.02, 0.01):
        g = Grid.from_spacing([-3], [3], h)
        traj = Trajectory.from_exact(sol, g, np.linspace(0, 0.5, 11))
        res = pmed_residual(traj, None)
        assert all(s.provenance == FINITE_DIFFERENCE for s in res)
        vals = residual_values(res)
        assert vals.size > 0
        # no conclusive sample within two cells of the front
        for s in res:
            if not s.inconclusive:
                assert abs(s.x[0]) < p.radius(s.t) - 2 * h
        # the snapshot spacing, not h, dominates this error
        assert np.max(np.abs(vals)) <= 5 * h


# classification -----------------------------------------------------------


def test_classify_barenblatt_is_solution():
    sol = Barenblatt(BarenblattParams(1.0, 1.0, 2.0, 2))
    rep = classify(sol, Domain((-3, -3), (3, 3), (0.0, 0.5, 1.0), h=0.1))
    assert rep.verdict == "solution" and rep.tol == 1e-10
    assert rep.subsolution and rep.supersolution
    assert rep.front["count"] > 0


def test_classify_traveling_waves():
    ok = TravelingWave(TravelingWaveParams(1.0, 2.0, 0.75, 1.0), d=1, m=2.0)
    t_lo, _ = ok.params.window()
    dom = Domain((-1,), (1,), tuple(np.linspace(0.9 * t_lo, 0, 4)), h=0.01, radius=1.0)
    assert classify(ok, dom).verdict in ("supersolution", "solution")
    bad = TravelingWave(TravelingWaveParams(1.0, 1.2, 0.75, 1.0), d=2, m=2.0)
    t_lo, _ = bad.params.window()
    dom = Domain((-1, -1), (1, 1), tuple(np.linspace(0.9 * t_lo, 0, 4)), h=0.05, radius=1.0)
    rep = classify(bad, dom)
    assert rep.tol == 1e-10
    assert not rep.supersolution


def test_classify_equilibrium_ignores_mass():
    phi = Potential.quadratic()
    grid = Grid.from_spacing([-3], [3], 1e-3)
    C0 = solve_mass_constant(phi, 2.0, 2 / 3, grid)
    dom = Domain((-2,), (2,), (0.0, 1.0), h=0.01)
    for C in (C0, C0 + 0.1):
        sol = Equilibrium(EquilibriumProfile(phi, C, 2.0))
        assert classify(sol, dom, phi).verdict == "solution"
    # the perturbed profile no longer carries the prescribed mass
    assert equilibrium_mass(phi, C0 + 0.1, 2.0, grid) - 2 / 3 > 0.05


def test_classify_requires_domain():
    with pytest.raises(ValueError):
        classify(Barenblatt(BarenblattParams(1.0, 1.0, 2.0, 1)))


# touching -----------------------------------------------------------------


def barenblatt_traj(perturb=None):
    sol = Barenblatt(BarenblattParams(1.0, 1.0, 2.0, 1))
    g = Grid.from_spacing([-3], [3], 0.01)
    return Trajectory.from_exact(sol, g, np.linspace(0, 1, 51), perturb)


def test_quadratic_equal_to_solution_has_zero_margin():
    p = BarenblattParams(1.0, 1.0, 2.0, 2)
    sol = Barenblatt(p)
    x0, t0 = np.array([0.3, -0.2]), 0.4
    dv = sol.derivatives(x0, t0)
    M = -2 * p.K / (t0 + p.tau) * np.eye(2)
    test = QuadraticTest(x0, t0, float(dv.u), np.asarray(dv.grad), M, float(dv.u_t))
    assert abs(test.margin(Potential.zero(2), 2.0)) <= 1e-10
    assert test.value(x0, t0) == pytest.approx(float(dv.u))


@pytest.mark.parametrize("mode", ["above", "below"])
def test_touching_exact_barenblatt_has_no_violations(mode):
    rep = touching_test(barenblatt_traj(), mode=mode, n=200, seed=1)
    assert rep.tol == pytest.approx(0.05)
    assert rep.touched > 100
    assert rep.violations == 0


def test_touching_detects_perturbed_solution():
    c = 0.5
    rep = touching_test(barenblatt_traj(lambda u, t: u + c * t * (u > 0)), mode="above", n=200, seed=1)
    assert rep.violations > 0
    assert rep.worst_margin <= -0.5 * c


def test_touching_rejects_bad_mode():
    with pytest.raises(ValueError):
        touching_test(barenblatt_traj(), mode="sideways")


# comparison ---------------------------------------------------------------


def test_comparison_zero_and_nested_barenblatts():
    g = Grid.from_spacing([-6], [6], 0.04)
    cfg = SolverConfig(2.0, 1.0, 0.1)
    phi0 = Potential.zero(1)
    hi = Barenblatt(BarenblattParams(1.0, 1.0, 2.0, 1)).sample(g, 0.0, DENSITY)
    zero = ScalarField(g, np.zeros(g.shape), DENSITY)
    assert comparison_experiment(zero, hi, phi0, cfg).max_violation == 0.0
    lo = Barenblatt(BarenblattParams(1.0, 0.5, 2.0, 1)).sample(g, 0.0, DENSITY)
    rep = comparison_experiment(lo, hi, phi0, cfg)
    assert rep.max_violation <= 1e-8 * hi.values.max()
    assert rep.strictly_separated and rep.separation_margin > 0
    with pytest.raises(ValueError, match="not ordered"):
        comparison_experiment(hi, lo, phi0, cfg)


def test_comparison_bump_on_64_cells():
    g = Grid((-2.0,), (2.0,), (64,))
    rho0 = bump(g, w=0.8)
    rho0p = ScalarField(g, rho0.values + 0.3 * bump(g, c=0.1, w=0.3).values, DENSITY)
    rep = comparison_experiment(rho0, rho0p, Potential.quadratic(), SolverConfig(2.0, 1.0, 0.1))
    assert rep.max_violation <= 1e-8 * rho0p.values.max()
    assert not rep.strictly_separated


# convergence --------------------------------------------------------------


def test_convergence_from_equilibrium_is_flagged():
    phi = Potential.quadratic()
    g = Grid.from_spacing([-2], [2], 0.02)
    u = Equilibrium(EquilibriumProfile(phi, 1.0, 2.0)).sample(g, 0.0, PRESSURE).values
    rho = ScalarField(g, density_values(u, 2.0), DENSITY)
    rep = convergence_experiment(rho, phi, SolverConfig(2.0, 1.0, 0.1))
    assert rep.at_equilibrium and "already at equilibrium" in rep.notes
    assert rep.l1_fit is None
    assert np.all(rep.l1 <= g.h)
    assert len(rep.l1) == len(rep.trajectory)


def test_convergence_short_run_report_shape():
    phi = Potential.quadratic()
    g = Grid.from_spacing([-3], [3], 0.02)
    rep = convergence_experiment(bump(g, c=0.4, w=0.5), phi, SolverConfig(2.0, 2.0, 0.1))
    assert len(rep.times) == len(rep.l1) == len(rep.sup_fb) == 21
    assert rep.l1_fit is not None and rep.l1_fit.alpha > 0
    d = rep.to_dict()
    assert d["tol"] == pytest.approx(0.1) and d["rate_expected"]


# conservation -------------------------------------------------------------


def test_conservation_report_examples():
    g = Grid.from_spacing([-1], [1], 0.1)
    traj = Trajectory(g, 2.0)
    base = np.zeros(20)
    base[10] = 10.0  # mass 1.0
    traj.record(0.0, base)
    traj.record(1.0, base * 1.01)
    assert conservation_report(traj).drift == pytest.approx(0.01)
    empty = Trajectory(g, 2.0)
    empty.record(0.0, np.zeros(20))
    with pytest.raises(ValueError):
        conservation_report(empty)


def test_conservation_report_carries_halt_flag():
    g = Grid.from_spacing([-1], [1], 0.02)
    with pytest.warns(UserWarning):
        traj = evolve(bump(g, w=0.7, a=2.0), Potential.zero(1), SolverConfig(2.0, 5.0, 0.1, margin=0.0))
    rep = conservation_report(traj)
    assert rep.halted and "guard band" in rep.reason
    traj = evolve(bump(g, w=0.3), Potential.quadratic(), SolverConfig(2.0, 0.5, 0.1))
    assert conservation_report(traj).drift <= 1e-10
