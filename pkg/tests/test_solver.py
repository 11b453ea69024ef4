import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pmdrift.exact import Barenblatt, BarenblattParams, Equilibrium, EquilibriumProfile
from pmdrift.field import DENSITY, PRESSURE, Grid, ScalarField, density_values, mass
from pmdrift.potential import Potential
from pmdrift.solver import (
    SolverConfig,
    SolverState,
    Trajectory,
    cfl_dt,
    evolve,
    evolve_lockstep,
    flux_divergence,
    step,
)


def bump(grid, c=0.0, w=0.5, a=1.0):
    x = grid.centers()
    r2 = np.sum((x - c) ** 2, axis=-1)
    return ScalarField(grid, a * np.maximum(w**2 - r2, 0.0), DENSITY)


def equilibrium_density(grid, phi, C=1.0, m=2.0):
    u = Equilibrium(EquilibriumProfile(phi, C, m)).sample(grid, 0.0, PRESSURE).values
    return ScalarField(grid, density_values(u, m), DENSITY)


# configuration ------------------------------------------------------------


@pytest.mark.parametrize("kw", [dict(cfl=0.6), dict(cfl=0.0), dict(t_end=0.0), dict(dt_out=-1.0),
                                dict(floor=-1e-3), dict(flux="central"), dict(m=1.0)])
def test_config_rejects_invalid(kw):
    base = dict(m=2.0, t_end=1.0, dt_out=0.1)
    base.update(kw)
    with pytest.raises(ValueError):
        SolverConfig(**base)


# flux divergence ----------------------------------------------------------


@pytest.mark.parametrize("flux", ["balanced", "split"])
def test_constant_state_without_drift_is_steady(flux):
    g = Grid.from_spacing([-1, -1], [1, 1], 0.1)
    rho = ScalarField(g, np.full(g.shape, 0.7))
    assert np.all(flux_divergence(rho, Potential.zero(2), 2.0, flux) == 0)


@settings(max_examples=40, deadline=None)
@given(arrays(float, 24, elements=st.floats(0, 10)), st.sampled_from([1.5, 2.0, 3.0]),
       st.sampled_from(["balanced", "split"]))
def test_divergence_sums_to_zero(vals, m, flux):
    g = Grid.from_spacing([-1.2], [1.2], 0.1)
    div = flux_divergence(ScalarField(g, vals), Potential.quadratic(), m, flux)
    assert abs(np.sum(div) * g.cell_volume) <= 1e-12 * max(1.0, np.max(np.abs(div)))


def test_equilibrium_residual_is_small():
    phi = Potential.quadratic()
    # the balanced flux keeps the sampled profile exactly steady
    for h in (0.02, 0.01):
        g = Grid.from_spacing([-2], [2], h)
        div = flux_divergence(equilibrium_density(g, phi), phi, 2.0)
        assert np.max(np.abs(div)) <= 1e-12
    # the split flux leaves an O(h) residual on cells clear of the front
    res = []
    for h in (0.02, 0.01):
        g = Grid.from_spacing([-2], [2], h)
        div = flux_divergence(equilibrium_density(g, phi), phi, 2.0, "split")
        inner = np.abs(g.axis_centers(0)) < 1 - 2 * h
        res.append(np.max(np.abs(div[inner])))
        assert res[-1] <= 2 * h
    assert res[0] / res[1] == pytest.approx(2.0, rel=0.1)


def test_negative_input_rejected():
    g = Grid.from_spacing([-1], [1], 0.1)
    with pytest.raises(ValueError):
        flux_divergence(ScalarField(g, np.ones(20), PRESSURE), Potential.zero(1), 2.0)


# time step ----------------------------------------------------------------


def test_cfl_example():
    g = Grid.from_spacing([-1], [1], 0.01)
    rho = ScalarField(g, np.ones(g.shape))
    phi = Potential.polynomial([0.0, 2.0])  # |grad Phi| = 2 everywhere
    for flux in ("balanced", "split"):
        assert cfl_dt(rho, phi, 2.0, 0.4, flux) == pytest.approx(1e-5, rel=1e-12)


def test_cfl_degenerate_and_homogeneity():
    g = Grid.from_spacing([-1], [1], 0.01)
    dt = cfl_dt(ScalarField(g, np.zeros(g.shape)), Potential.zero(1), 2.0, 0.4)
    assert np.isfinite(dt) and dt > 1e20
    phi = Potential.zero(1)
    a = cfl_dt(ScalarField(g, np.ones(g.shape)), phi, 2.0, 0.4)
    b = cfl_dt(ScalarField(g, np.full(g.shape, 2.0)), phi, 2.0, 0.4)
    assert b == pytest.approx(a / 2)


# single steps -------------------------------------------------------------


def test_step_conserves_mass_and_rejects_large_dt():
    g = Grid.from_spacing([-2, -2], [2, 2], 0.05)
    phi = Potential.quadratic(d=2)
    rho = bump(g, c=[0.3, 0.0])
    cfg = SolverConfig(2.0, 1.0, 0.1)
    dt = cfl_dt(rho, phi, 2.0, cfg.cfl)
    state = SolverState(rho)
    for _ in range(20):
        state = step(state, dt, phi, cfg)
    assert mass(state.rho) == pytest.approx(mass(rho), rel=1e-13)
    assert state.t == pytest.approx(20 * dt) and state.step == 20
    with pytest.raises(ValueError, match="CFL"):
        step(state, 10 * dt, phi, cfg)


def test_zero_stays_zero_and_equilibrium_is_steady():
    g = Grid.from_spacing([-2], [2], 0.01)
    phi = Potential.quadratic()
    cfg = SolverConfig(2.0, 1.0, 0.1)
    z = step(SolverState(ScalarField(g, np.zeros(g.shape))), 1e-3, phi, cfg)
    assert np.all(z.rho.values == 0)
    rho = equilibrium_density(g, phi)
    dt = cfl_dt(rho, phi, 2.0, 0.4)
    new = step(SolverState(rho), dt, phi, cfg).rho
    assert np.max(np.abs(new.values - rho.values)) <= dt * g.h


# evolution ----------------------------------------------------------------


def test_margin_violation_rejected():
    g = Grid.from_spacing([-1], [1], 0.02)
    with pytest.raises(ValueError, match="away from the boundary"):
        evolve(bump(g, c=0.6, w=0.3), Potential.zero(1), SolverConfig(2.0, 0.1, 0.05))


def test_guard_band_halts_with_warning():
    g = Grid.from_spacing([-1], [1], 0.02)
    cfg = SolverConfig(2.0, 5.0, 0.1, margin=0.0)
    with pytest.warns(UserWarning, match="guard band"):
        tr = evolve(bump(g, w=0.7, a=2.0), Potential.zero(1), cfg)
    assert tr.halted and tr.times[-1] < 5.0


def test_snapshot_cadence_and_first_snapshot():
    g = Grid.from_spacing([-2], [2], 0.02)
    rho = bump(g)
    tr = evolve(rho, Potential.quadratic(), SolverConfig(2.0, 0.35, 0.1))
    assert tr.times == pytest.approx([0.0, 0.1, 0.2, 0.3, 0.35])
    assert np.all(np.diff(tr.times) > 0)
    assert tr.snapshots[0] == rho


@pytest.mark.parametrize("d,phi", [(1, Potential.quadratic()), (2, Potential.quadratic(d=2)),
                                   (2, Potential.cone(1.0, [0.0, 0.0]))])
def test_conservation_and_positivity(d, phi):
    g = Grid.from_spacing([-2] * d, [2] * d, 0.05)
    tr = evolve(bump(g, c=[0.3] + [0.0] * (d - 1), w=0.6), phi, SolverConfig(2.0, 0.5, 0.1))
    m = np.array(tr.mass)
    assert np.max(np.abs(m - m[0])) / m[0] <= 1e-10
    assert min(s.values.min() for s in tr.snapshots) >= 0


def test_barenblatt_convergence_away_from_front():
    p = BarenblattParams(1.0, 0.1, 2.0, 1)
    sol = Barenblatt(p)
    errs = []
    for h in (0.02, 0.01):
        g = Grid.from_spacing([-2], [2], h)
        tr = evolve(sol.sample(g, 0.0, DENSITY), Potential.zero(1), SolverConfig(2.0, 1.0, 0.5))
        band = np.abs(g.axis_centers(0)) < 0.8 * p.radius(1.0)
        errs.append(np.max(np.abs(tr.pressure(-1) - sol.sample(g, 1.0).values)[band]))
    assert errs[0] / errs[1] >= 1.7


def test_equilibrium_run_stays_close():
    g = Grid.from_spacing([-2], [2], 0.02)
    phi = Potential.quadratic()
    rho = equilibrium_density(g, phi)
    tr = evolve(rho, phi, SolverConfig(2.0, 1.0, 0.25))
    for s in tr.snapshots:
        assert np.max(np.abs(s.values - rho.values)) <= g.h


def test_finite_propagation_bound():
    g = Grid.from_spacing([-3], [3], 0.02)
    phi = Potential.quadratic()
    rho = bump(g, c=0.4, w=0.5)
    tr = evolve(rho, phi, SolverConfig(2.0, 2.0, 0.1))
    # (C - Phi)_+ dominates u0 once C >= max(u0 + Phi) on the support
    u0 = 2.0 * rho.values
    x = g.axis_centers(0)
    C = np.max((u0 + x**2)[u0 > 0])
    assert max(tr.support_radius) <= np.sqrt(C) + g.h


def test_lockstep_ordering():
    g = Grid.from_spacing([-2], [2], 0.02)
    phi = Potential.quadratic()
    lo, hi = bump(g, w=0.4), bump(g, w=0.6, a=1.5)
    assert np.all(lo.values <= hi.values)
    a, b = evolve_lockstep([lo, hi], phi, SolverConfig(2.0, 1.0, 0.1))
    assert a.times == b.times
    tol = 1e-8 * hi.values.max()
    for s, t in zip(a.snapshots, b.snapshots):
        assert np.all(s.values <= t.values + tol)
    with pytest.raises(ValueError):
        evolve_lockstep([lo, bump(Grid.from_spacing([-2], [2], 0.01))], phi, SolverConfig(2.0, 1.0, 0.1))


def test_trajectory_rejects_non_increasing_times():
    g = Grid.from_spacing([-1], [1], 0.1)
    tr = Trajectory(g, 2.0)
    tr.record(0.0, np.zeros(20))
    with pytest.raises(ValueError):
        tr.record(0.0, np.zeros(20))
