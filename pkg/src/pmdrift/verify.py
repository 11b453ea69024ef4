"""Numerical checks: residuals, sub/supersolution classification, touching tests,
ordering experiments, convergence to equilibrium and mass conservation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .exact import Equilibrium, EquilibriumProfile, ExactSolution, as_points, solve_mass_constant
from .field import DENSITY, PRESSURE, Grid, ScalarField, density_values, lp_distance, mass
from .freeboundary import (
    RateFit,
    default_threshold,
    extract_boundary,
    fit_exponential_rate,
    hausdorff_distance,
    normal_velocity_estimate,
    sup_distance,
)
from .potential import Potential
from .solver import SolverConfig, Trajectory, evolve, evolve_lockstep

ANALYTIC = "analytic"
FINITE_DIFFERENCE = "finite-difference"
ANALYTIC_TOL = 1e-10
VERDICTS = ("subsolution", "supersolution", "solution", "neither", "inconclusive")


def gridded_tol(h: float) -> float:
    return 5.0 * h


def _stats(values) -> dict:
    v = np.asarray(values, dtype=float)
    if not v.size:
        return {"count": 0, "min": None, "max": None, "mean_abs": None}
    return {"count": int(v.size), "min": float(v.min()), "max": float(v.max()),
            "mean_abs": float(np.mean(np.abs(v)))}


# residuals ----------------------------------------------------------------


@dataclass(frozen=True)
class ResidualSample:
    """r = u_t - (m-1) u Lap u - |grad u|^2 - grad u . grad Phi - (m-1) u Lap Phi."""

    x: np.ndarray
    t: float
    r: float
    provenance: str
    inconclusive: bool = False


def pressure_residual(u, u_t, grad, lap, gphi, lphi, m):
    """Pointwise residual of the pressure equation from precomputed derivatives."""
    return (u_t - (m - 1) * u * lap - np.sum(grad**2, axis=-1)
            - np.sum(grad * gphi, axis=-1) - (m - 1) * u * lphi)


def _values(sol, x, t):
    if getattr(sol, "admissible", None) is not None:
        return sol.value(x, t, check=False)
    return sol.value(x, t)


def _exact_residual(sol: ExactSolution, phi: Potential, pts, times, margin):
    pts = as_points(pts, sol.d).reshape(-1, sol.d)
    times = np.broadcast_to(np.asarray(times, dtype=float), (len(pts),))
    out = []
    prov = ANALYTIC if type(sol).derivatives is not ExactSolution.derivatives else FINITE_DIFFERENCE
    for x, t in zip(pts, times):
        offs = np.concatenate([np.zeros((1, sol.d)), np.eye(sol.d), -np.eye(sol.d)]) * margin
        probe = x + offs if margin > 0 else x[None]
        # barriers with a bounded domain of definition: the stencil must stay inside it
        admissible = getattr(sol, "admissible", None)
        ok = admissible is None or bool(np.all(admissible(probe, t)))
        # the whole stencil neighbourhood must sit inside the positivity set
        ok = ok and bool(np.all(_values(sol, probe, t) > 0))
        if not ok:
            out.append(ResidualSample(x, float(t), float("nan"), prov, True))
            continue
        dv = sol.derivatives(x, t)
        prov = getattr(dv, "provenance", prov)
        r = pressure_residual(np.asarray(dv.u), np.asarray(dv.u_t), np.asarray(dv.grad),
                              np.asarray(dv.lap), phi.gradient(x), phi.laplacian(x), sol.m)
        out.append(ResidualSample(x, float(t), float(r), prov))
    return out


def _grid_derivatives(u: np.ndarray, h: float):
    """Centred gradient and 2d+1-point Laplacian; edges are left at zero."""
    d = u.ndim
    grad = np.zeros(u.shape + (d,))
    lap = np.zeros(u.shape)
    inner = (slice(1, -1),) * d
    for k in range(d):
        up = list(inner)
        dn = list(inner)
        up[k] = slice(2, None)
        dn[k] = slice(0, -2)
        grad[inner + (k,)] = (u[tuple(up)] - u[tuple(dn)]) / (2 * h)
        lap[inner] += (u[tuple(up)] - 2 * u[inner] + u[tuple(dn)]) / h**2
    return grad, lap


def _stencil_mask(pos: np.ndarray, width: int) -> np.ndarray:
    """Cells whose whole (2 width + 1)^d neighbourhood lies in ``pos``."""
    ok = pos.copy()
    for k in range(pos.ndim):
        for s in range(1, width + 1):
            for sgn in (1, -1):
                shifted = np.zeros_like(pos)
                src = [slice(None)] * pos.ndim
                dst = [slice(None)] * pos.ndim
                if sgn > 0:
                    src[k], dst[k] = slice(s, None), slice(None, -s)
                else:
                    src[k], dst[k] = slice(None, -s), slice(s, None)
                shifted[tuple(dst)] = pos[tuple(src)]
                ok &= shifted
    return ok


def _trajectory_residual(traj: Trajectory, phi: Potential, samples, width: int):
    h = traj.grid.h
    centers = traj.grid.centers()
    gphi = phi.gradient(centers)
    lphi = phi.laplacian(centers)
    U = traj.pressures()
    n = len(traj)
    if samples is None:
        samples = [(idx, k) for k in range(1, n - 1) for idx in np.ndindex(traj.grid.shape)]
    out = []
    cache = {}
    for idx, k in samples:
        idx = tuple(np.atleast_1d(idx))
        x = centers[idx]
        t = traj.times[k] if 0 <= k < n else float("nan")
        if not 1 <= k < n - 1:
            out.append(ResidualSample(x, t, float("nan"), FINITE_DIFFERENCE, True))
            continue
        if k not in cache:
            u = U[k]
            ok = np.ones(u.shape, dtype=bool)
            for j in (k - 1, k, k + 1):
                ok &= _stencil_mask(U[j] > default_threshold(U[j]), width)
            grad, lap = _grid_derivatives(u, h)
            u_t = (U[k + 1] - U[k - 1]) / (traj.times[k + 1] - traj.times[k - 1])
            cache = {k: (ok, u, u_t, grad, lap)}
        ok, u, u_t, grad, lap = cache[k]
        if not ok[idx]:
            out.append(ResidualSample(x, t, float("nan"), FINITE_DIFFERENCE, True))
            continue
        r = pressure_residual(u[idx], u_t[idx], grad[idx], lap[idx], gphi[idx], lphi[idx], traj.m)
        out.append(ResidualSample(x, t, float(r), FINITE_DIFFERENCE))
    return out


def pmed_residual(candidate, samples, phi: Potential | None = None, margin: float = 0.0,
                  width: int = 2) -> list[ResidualSample]:
    """Residual of the pressure equation with drift at each sample.

    Parameters
    ----------
    candidate : ExactSolution or Trajectory
        Exact solutions use their analytic derivatives. Trajectories use centred
        differences in space and centred snapshot differences in time.
    samples : array or list
        For exact solutions, ``(x, t)`` pairs given as an ``(n, d + 1)`` array.
        For trajectories, ``(cell index, snapshot index)`` pairs, or None for
        every interior cell of every interior snapshot.
    phi : Potential, optional
        Drift potential, zero by default.
    margin, width
        Distance (exact) or cell count (gridded) the stencil must keep from the
        free boundary. Samples failing it are returned as inconclusive.
    """
    if isinstance(candidate, Trajectory):
        phi = phi or Potential.zero(candidate.grid.d)
        return _trajectory_residual(candidate, phi, samples, width)
    phi = phi or Potential.zero(candidate.d)
    arr = np.asarray(samples, dtype=float).reshape(-1, candidate.d + 1)
    return _exact_residual(candidate, phi, arr[:, :-1], arr[:, -1], margin)


def residual_values(samples: list[ResidualSample]) -> np.ndarray:
    return np.array([s.r for s in samples if not s.inconclusive])


# classification -----------------------------------------------------------


@dataclass(frozen=True)
class Domain:
    """Space-time sampling region: a box (optionally cut to a ball) and times."""

    lower: tuple
    upper: tuple
    times: tuple
    h: float = 0.01
    radius: float | None = None

    def points(self) -> np.ndarray:
        grid = Grid.from_spacing(self.lower, self.upper, self.h)
        pts = grid.centers().reshape(-1, grid.d)
        if self.radius is not None:
            pts = pts[np.linalg.norm(pts, axis=-1) <= self.radius]
        return pts


@dataclass(frozen=True)
class ClassificationReport:
    verdict: str
    interior: dict
    front: dict
    tol: float
    skipped_front: int = 0
    inconclusive: int = 0

    @property
    def subsolution(self) -> bool:
        return self.verdict in ("subsolution", "solution")

    @property
    def supersolution(self) -> bool:
        return self.verdict in ("supersolution", "solution")

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "interior": self.interior, "front": self.front,
                "tol": self.tol, "skipped_front": self.skipped_front,
                "inconclusive": self.inconclusive}


def _verdict(interior, front, tol) -> str:
    vals = np.concatenate([np.asarray(interior, float), np.asarray(front, float)])
    if not vals.size:
        return "inconclusive"
    sub = bool(np.all(vals <= tol))
    sup = bool(np.all(vals >= -tol))
    if sub and sup:
        return "solution"
    return "subsolution" if sub else "supersolution" if sup else "neither"


def _front_excess_exact(sol: ExactSolution, phi: Potential, times):
    """V - |Du| - grad Phi . Du/|Du| at front points from the interior branch."""
    excess, skipped = [], 0
    for t in times:
        for p in np.atleast_2d(sol.front_points(t)):
            dv = sol.derivatives(p, t)
            if getattr(dv, "provenance", ANALYTIC) != ANALYTIC:
                # finite differences straddle the kink; step inside along Du
                g = np.asarray(dv.grad, float).reshape(-1)
                ng = np.linalg.norm(g)
                if ng == 0:
                    skipped += 1
                    continue
                dv = sol.derivatives(p + 1e-3 * g / ng, t)
            grad = np.asarray(dv.grad, float).reshape(-1)
            ng = float(np.linalg.norm(grad))
            if ng == 0 or not np.isfinite(ng):
                skipped += 1
                continue
            V = float(dv.u_t) / ng
            excess.append(V - ng - float(phi.gradient(p) @ grad) / ng)
    return excess, skipped


def _front_excess_gridded(traj: Trajectory, phi: Potential):
    excess, skipped = [], 0
    for k in range(1, len(traj) - 1):
        u = ScalarField(traj.grid, traj.pressure(k), PRESSURE)
        bs = extract_boundary(u, t=traj.times[k], check=False)
        for p in bs.points:
            est = normal_velocity_estimate(traj, p, k, phi)
            if est is None:
                skipped += 1
                continue
            excess.append(est.measured - est.theoretical)
    return excess, skipped


def classify(candidate, domain: Domain | None = None, phi: Potential | None = None,
             tol: float | None = None) -> ClassificationReport:
    """Sub/supersolution verdict from interior residuals and front velocities.

    Subsolution: residual <= tol at every conclusive sample and front speed
    V <= |Du| + grad Phi . Du/|Du| + tol. Supersolution reverses both. Exact
    candidates need a ``domain``; trajectories are sampled on their own grid.
    Default tolerances are 1e-10 for analytic derivatives and 5h on grids.
    """
    if isinstance(candidate, Trajectory):
        phi = phi or Potential.zero(candidate.grid.d)
        tol = gridded_tol(candidate.grid.h) if tol is None else tol
        res = pmed_residual(candidate, None, phi)
        front, skipped = _front_excess_gridded(candidate, phi)
    else:
        if domain is None:
            raise ValueError("exact candidates need a sampling domain")
        phi = phi or Potential.zero(candidate.d)
        pts = domain.points()
        samples = np.concatenate(
            [np.column_stack([pts, np.full(len(pts), t)]) for t in domain.times])
        res = pmed_residual(candidate, samples, phi)
        front, skipped = _front_excess_exact(candidate, phi, domain.times)
        if tol is None:
            analytic = all(s.provenance == ANALYTIC for s in res if not s.inconclusive)
            tol = ANALYTIC_TOL if analytic else gridded_tol(domain.h)
    interior = residual_values(res)
    return ClassificationReport(
        verdict=_verdict(interior, front, tol),
        interior=_stats(interior),
        front=_stats(front),
        tol=float(tol),
        skipped_front=skipped,
        inconclusive=sum(s.inconclusive for s in res),
    )


# touching tests -----------------------------------------------------------


@dataclass(frozen=True)
class QuadraticTest:
    """phi(x,t) = a + p.(x-x0) + (x-x0)^T M (x-x0)/2 + q (t - t0)."""

    x0: np.ndarray
    t0: float
    a: float
    p: np.ndarray
    M: np.ndarray
    q: float

    def value(self, x, t):
        y = np.asarray(x, float) - self.x0
        quad = 0.5 * np.einsum("...i,ij,...j->...", y, self.M, y)
        return self.a + y @ self.p + quad + self.q * (np.asarray(t, float) - self.t0)

    def margin(self, phi: Potential, m: float) -> float:
        """RHS - phi_t with RHS = (m-1) a Lap phi + |p|^2 + p.grad Phi + (m-1) a Lap Phi."""
        rhs = ((m - 1) * self.a * np.trace(self.M) + self.p @ self.p
               + self.p @ phi.gradient(self.x0) + (m - 1) * self.a * float(phi.laplacian(self.x0)))
        return float(rhs - self.q)


@dataclass(frozen=True)
class TouchingReport:
    mode: str
    descriptors: int
    touched: int
    skipped: int
    violations: int
    worst_margin: float | None
    tol: float

    def to_dict(self) -> dict:
        return {"mode": self.mode, "descriptors": self.descriptors, "touched": self.touched,
                "skipped": self.skipped, "violations": self.violations,
                "worst_margin": self.worst_margin, "tol": self.tol}


def _window(shape, idx, s):
    return tuple(slice(i - s, i + s + 1) for i in idx)


def _touch_q(U, times, centers, k, idx, a, p, M, s, mode):
    """Extremal q making phi - u one-signed on the past window, or None."""
    win = _window(U.shape[1:], idx, s)
    y = centers[win] - centers[idx]
    shape_part = a + y @ p + 0.5 * np.einsum("...i,ij,...j->...", y, M, y)
    g_now = U[k][win] - shape_part
    sign = 1.0 if mode == "above" else -1.0
    # at t0 the spatial part alone must already be one-signed
    if np.any(sign * g_now > 1e-14 * max(1.0, abs(a))):
        return None
    bounds = []
    for j in range(max(k - s, 0), k):
        g = U[j][win] - shape_part
        bounds.append(g / (times[j] - times[k]))
    if not bounds:
        return None
    b = np.stack(bounds)
    # above: q (t - t0) >= g for t < t0  =>  q <= g / (t - t0)
    return float(b.min()) if mode == "above" else float(b.max())


def touching_test(traj: Trajectory, phi: Potential | None = None, mode: str = "above",
                  n: int = 200, seed: int = 0, tol: float | None = None,
                  windows=(2, 3)) -> TouchingReport:
    """Discrete viscosity test with random space-time quadratics.

    Each descriptor anchors at a random interior cell and snapshot, takes p and
    M from the discrete gradient and Hessian (M shifted by a random multiple of
    the identity toward the touching side) and picks the extremal q for which
    phi - u is one-signed over a space-time window reaching back in time. A
    violation is reported only if every window size in ``windows`` violates.
    """
    if mode not in ("above", "below"):
        raise ValueError("mode must be 'above' or 'below'")
    phi = phi or Potential.zero(traj.grid.d)
    grid = traj.grid
    h, d = grid.h, grid.d
    tol = gridded_tol(h) if tol is None else tol
    smax = max(windows)
    U = traj.pressures()
    times = np.asarray(traj.times)
    centers = grid.centers()
    rng = np.random.default_rng(seed)
    sign = 1.0 if mode == "above" else -1.0

    candidates = []
    for k in range(smax, len(traj)):
        ok = _stencil_mask(U[k] > default_threshold(U[k]), smax + 1)
        for j in range(k - smax, k):
            ok &= _stencil_mask(U[j] > 0, smax + 1)
        candidates.extend((k, tuple(i)) for i in np.argwhere(ok))
    if not candidates:
        return TouchingReport(mode, n, 0, n, 0, None, float(tol))

    touched = skipped = violations = 0
    worst = None
    eye = np.eye(d)
    for _ in range(n):
        k, idx = candidates[rng.integers(len(candidates))]
        kappa = rng.uniform(0.0, 2.0)
        slack = rng.uniform(0.0, 0.5 * tol)
        u = U[k]
        a = float(u[idx])
        p = np.zeros(d)
        H = np.zeros((d, d))
        for i in range(d):
            e = np.array(idx)
            e[i] += 1
            w = np.array(idx)
            w[i] -= 1
            p[i] = (u[tuple(e)] - u[tuple(w)]) / (2 * h)
            H[i, i] = (u[tuple(e)] - 2 * a + u[tuple(w)]) / h**2
            for j in range(i + 1, d):
                def at(di, dj):
                    c = np.array(idx)
                    c[i] += di
                    c[j] += dj
                    return u[tuple(c)]
                H[i, j] = H[j, i] = (at(1, 1) - at(1, -1) - at(-1, 1) + at(-1, -1)) / (4 * h * h)
        M = H + sign * kappa * eye
        margins = []
        for s in windows:
            q = _touch_q(U, times, centers, k, idx, a, p, M, s, mode)
            if q is None:
                margins = None
                break
            q -= sign * slack
            test = QuadraticTest(centers[idx], float(times[k]), a, p, M, q)
            margins.append(sign * test.margin(phi, traj.m))
        if margins is None:
            skipped += 1
            continue
        touched += 1
        m_all = max(margins)
        worst = m_all if worst is None else min(worst, m_all)
        if all(mg < -tol for mg in margins):
            violations += 1
    return TouchingReport(mode, n, touched, skipped, violations, worst, float(tol))


# ordering -----------------------------------------------------------------


@dataclass(frozen=True)
class OrderingReport:
    max_violation: float
    first_violation_time: float | None
    separation_margin: float
    strictly_separated: bool
    halted: bool = False

    def to_dict(self) -> dict:
        return {"max_violation": self.max_violation,
                "first_violation_time": self.first_violation_time,
                "separation_margin": self.separation_margin,
                "strictly_separated": self.strictly_separated, "halted": self.halted}


def strictly_separated(lo: np.ndarray, hi: np.ndarray) -> bool:
    """supp(lo) inside the interior of supp(hi) and lo < hi on supp(lo)."""
    supp = lo > 0
    if not supp.any():
        return True
    inner = _stencil_mask(hi > 0, 1)
    return bool(np.all(inner[supp]) and np.all(lo[supp] < hi[supp]))


def comparison_experiment(rho0: ScalarField, rho0p: ScalarField, phi: Potential,
                          config: SolverConfig, report_tol: float = 0.0) -> OrderingReport:
    """Evolve ordered data with a shared step and measure max (rho - rho')_+."""
    if rho0.grid != rho0p.grid:
        raise ValueError("initial data live on different grids")
    a, b = rho0.values, rho0p.values
    if np.any(a > b):
        raise ValueError(f"initial data are not ordered (max excess {float(np.max(a - b)):.3e})")
    supp = a > 0
    margin = float(np.min(b[supp] - a[supp])) if supp.any() else float(np.min(b))
    lo, hi = evolve_lockstep([rho0, rho0p], phi, config)
    worst, first = 0.0, None
    for t, r, rp in zip(lo.times, lo.snapshots, hi.snapshots):
        v = float(np.max(r.values - rp.values))
        if v > report_tol and first is None:
            first = t
        worst = max(worst, v)
    return OrderingReport(worst, first, margin, strictly_separated(a, b), lo.halted or hi.halted)


# convergence --------------------------------------------------------------


@dataclass
class ConvergenceReport:
    C0: float
    times: np.ndarray
    l1: np.ndarray
    sup_fb: np.ndarray
    hausdorff_fb: np.ndarray
    l1_fit: RateFit | None
    fb_fit: RateFit | None
    final_uniform: float
    at_equilibrium: bool
    rate_expected: bool
    flagged: int
    h: float
    notes: list = field(default_factory=list)
    trajectory: Trajectory | None = field(default=None, repr=False)

    def rows(self) -> list[tuple]:
        return list(zip(self.times, self.l1, self.sup_fb, self.hausdorff_fb))

    def to_dict(self) -> dict:
        return {
            "C0": self.C0,
            "l1_fit": None if self.l1_fit is None else self.l1_fit.to_dict(),
            "fb_fit": None if self.fb_fit is None else self.fb_fit.to_dict(),
            "final_uniform": self.final_uniform,
            "final_sup_fb": float(self.sup_fb[-1]),
            "final_hausdorff_fb": float(self.hausdorff_fb[-1]),
            "at_equilibrium": self.at_equilibrium,
            "rate_expected": self.rate_expected,
            "flagged_snapshots": self.flagged,
            "tol": gridded_tol(self.h),
            "notes": list(self.notes),
        }


def _safe_fit(t, d, window, label, notes):
    try:
        return fit_exponential_rate(t, d, window)
    except ValueError as exc:
        notes.append(f"{label} fit skipped: {exc}")
        return None


def convergence_experiment(rho0: ScalarField, phi: Potential, config: SolverConfig,
                           window=None, rate_expected: bool | None = None) -> ConvergenceReport:
    """Relaxation toward the mass-matched equilibrium (C0 - Phi)_+.

    The target interface is extracted from the equilibrium sampled on the same
    grid with the same relative threshold as the trajectory, so both sides of
    the distance carry the same discretisation. Rates are fitted only when
    ``rate_expected`` (default: convex potentials other than the smoothed cone).
    """
    grid = rho0.grid
    m = config.m
    m0 = mass(rho0)
    C0 = solve_mass_constant(phi, m, m0, grid)
    u_inf = Equilibrium(EquilibriumProfile(phi, C0, m)).sample(grid, 0.0, PRESSURE)
    rho_inf = ScalarField(grid, density_values(u_inf.values, m), DENSITY)
    gamma_inf = extract_boundary(u_inf, check=False)
    if rate_expected is None:
        meta = phi.metadata(grid.lower, grid.upper)
        rate_expected = phi.form != "cone" and meta.convex

    traj = evolve(rho0, phi, config)
    times = np.asarray(traj.times)
    l1, sup_fb, haus = [], [], []
    flagged = 0
    for k, rho in enumerate(traj.snapshots):
        l1.append(lp_distance(rho, rho_inf, 1))
        u = ScalarField(grid, traj.pressure(k), PRESSURE)
        bs = extract_boundary(u, t=times[k])
        flagged += bs.flagged
        if bs.empty or gamma_inf.empty:
            sup_fb.append(float("nan"))
            haus.append(float("nan"))
        else:
            sup_fb.append(sup_distance(bs, gamma_inf))
            haus.append(hausdorff_distance(bs, gamma_inf))
    l1, sup_fb, haus = map(np.asarray, (l1, sup_fb, haus))
    notes = []
    if traj.halted:
        notes.append(traj.halt_reason)
    at_eq = bool(np.max(l1) <= grid.h * m0)
    l1_fit = fb_fit = None
    if at_eq:
        notes.append("already at equilibrium")
    elif rate_expected:
        l1_fit = _safe_fit(times, l1, window, "L1", notes)
        fb_fit = _safe_fit(times, sup_fb, window, "free-boundary", notes)
    final = float(np.max(np.abs(traj.snapshots[-1].values - rho_inf.values)))
    return ConvergenceReport(C0, times, l1, sup_fb, haus, l1_fit, fb_fit, final, at_eq,
                             bool(rate_expected), flagged, grid.h, notes, traj)


# conservation -------------------------------------------------------------


@dataclass(frozen=True)
class ConservationReport:
    drift: float
    halted: bool
    reason: str = ""

    def to_dict(self) -> dict:
        return {"drift": self.drift, "halted": self.halted, "reason": self.reason, "tol": 1e-10}


def conservation_report(traj: Trajectory) -> ConservationReport:
    """max_k |mass_k - mass_0| / mass_0, with the solver's halt flag attached."""
    if not len(traj):
        raise ValueError("trajectory is empty")
    m = np.asarray(traj.mass, dtype=float)
    if m[0] == 0:
        raise ValueError("relative mass drift is undefined for zero initial mass")
    drift = float(np.max(np.abs(m - m[0])) / m[0])
    return ConservationReport(drift, bool(traj.halted), traj.halt_reason)
