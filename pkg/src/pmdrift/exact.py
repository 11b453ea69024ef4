"""Closed-form solutions and barriers of the pressure equation.

Every solution here is expressed in the pressure variable and evaluates on
points of shape ``(..., d)`` (a bare scalar or 1-d array is accepted when
``d == 1``). ``derivatives`` returns the smooth branch inside the positivity
set; callers decide where that branch is meaningful.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .field import DENSITY, PRESSURE, Grid, ScalarField, check_exponent, density_values
from .potential import Potential


class Derivatives(NamedTuple):
    u: np.ndarray
    u_t: np.ndarray
    grad: np.ndarray
    lap: np.ndarray
    provenance: str = "analytic"


def as_points(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
        x = x[..., None]
    if x.shape[-1] != d:
        raise ValueError(f"points must have trailing dimension {d}, got shape {x.shape}")
    return x


class ExactSolution:
    """Base class: subclasses provide ``value``, ``derivatives`` and ``to_dict``."""

    d: int
    m: float

    def value(self, x, t) -> np.ndarray:
        raise NotImplementedError

    def derivatives(self, x, t) -> Derivatives:
        return fd_derivatives(self, x, t)

    def positive(self, x, t) -> np.ndarray:
        return self.value(x, t) > 0

    def center(self, t) -> np.ndarray:
        return np.zeros(self.d)

    def front_points(self, t, n: int = 16, rmax: float = 10.0) -> np.ndarray:
        return radial_front(self, t, n, rmax)

    def sample(self, grid: Grid, t: float, kind: str = PRESSURE) -> ScalarField:
        u = np.maximum(self.value(grid.centers(), t), 0.0)
        if kind == DENSITY:
            return ScalarField(grid, density_values(u, self.m), DENSITY)
        return ScalarField(grid, u, PRESSURE)

    def to_dict(self) -> dict:
        raise NotImplementedError


# Barenblatt ---------------------------------------------------------------


@dataclass(frozen=True)
class BarenblattParams:
    tau: float
    C: float
    m: float
    d: int

    def __post_init__(self):
        check_exponent(self.m)
        if self.tau <= 0 or self.C <= 0:
            raise ValueError("Barenblatt needs tau > 0 and C > 0")
        if self.d not in (1, 2):
            raise ValueError("d must be 1 or 2")

    @property
    def lam(self) -> float:
        return 1.0 / ((self.m - 1.0) * self.d + 2.0)

    @property
    def K(self) -> float:
        return self.lam / 2.0

    def radius(self, t) -> np.ndarray:
        return np.sqrt(self.C / self.K) * (np.asarray(t, dtype=float) + self.tau) ** self.lam


class Barenblatt(ExactSolution):
    """B(x,t) = (C (t+tau)^{2 lam} - K |x - c|^2)_+ / (t + tau)."""

    def __init__(self, params: BarenblattParams, center=None, K: float | None = None):
        self.params = params
        self.d = params.d
        self.m = params.m
        self.K = params.K if K is None else float(K)
        self._c = np.zeros(self.d) if center is None else np.atleast_1d(np.asarray(center, float))

    def center(self, t):
        return self._c

    def _check_time(self, t):
        s = np.asarray(t, dtype=float) + self.params.tau
        if np.any(s <= 0):
            raise ValueError("Barenblatt profile requires t + tau > 0")
        return s

    def raw(self, x, t):
        s = self._check_time(t)
        x = as_points(x, self.d) - self._c
        r2 = np.sum(x**2, axis=-1)
        return (self.params.C * s ** (2 * self.params.lam) - self.K * r2) / s

    def value(self, x, t):
        return np.maximum(self.raw(x, t), 0.0)

    def derivatives(self, x, t):
        p = self.params
        s = self._check_time(t)
        y = as_points(x, self.d) - self._c
        r2 = np.sum(y**2, axis=-1)
        u = (p.C * s ** (2 * p.lam) - self.K * r2) / s
        u_t = (2 * p.lam - 1.0) * p.C * s ** (2 * p.lam - 2) + self.K * r2 / s**2
        grad = -2.0 * self.K * y / np.asarray(s)[..., None]
        lap = np.broadcast_to(-2.0 * self.K * self.d / s, u.shape)
        return Derivatives(u, u_t, grad, lap)

    def front_points(self, t, n=16, rmax=None):
        r = float(self.params.radius(t))
        return self._c + r * _directions(self.d, n)

    def to_dict(self):
        p = self.params
        return {"type": "barenblatt", "tau": p.tau, "C": p.C, "m": p.m, "d": p.d,
                "center": self._c.tolist()}


def barenblatt_eval(p: BarenblattParams, x, t) -> np.ndarray:
    return Barenblatt(p).value(x, t)


def pme_residual_barenblatt(p: BarenblattParams, samples, t, K: float | None = None,
                            margin: float = 0.0) -> float:
    """Max |u_t - (m-1) u Lap u - |grad u|^2| over sample points at time ``t``.

    Samples must lie in the positivity set at distance at least ``margin`` from
    the free boundary. ``K`` overrides the profile constant, which breaks the
    identity and is useful as a negative control.
    """
    sol = Barenblatt(p, K=K)
    pts = as_points(samples, p.d)
    r = np.linalg.norm(pts, axis=-1)
    front = np.sqrt(p.C / sol.K) * (t + p.tau) ** p.lam
    if np.any(r > front - margin):
        raise ValueError("sample points must lie inside the positivity set")
    dv = sol.derivatives(pts, t)
    res = dv.u_t - (p.m - 1) * dv.u * dv.lap - np.sum(dv.grad**2, axis=-1)
    return float(np.max(np.abs(res)))


# traveling wave -----------------------------------------------------------


@dataclass(frozen=True)
class TravelingWaveParams:
    A: float
    omega: float
    B: float
    R: float

    def __post_init__(self):
        if self.A <= 0 or self.omega <= 0:
            raise ValueError("traveling wave needs A > 0 and omega > 0")
        if not (self.R / 2 < self.B < self.R):
            raise ValueError(f"need R/2 < B < R, got B={self.B}, R={self.R}")

    def threshold(self, m: float, d: int) -> float:
        return 1.0 + 2.0 * (m - 1.0) * (d - 1.0) * (self.R - self.B) / self.R

    def margin(self, m: float, d: int) -> float:
        return self.omega / self.A - self.threshold(m, d)

    def window(self) -> tuple[float, float]:
        # front inside |x| <= R for negative times
        return ((self.B - self.R) / self.omega, 0.0)


class TravelingWave(ExactSolution):
    """H(x,t) = A (|x| + omega t - B)_+ ; positive outside a shrinking ball."""

    def __init__(self, params: TravelingWaveParams, d: int = 1, m: float = 2.0):
        self.params = params
        self.d = d
        self.m = check_exponent(m)

    def raw(self, x, t):
        p = self.params
        r = np.linalg.norm(as_points(x, self.d), axis=-1)
        return p.A * (r + p.omega * np.asarray(t, float) - p.B)

    def value(self, x, t):
        return np.maximum(self.raw(x, t), 0.0)

    def derivatives(self, x, t):
        p = self.params
        y = as_points(x, self.d)
        r = np.linalg.norm(y, axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = y / r[..., None]
            lap = p.A * (self.d - 1) / r
        u = p.A * (r + p.omega * np.asarray(t, float) - p.B)
        u_t = np.broadcast_to(p.A * p.omega, u.shape).astype(float)
        return Derivatives(u, u_t, p.A * unit, lap)

    def front_points(self, t, n=16, rmax=None):
        p = self.params
        r = p.B - p.omega * t
        return max(r, 0.0) * _directions(self.d, n)

    def to_dict(self):
        p = self.params
        return {"type": "traveling_wave", "A": p.A, "omega": p.omega, "B": p.B, "R": p.R,
                "d": self.d, "m": self.m}


def traveling_wave_eval(p: TravelingWaveParams, x, t, d: int = 1) -> np.ndarray:
    return TravelingWave(p, d).value(x, t)


def traveling_wave_is_supersolution(p: TravelingWaveParams, m: float, d: int) -> tuple[bool, float]:
    """Sufficient condition omega/A > 1 + 2(m-1)(d-1)(R-B)/R, with its margin."""
    margin = p.margin(m, d)
    return bool(margin > 0), float(margin)


# equilibrium --------------------------------------------------------------


@dataclass(frozen=True)
class EquilibriumProfile:
    phi: Potential
    C0: float
    m: float

    def __post_init__(self):
        check_exponent(self.m)

    @property
    def degenerate(self) -> bool:
        return self.C0 <= float(self.phi.value(np.asarray(self.phi.minimizer)))


class Equilibrium(ExactSolution):
    """u_inf = (C0 - Phi)_+ ; stationary for the drift equation."""

    def __init__(self, profile: EquilibriumProfile):
        self.profile = profile
        self.phi = profile.phi
        self.d = profile.phi.d
        self.m = profile.m

    def center(self, t):
        return np.asarray(self.phi.minimizer)

    def value(self, x, t=0.0):
        return np.maximum(self.profile.C0 - self.phi.value(as_points(x, self.d)), 0.0)

    def derivatives(self, x, t=0.0):
        pts = as_points(x, self.d)
        u = self.profile.C0 - self.phi.value(pts)
        return Derivatives(u, np.zeros_like(u), -self.phi.gradient(pts), -self.phi.laplacian(pts))

    def to_dict(self):
        return {"type": "equilibrium", "C0": self.profile.C0, "m": self.m,
                "potential": self.phi.to_dict()}


def equilibrium_eval(e: EquilibriumProfile, grid: Grid) -> ScalarField:
    """Sample (C0 - Phi)_+ at cell centres; warns when C0 <= min Phi."""
    if e.degenerate:
        warnings.warn(f"C0={e.C0} does not exceed min Phi; equilibrium is identically zero",
                      stacklevel=2)
        return ScalarField(grid, np.zeros(grid.shape), PRESSURE)
    return Equilibrium(e).sample(grid, 0.0, PRESSURE)


def equilibrium_mass(phi: Potential, C: float, m: float, grid: Grid) -> float:
    u = np.maximum(C - phi.value(grid.centers()), 0.0)
    return float(np.sum(density_values(u, m)) * grid.cell_volume)


class BoxTooSmall(ValueError):
    pass


def solve_mass_constant(phi: Potential, m: float, m0: float, grid: Grid,
                        rtol: float = 1e-10, max_iter: int = 400) -> float:
    """Find C0 with mass((C0 - Phi)_+) = m0 on ``grid`` by bisection.

    The support {Phi < C0} must stay off the outermost ring of cells; otherwise
    :class:`BoxTooSmall` is raised.
    """
    m = check_exponent(m)
    if not m0 > 0:
        raise ValueError(f"target mass must be positive, got {m0}")
    vals = phi.value(grid.centers())
    edge = np.ones(grid.shape, dtype=bool)
    edge[(slice(1, -1),) * grid.d] = False
    lo = float(min(vals.min(), phi.value(np.asarray(phi.minimizer))))
    hi = float(vals[edge].min())

    def excess(C):
        u = np.maximum(C - vals, 0.0)
        return np.sum(density_values(u, m)) * grid.cell_volume - m0

    if excess(hi) < 0:
        raise BoxTooSmall(
            f"box too small: largest admissible support holds mass {excess(hi) + m0:.6g} < {m0:.6g}"
        )
    eps = np.finfo(float).eps
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        err = excess(mid)
        if abs(err) <= 1e-3 * rtol * m0 or hi - lo <= 4 * eps * max(abs(lo), abs(hi), 1e-300):
            return mid
        if err < 0:
            lo = mid
        else:
            hi = mid
    C = 0.5 * (lo + hi)
    if abs(excess(C)) > rtol * m0:
        raise RuntimeError("bisection for the mass constant did not converge")
    return C


# convolutions -------------------------------------------------------------


def ball_extremum(sol: ExactSolution, x, t, radius: float, mode: str, h: float) -> np.ndarray:
    """Sup or inf of ``sol(., t)`` over the closed ball B_radius(x).

    The ball is sampled at spacing at most h/2, plus the two points on the line
    through the solution's centre (the extremal candidates for radial profiles).
    """
    if radius < 0:
        raise ValueError(f"convolution radius must be nonnegative, got {radius}")
    if mode not in ("sup", "inf"):
        raise ValueError("mode must be 'sup' or 'inf'")
    pts = as_points(x, sol.d)
    flat = pts.reshape(-1, sol.d)
    offsets = _ball_offsets(sol.d, radius, h)
    c = sol.center(t)
    rel = flat - c
    r = np.linalg.norm(rel, axis=-1, keepdims=True)
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = np.where(r > 0, rel / r, 0.0)
    inward = c + unit * np.maximum(r - radius, 0.0)
    outward = flat + unit * radius
    cand = np.concatenate([flat[:, None, :] + offsets[None], inward[:, None], outward[:, None]], axis=1)
    vals = sol.value(cand, t)
    out = vals.max(axis=1) if mode == "sup" else vals.min(axis=1)
    return out.reshape(pts.shape[:-1])


def sup_convolution(sol: ExactSolution, alpha: float, t, x, h: float = 0.01) -> np.ndarray:
    """e^{-alpha t} sup_{B_{alpha - alpha t}(x)} u(., t)."""
    _check_alpha(alpha)
    return np.exp(-alpha * t) * ball_extremum(sol, x, t, alpha - alpha * t, "sup", h)


def inf_convolution(sol: ExactSolution, alpha: float, t, x, h: float = 0.01) -> np.ndarray:
    """e^{alpha t} inf_{B_{alpha - alpha t}(x)} u(., t)."""
    _check_alpha(alpha)
    return np.exp(alpha * t) * ball_extremum(sol, x, t, alpha - alpha * t, "inf", h)


def _check_alpha(alpha):
    if not 0 <= alpha < 1:
        raise ValueError(f"alpha must lie in [0, 1), got {alpha}")


class ConvolvedBarrier(ExactSolution):
    """alpha * Conv[base](alpha^{-1}(x - x0 + b (t - t0)), alpha^{-1}(t - t0)).

    ``Conv`` is the inf (``mode='inf'``) or sup convolution with rate ``rate``;
    ``rate = 0`` gives the plain hyperbolic rescaling in the drift frame.
    """

    def __init__(self, base: ExactSolution, mode: str, alpha: float, x0, t0: float,
                 drift, rate: float, h: float = 0.01):
        if not 0 < alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
        if mode not in ("sup", "inf"):
            raise ValueError("mode must be 'sup' or 'inf'")
        self.base, self.mode, self.alpha = base, mode, float(alpha)
        self.d, self.m = base.d, base.m
        self.x0 = np.atleast_1d(np.asarray(x0, float))
        self.t0 = float(t0)
        self.drift = np.atleast_1d(np.asarray(drift, float))
        self.rate = float(rate)
        self.h = h

    def _inner(self, x, t):
        dt = np.asarray(t, float) - self.t0
        y = (as_points(x, self.d) - self.x0 + self.drift * dt[..., None]) / self.alpha
        return y, dt / self.alpha

    def admissible(self, x, t) -> np.ndarray:
        """Membership in Q_alpha = B_alpha(x0) x [t0 - alpha, t0]."""
        pts = as_points(x, self.d)
        inside = np.linalg.norm(pts - self.x0, axis=-1) <= self.alpha + 1e-12
        t = np.asarray(t, float)
        return inside & (t >= self.t0 - self.alpha - 1e-12) & (t <= self.t0 + 1e-12)

    def value(self, x, t, check: bool = True):
        if check and not np.all(self.admissible(x, t)):
            raise ValueError("evaluation outside Q_alpha")
        y, s = self._inner(x, t)
        if self.rate == 0:
            return self.alpha * self.base.value(y, s)
        s = np.broadcast_to(s, y.shape[:-1])
        inner = np.empty(s.shape)
        sign = 1.0 if self.mode == "inf" else -1.0
        # the ball radius depends on time only, so group points by time
        for sv in np.unique(s):
            sel = s == sv
            radius = self.rate - self.rate * float(sv)
            ext = ball_extremum(self.base, y[sel], float(sv), radius, self.mode, self.h / self.alpha)
            inner[sel] = np.exp(sign * self.rate * sv) * ext
        return self.alpha * inner

    def derivatives(self, x, t):
        return fd_derivatives(lambda p, s: self.value(p, s, check=False), x, t, self.d)

    def center(self, t):
        return self.x0 - self.drift * (t - self.t0) + self.alpha * self.base.center(0.0)

    def front_velocity(self, direction) -> float:
        """Outward normal speed omega + b . n + rate, for a traveling-wave base."""
        if not isinstance(self.base, TravelingWave):
            raise TypeError("closed-form front velocity is available for traveling waves only")
        n = np.atleast_1d(np.asarray(direction, float))
        n = n / np.linalg.norm(n)
        return float(self.base.params.omega + self.drift @ n + self.rate)

    def front_points(self, t, n=16, rmax=None):
        return radial_front(lambda p, s: self.value(p, s, check=False), t, n,
                            2 * self.alpha, center=self.center(t), d=self.d)

    def to_dict(self):
        return {"type": "convolved", "base": self.base.to_dict(), "mode": self.mode,
                "alpha": self.alpha, "x0": self.x0.tolist(), "t0": self.t0,
                "drift": self.drift.tolist(), "rate": self.rate, "h": self.h}


def drift_frame_barrier(p: TravelingWaveParams, x0, t0: float, alpha: float, phi: Potential,
                        m: float = 2.0, C: float | None = None, h: float = 0.01) -> ConvolvedBarrier:
    """Traveling-wave supersolution moved into the frame drifting with grad Phi(x0).

    ``C`` defaults to the C^2 norm of Phi on the unit ball around ``x0``.
    """
    x0 = np.atleast_1d(np.asarray(x0, float))
    if C is None:
        C = phi.c2_norm(x0, 1.0)
    base = TravelingWave(p, phi.d, m)
    b = phi.gradient(x0)
    return ConvolvedBarrier(base, "inf", alpha, x0, t0, b, C * alpha, h)


# descriptors --------------------------------------------------------------


def from_descriptor(data: dict) -> ExactSolution:
    kind = data.get("type")
    if kind == "barenblatt":
        p = BarenblattParams(float(data["tau"]), float(data["C"]), float(data["m"]), int(data["d"]))
        return Barenblatt(p, data.get("center"))
    if kind == "traveling_wave":
        p = TravelingWaveParams(float(data["A"]), float(data["omega"]), float(data["B"]), float(data["R"]))
        return TravelingWave(p, int(data.get("d", 1)), float(data.get("m", 2.0)))
    if kind == "equilibrium":
        phi = Potential.from_dict(data["potential"])
        return Equilibrium(EquilibriumProfile(phi, float(data["C0"]), float(data["m"])))
    if kind == "convolved":
        return ConvolvedBarrier(from_descriptor(data["base"]), data["mode"], data["alpha"],
                                data["x0"], data["t0"], data["drift"], data["rate"],
                                data.get("h", 0.01))
    raise ValueError(f"unknown exact-solution type {kind!r}")


# helpers ------------------------------------------------------------------


def fd_derivatives(fn, x, t, d=None, step: float = 1e-4) -> Derivatives:
    """Centred finite-difference derivatives of ``fn(x, t)`` (or a solution's value)."""
    if isinstance(fn, ExactSolution):
        d = fn.d
        fn = fn.value
    pts = as_points(x, d)
    u = fn(pts, t)
    u_t = (fn(pts, t + step) - fn(pts, t - step)) / (2 * step)
    grad = np.zeros(pts.shape)
    lap = np.zeros(u.shape)
    for k in range(d):
        e = np.zeros(d)
        e[k] = step
        up, dn = fn(pts + e, t), fn(pts - e, t)
        grad[..., k] = (up - dn) / (2 * step)
        lap = lap + (up - 2 * u + dn) / step**2
    return Derivatives(u, u_t, grad, lap, "finite-difference")


def radial_front(fn, t, n=16, rmax=10.0, center=None, d=None, iters=60) -> np.ndarray:
    """Locate the positivity-set boundary along rays from ``center`` by bisection."""
    if isinstance(fn, ExactSolution):
        center = fn.center(t) if center is None else center
        d = fn.d
        fn = fn.value
    center = np.zeros(d) if center is None else np.atleast_1d(center)
    dirs = _directions(d, n)
    out = []
    for e in dirs:
        rs = np.linspace(0.0, rmax, 2001)
        vals = fn(center + rs[:, None] * e, t) > 0
        flips = np.flatnonzero(vals[1:] != vals[:-1])
        for i in flips:
            lo, hi = rs[i], rs[i + 1]
            pos_lo = vals[i]
            for _ in range(iters):
                mid = 0.5 * (lo + hi)
                if (fn(center + mid * e, t) > 0) == pos_lo:
                    lo = mid
                else:
                    hi = mid
            out.append(center + 0.5 * (lo + hi) * e)
    return np.array(out).reshape(-1, d)


def _directions(d, n):
    if d == 1:
        return np.array([[-1.0], [1.0]])
    th = np.linspace(0.0, 2 * np.pi, n, endpoint=False)
    return np.stack([np.cos(th), np.sin(th)], axis=-1)


def _ball_offsets(d, radius, h):
    if radius == 0:
        return np.zeros((1, d))
    k = max(1, int(np.ceil(radius / (0.5 * h))))
    s = np.linspace(-radius, radius, 2 * k + 1)
    if d == 1:
        return s[:, None]
    X, Y = np.meshgrid(s, s, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel()], axis=-1)
    return pts[np.sum(pts**2, axis=-1) <= radius**2 * (1 + 1e-12)]
