"""Analytic drift potentials with exact first and second derivatives."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial
from scipy.interpolate import CubicSpline, RectBivariateSpline

FORMS = ("quadratic", "anisotropic", "cone", "polynomial", "tabulated")


@dataclass(frozen=True)
class PotentialMeta:
    """Box-dependent constants: convexity modulus, max Laplacian, min slope."""

    k0: float
    M1: float
    A_min: float
    minimizer: tuple[float, ...]
    convex: bool

    def to_dict(self) -> dict:
        return {
            "k0": self.k0,
            "M1": self.M1,
            "A_min": self.A_min,
            "minimizer": list(self.minimizer),
            "convex": self.convex,
        }


@dataclass(frozen=True, eq=False)
class Potential:
    """A C^2 potential Phi on R^d, d in {1, 2}.

    Forms and their parameters:

    ``quadratic``    scale * |x - center|^2
    ``anisotropic``  1/2 (x - center)^T Q (x - center)
    ``cone``         scale * (sqrt(1 + |x - center|^2) - 1)
    ``polynomial``   sum_k p(x_k - center_k), ``coeffs`` ascending
    ``tabulated``    cubic spline through ``values`` on ``axes``

    Use the class methods rather than the constructor.
    """

    form: str
    d: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.form not in FORMS:
            raise ValueError(f"unknown potential form {self.form!r}")
        if self.d not in (1, 2):
            raise ValueError("potentials are supported in d = 1 or 2")
        object.__setattr__(self, "_impl", _build(self.form, self.d, self.params))

    # constructors ---------------------------------------------------------

    @classmethod
    def quadratic(cls, scale=1.0, center=None, d=1):
        center = _center(center, d)
        return cls("quadratic", len(center), {"scale": float(scale), "center": center})

    @classmethod
    def anisotropic(cls, Q, center=None):
        Q = np.atleast_2d(np.asarray(Q, dtype=float))
        if not np.allclose(Q, Q.T):
            raise ValueError("Q must be symmetric")
        center = _center(center, Q.shape[0])
        return cls("anisotropic", Q.shape[0], {"Q": Q.tolist(), "center": center})

    @classmethod
    def cone(cls, scale=1.0, center=None, d=1):
        center = _center(center, d)
        return cls("cone", len(center), {"scale": float(scale), "center": center})

    @classmethod
    def polynomial(cls, coeffs, center=None, d=1):
        center = _center(center, d)
        return cls("polynomial", len(center), {"coeffs": [float(c) for c in coeffs], "center": center})

    @classmethod
    def tabulated(cls, axes, values):
        axes = [list(map(float, a)) for a in axes]
        values = np.asarray(values, dtype=float)
        return cls("tabulated", len(axes), {"axes": axes, "values": values.tolist()})

    @classmethod
    def zero(cls, d=1):
        return cls.polynomial([0.0], d=d)

    # evaluation -----------------------------------------------------------

    def value(self, x) -> np.ndarray:
        return self._impl.value(self._points(x))

    def gradient(self, x) -> np.ndarray:
        return self._impl.gradient(self._points(x))

    def hessian(self, x) -> np.ndarray:
        return self._impl.hessian(self._points(x))

    def laplacian(self, x) -> np.ndarray:
        return np.trace(self.hessian(x), axis1=-2, axis2=-1)

    def _points(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.d == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            x = x[..., None]
        if x.shape[-1] != self.d:
            raise ValueError(f"points must have trailing dimension {self.d}, got {x.shape}")
        return x

    # metadata -------------------------------------------------------------

    @property
    def minimizer(self) -> tuple[float, ...]:
        return tuple(self._impl.minimizer())

    @property
    def is_zero(self) -> bool:
        return self.form == "polynomial" and not any(self.params["coeffs"][1:])

    def metadata(self, lower, upper, radius: float = 0.0, samples: int = 401) -> PotentialMeta:
        """Constants of Phi on the box [lower, upper].

        ``A_min`` is the smallest |grad Phi| over box points at distance at least
        ``radius`` from the minimizer.
        """
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        pts = _box_samples(lower, upper, samples)
        x0 = np.asarray(self.minimizer)
        rel = pts - x0
        hess = self.hessian(pts)
        k0_exact = self._impl.k0(lower, upper)
        if k0_exact is None:
            r2 = np.sum(rel**2, axis=-1)
            quad = np.einsum("...i,...ij,...j->...", rel, hess, rel)
            ok = r2 > 1e-14
            k0 = float(np.min(quad[ok] / r2[ok])) if ok.any() else 0.0
        else:
            k0 = float(k0_exact)
        M1 = float(np.max(np.trace(hess, axis1=-2, axis2=-1)))
        slope = np.linalg.norm(self.gradient(pts), axis=-1)
        far = np.linalg.norm(rel, axis=-1) >= radius
        A_min = float(slope[far].min()) if far.any() else 0.0
        eig_min = float(np.min(np.linalg.eigvalsh(hess)))
        return PotentialMeta(k0, M1, A_min, tuple(x0), convex=eig_min >= -1e-12 and k0 > 0)

    def c2_norm(self, center, radius: float = 1.0, samples: int = 201) -> float:
        """max|Phi| + max|grad Phi| + max ||Hess Phi||_2 over the ball B_radius(center)."""
        center = np.atleast_1d(np.asarray(center, dtype=float))
        pts = _ball_samples(center, radius, samples)
        val = np.max(np.abs(self.value(pts)))
        grad = np.max(np.linalg.norm(self.gradient(pts), axis=-1))
        hess = np.max(np.abs(np.linalg.eigvalsh(self.hessian(pts))))
        return float(val + grad + hess)

    # serialisation --------------------------------------------------------

    def to_dict(self) -> dict:
        return {"form": self.form, **_plain(self.params)}

    @classmethod
    def from_dict(cls, data: dict) -> "Potential":
        data = dict(data)
        form = data.pop("form", None)
        if form == "quadratic":
            phi = cls.quadratic(data.pop("scale", 1.0), data.pop("center", None), data.pop("d", 1))
        elif form == "anisotropic":
            phi = cls.anisotropic(data.pop("Q"), data.pop("center", None))
        elif form == "cone":
            phi = cls.cone(data.pop("scale", 1.0), data.pop("center", None), data.pop("d", 1))
        elif form == "polynomial":
            phi = cls.polynomial(data.pop("coeffs"), data.pop("center", None), data.pop("d", 1))
        elif form == "tabulated":
            phi = cls.tabulated(data.pop("axes"), data.pop("values"))
        else:
            raise ValueError(f"unknown potential form {form!r}")
        if data:
            raise ValueError(f"unknown key {sorted(data)[0]!r} for potential form {form!r}")
        return phi

    def __eq__(self, other):
        if not isinstance(other, Potential):
            return NotImplemented
        return self.to_dict() == other.to_dict()

    __hash__ = None


def potential_probe(phi: Potential, x, grid=None):
    """Return (value, gradient, laplacian) of ``phi`` at a single point ``x``.

    When ``grid`` is given the point must lie in its box.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if x.shape != (phi.d,):
        raise ValueError(f"expected a point in R^{phi.d}, got shape {x.shape}")
    if grid is not None and not grid.contains(x):
        raise ValueError(f"point {x.tolist()} lies outside the grid box")
    if phi.form == "tabulated" and not phi._impl.contains(x):
        raise ValueError(f"point {x.tolist()} lies outside the tabulated range")
    return float(phi.value(x)), phi.gradient(x), float(phi.laplacian(x))


# implementations ----------------------------------------------------------


def _center(center, d):
    if center is None:
        return [0.0] * d
    return [float(c) for c in np.atleast_1d(center)]


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def _box_samples(lower, upper, n):
    axes = [np.linspace(a, b, n if len(lower) == 1 else min(n, 201)) for a, b in zip(lower, upper)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(lower))


def _ball_samples(center, radius, n):
    d = len(center)
    if d == 1:
        return (center + np.linspace(-radius, radius, 2 * n + 1))[:, None]
    r = np.linspace(0.0, radius, n)
    th = np.linspace(0.0, 2 * np.pi, 2 * n, endpoint=False)
    R, T = np.meshgrid(r, th, indexing="ij")
    pts = np.stack([R * np.cos(T), R * np.sin(T)], axis=-1).reshape(-1, 2)
    return center + pts


def _build(form, d, p):
    if form == "quadratic":
        return _Quadratic(np.eye(d) * 2.0 * p["scale"], np.asarray(p["center"], float))
    if form == "anisotropic":
        return _Quadratic(np.asarray(p["Q"], float), np.asarray(p["center"], float))
    if form == "cone":
        return _Cone(p["scale"], np.asarray(p["center"], float))
    if form == "polynomial":
        return _Separable(Polynomial(p["coeffs"]), np.asarray(p["center"], float))
    return _Tabulated(p["axes"], np.asarray(p["values"], float))


class _Quadratic:
    def __init__(self, Q, c):
        self.Q, self.c = Q, c

    def value(self, x):
        y = x - self.c
        return 0.5 * np.einsum("...i,ij,...j->...", y, self.Q, y)

    def gradient(self, x):
        return (x - self.c) @ self.Q.T

    def hessian(self, x):
        return np.broadcast_to(self.Q, x.shape[:-1] + self.Q.shape).copy()

    def minimizer(self):
        return self.c

    def k0(self, lower, upper):
        return float(np.min(np.linalg.eigvalsh(self.Q)))


class _Cone:
    def __init__(self, s, c):
        self.s, self.c = s, c

    def value(self, x):
        r2 = np.sum((x - self.c) ** 2, axis=-1)
        return self.s * (np.sqrt(1.0 + r2) - 1.0)

    def gradient(self, x):
        y = x - self.c
        r2 = np.sum(y**2, axis=-1)
        return self.s * y / np.sqrt(1.0 + r2)[..., None]

    def hessian(self, x):
        y = x - self.c
        q = 1.0 + np.sum(y**2, axis=-1)
        eye = np.eye(y.shape[-1])
        outer = y[..., :, None] * y[..., None, :]
        return self.s * (eye / np.sqrt(q)[..., None, None] - outer / (q**1.5)[..., None, None])

    def minimizer(self):
        return self.c

    def k0(self, lower, upper):
        # x^T H x / |x|^2 = s / (1 + r^2)^{3/2}, smallest at the farthest box corner
        far = np.maximum(np.abs(lower - self.c), np.abs(upper - self.c))
        return self.s / (1.0 + np.sum(far**2)) ** 1.5


class _Separable:
    def __init__(self, poly, c):
        self.p, self.dp, self.ddp, self.c = poly, poly.deriv(1), poly.deriv(2), c

    def value(self, x):
        return np.sum(self.p(x - self.c), axis=-1)

    def gradient(self, x):
        return self.dp(x - self.c)

    def hessian(self, x):
        diag = self.ddp(x - self.c)
        return diag[..., :, None] * np.eye(x.shape[-1])

    def minimizer(self):
        # per-axis global minimum of p over the real critical points; origin offset otherwise
        crit = [r.real for r in self.dp.roots() if abs(r.imag) < 1e-12] if self.dp.degree() > 0 else []
        if not crit:
            return self.c
        best = min(crit, key=lambda r: self.p(r))
        return self.c + best

    def k0(self, lower, upper):
        # x^T H x = sum p''(y_i) x_i^2, so min p'' over each box interval bounds it
        if self.p.degree() < 2:
            return 0.0
        best = np.inf
        d3 = self.ddp.deriv(1)
        for a, b in zip(np.asarray(lower) - self.c, np.asarray(upper) - self.c):
            cand = [a, b]
            if d3.degree() > 0:
                cand += [r.real for r in d3.roots() if abs(r.imag) < 1e-12 and a <= r.real <= b]
            best = min(best, float(np.min(self.ddp(np.asarray(cand)))))
        return best


class _Tabulated:
    def __init__(self, axes, values):
        self.axes = [np.asarray(a, float) for a in axes]
        if len(axes) == 1:
            self.s = CubicSpline(self.axes[0], values, bc_type="natural")
        else:
            self.s = RectBivariateSpline(self.axes[0], self.axes[1], values, kx=3, ky=3)
        self.values = values

    def contains(self, x):
        return all(a[0] <= xi <= a[-1] for a, xi in zip(self.axes, np.atleast_1d(x)))

    def _eval(self, x, dx=0, dy=0):
        if len(self.axes) == 1:
            return self.s(x[..., 0], dx)
        return self.s.ev(x[..., 0], x[..., 1], dx=dx, dy=dy)

    def value(self, x):
        return np.asarray(self._eval(x))

    def gradient(self, x):
        if len(self.axes) == 1:
            return np.asarray(self._eval(x, 1))[..., None]
        return np.stack([self._eval(x, 1, 0), self._eval(x, 0, 1)], axis=-1)

    def hessian(self, x):
        if len(self.axes) == 1:
            return np.asarray(self._eval(x, 2))[..., None, None]
        xx, yy, xy = self._eval(x, 2, 0), self._eval(x, 0, 2), self._eval(x, 1, 1)
        return np.stack([np.stack([xx, xy], -1), np.stack([xy, yy], -1)], -2)

    def minimizer(self):
        idx = np.unravel_index(np.argmin(self.values), self.values.shape)
        return np.array([a[i] for a, i in zip(self.axes, idx)])

    def k0(self, lower, upper):
        return None
