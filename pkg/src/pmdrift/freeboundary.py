"""Free-boundary extraction, set distances, front velocities and rate fits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.spatial import cKDTree

from .field import Grid, ScalarField

REL_THRESHOLD = 1e-3


def default_threshold(values) -> float:
    return REL_THRESHOLD * float(np.max(values)) if np.size(values) else 0.0


def positivity_set(u: ScalarField, eps: float | None = None) -> np.ndarray:
    """Cells with u > eps; eps defaults to 1e-3 max u."""
    if eps is None:
        eps = default_threshold(u.values)
    if eps < 0:
        raise ValueError("threshold must be nonnegative")
    return u.values > eps


@dataclass(frozen=True)
class BoundarySet:
    t: float
    points: np.ndarray
    eps: float
    flagged: bool = False

    @property
    def empty(self) -> bool:
        return len(self.points) == 0

    def __len__(self):
        return len(self.points)


def extended_values(values: np.ndarray, eps: float) -> np.ndarray:
    """Copy of ``values`` where cells at or below ``eps`` next to the positivity set
    hold the linear extrapolation 2 u_c - u_cc from the interior (if lower).

    A degenerate front has u = 0 exactly on the outer side, so the plain
    secant through (u_c, 0) puts the crossing next to the zero cell; the
    extrapolated ghost restores the interior slope.
    """
    ext = np.array(values, dtype=float)
    pos = values > eps
    for k in range(values.ndim):
        n = values.shape[k]
        if n < 3:
            continue
        for sgn in (1, -1):
            # outer cell o, inner c = o - sgn, deeper cc = o - 2 sgn along axis k
            o = [slice(None)] * values.ndim
            c = [slice(None)] * values.ndim
            cc = [slice(None)] * values.ndim
            if sgn > 0:
                o[k], c[k], cc[k] = slice(2, None), slice(1, -1), slice(0, -2)
            else:
                o[k], c[k], cc[k] = slice(0, -2), slice(1, -1), slice(2, None)
            o, c, cc = tuple(o), tuple(c), tuple(cc)
            ok = ~pos[o] & pos[c] & pos[cc]
            ghost = 2 * values[c] - values[cc]
            view = ext[o]
            view[ok] = np.minimum(view[ok], ghost[ok])
            ext[o] = view
    return ext


def _crossings(values: np.ndarray, grid: Grid, eps: float) -> np.ndarray:
    """Linear-interpolation crossings of the eps level on every grid line."""
    centers = grid.centers()
    pos = values > eps
    ext = extended_values(values, eps)
    pts = []
    for k in range(grid.d):
        lo = [slice(None)] * grid.d
        hi = [slice(None)] * grid.d
        lo[k] = slice(0, -1)
        hi[k] = slice(1, None)
        lo, hi = tuple(lo), tuple(hi)
        change = pos[lo] != pos[hi]
        if not change.any():
            continue
        a = ext[lo][change] - eps
        b = ext[hi][change] - eps
        frac = a / (a - b)
        p = centers[lo][change].copy()
        p[:, k] += frac * grid.h
        pts.append(p)
    if not pts:
        return np.zeros((0, grid.d))
    return np.concatenate(pts)


def extract_boundary(u: ScalarField, eps: float | None = None, t: float = 0.0,
                     check: bool = True) -> BoundarySet:
    """Interpolated crossings of the eps level between positive and non-positive cells.

    An empty or full positivity set yields an empty :class:`BoundarySet`. When
    ``check`` is set the extraction is repeated at 2 eps and the result is flagged
    if the two disagree by more than 2h.
    """
    if eps is None:
        eps = default_threshold(u.values)
    pts = _crossings(u.values, u.grid, eps)
    flagged = False
    if check and len(pts) and eps > 0:
        other = _crossings(u.values, u.grid, 2 * eps)
        flagged = not len(other) or _hausdorff(pts, other) > 2 * u.grid.h
    return BoundarySet(float(t), pts, float(eps), flagged)


def _directed(a: np.ndarray, b: np.ndarray) -> float:
    dist, _ = cKDTree(b).query(a)
    return float(np.max(dist))


def _hausdorff(a, b) -> float:
    return max(_directed(a, b), _directed(b, a))


def _points(s) -> np.ndarray:
    pts = s.points if isinstance(s, BoundarySet) else np.asarray(s, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if len(pts) == 0:
        raise ValueError("distance to an empty boundary set is undefined")
    return pts


def sup_distance(a, b) -> float:
    """One-sided sup over a of the distance to b."""
    return _directed(_points(a), _points(b))


def hausdorff_distance(a, b) -> float:
    return _hausdorff(_points(a), _points(b))


# velocities ---------------------------------------------------------------


@dataclass(frozen=True)
class VelocityEstimate:
    measured: float
    theoretical: float
    normal: np.ndarray
    gradient: np.ndarray


def interior_gradient(values: np.ndarray, mask: np.ndarray, idx, h: float) -> np.ndarray:
    """Gradient at cell ``idx`` using only cells inside ``mask``.

    Centred where both neighbours are inside, otherwise the one-sided three-point
    stencil pointing into the mask.
    """
    idx = tuple(int(i) for i in idx)
    grad = np.zeros(len(idx))

    def inside(j):
        return all(0 <= j[a] < values.shape[a] for a in range(len(j))) and bool(mask[j])

    for k in range(len(idx)):
        def at(off):
            j = list(idx)
            j[k] += off
            return tuple(j)

        if inside(at(-1)) and inside(at(1)):
            grad[k] = (values[at(1)] - values[at(-1)]) / (2 * h)
        elif inside(at(-1)) and inside(at(-2)):
            grad[k] = (3 * values[idx] - 4 * values[at(-1)] + values[at(-2)]) / (2 * h)
        elif inside(at(1)) and inside(at(2)):
            grad[k] = (-3 * values[idx] + 4 * values[at(1)] - values[at(2)]) / (2 * h)
        elif inside(at(-1)):
            grad[k] = (values[idx] - values[at(-1)]) / h
        elif inside(at(1)):
            grad[k] = (values[at(1)] - values[idx]) / h
    return grad


def _line_crossing(values: np.ndarray, grid: Grid, eps: float, p, n, reach: float):
    """Signed offset s nearest 0 where values - eps changes sign along p + s n."""
    values = extended_values(values, eps)
    s = np.linspace(-reach, reach, int(np.ceil(2 * reach / (grid.h / 8))) + 1)
    line = p[None, :] + s[:, None] * n[None, :]
    if grid.d == 1:
        f = np.interp(line[:, 0], grid.axis_centers(0), values, left=values[0], right=values[-1])
    else:
        interp = RegularGridInterpolator(
            tuple(grid.axis_centers(k) for k in range(grid.d)), values,
            bounds_error=False, fill_value=None)
        f = interp(line)
    g = f - eps
    flips = np.flatnonzero((g[:-1] > 0) & (g[1:] <= 0))
    if not len(flips):
        return None
    cand = s[flips] + (s[flips + 1] - s[flips]) * g[flips] / (g[flips] - g[flips + 1])
    return float(cand[np.argmin(np.abs(cand))])


def normal_velocity_estimate(traj, p, k: int, phi, reach: float | None = None,
                             depth: int = 4):
    """Measured and predicted outward normal speed of the front at point ``p``.

    ``p`` should be an extracted boundary point of snapshot ``k``. The measured
    value is the displacement of the 1e-3-level front along the outward normal
    between the neighbouring snapshots; the prediction is |Du| + grad Phi . Du/|Du|
    with Du from one-sided interior differences taken ``depth`` cells inside the
    front, clear of the few rounded cells a degenerate scheme leaves there.
    Returns None when the front cannot be matched in a neighbouring snapshot.
    """
    grid = traj.grid
    p = np.atleast_1d(np.asarray(p, dtype=float))
    u = traj.pressure(k)
    eps = default_threshold(u)
    mask = u > eps
    if not mask.any():
        return None
    centers = grid.centers()
    inside = np.argwhere(mask)
    near = inside[np.argmin(np.linalg.norm(centers[mask] - p, axis=-1))]
    grad = interior_gradient(u, mask, near, grid.h)
    norm = float(np.linalg.norm(grad))
    if norm == 0:
        return None
    at = p
    if depth:
        probe = p + depth * grid.h * grad / norm
        deep = inside[np.argmin(np.linalg.norm(centers[mask] - probe, axis=-1))]
        g2 = interior_gradient(u, mask, deep, grid.h)
        if np.linalg.norm(g2) > 0:
            grad = g2
            norm = float(np.linalg.norm(grad))
            at = centers[tuple(deep)]
    n = -grad / norm
    theory = norm + float(phi.gradient(at) @ (grad / norm))
    if reach is None:
        reach = 20 * grid.h
    nbrs = [j for j in (k - 1, k + 1) if 0 <= j < len(traj)]
    if not nbrs:
        return None
    offsets = {}
    for j in [k] + nbrs:
        uj = traj.pressure(j)
        s = _line_crossing(uj, grid, default_threshold(uj), p, n, reach)
        if s is None:
            return None
        offsets[j] = s
    lo, hi = min(nbrs), max(nbrs)
    if lo == hi:
        lo, hi = (lo, k) if lo < k else (k, hi)
    measured = (offsets[hi] - offsets[lo]) / (traj.times[hi] - traj.times[lo])
    return VelocityEstimate(float(measured), float(theory), n, grad)


def velocity_law(grad_u, grad_phi) -> float:
    """|Du| + grad Phi . Du/|Du|."""
    grad_u = np.asarray(grad_u, dtype=float)
    norm = float(np.linalg.norm(grad_u))
    if norm == 0:
        raise ValueError("velocity law needs |Du| > 0")
    return norm + float(np.asarray(grad_phi, dtype=float) @ grad_u) / norm


# rate fitting -------------------------------------------------------------


@dataclass(frozen=True)
class RateFit:
    K: float
    alpha: float
    r2: float
    t_a: float
    t_b: float

    def to_dict(self) -> dict:
        return {"K": self.K, "alpha": self.alpha, "r2": self.r2, "t_a": self.t_a, "t_b": self.t_b}


def default_window(t) -> tuple[float, float]:
    t = np.asarray(t, dtype=float)
    lo, hi = float(t.min()), float(t.max())
    return lo + 0.4 * (hi - lo), hi


def fit_exponential_rate(t, d, window=None) -> RateFit:
    """Least-squares fit of log d = log K - alpha t on the window."""
    t = np.asarray(t, dtype=float)
    d = np.asarray(d, dtype=float)
    t_a, t_b = default_window(t) if window is None else map(float, window)
    if not t_a < t_b:
        raise ValueError("fit window must satisfy t_a < t_b")
    sel = (t >= t_a - 1e-12) & (t <= t_b + 1e-12)
    if sel.sum() < 5:
        raise ValueError(f"need at least 5 points in the window, got {int(sel.sum())}")
    if np.any(d[sel] <= 0):
        raise ValueError("distances in the fit window must be positive")
    x, y = t[sel], np.log(d[sel])
    slope, intercept = np.polyfit(x, y, 1)
    ss_res = float(np.sum((y - (slope * x + intercept)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    if ss_tot <= 1e-30 * max(1.0, float(np.sum(y**2))):
        r2 = 1.0
    else:
        r2 = min(1.0, max(0.0, 1.0 - ss_res / ss_tot))
    return RateFit(float(np.exp(intercept)), float(-slope), r2, t_a, t_b)
