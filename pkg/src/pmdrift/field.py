"""Grids, scalar fields, density/pressure transforms and discrete norms."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DENSITY = "density"
PRESSURE = "pressure"
_KINDS = (DENSITY, PRESSURE)


@dataclass(frozen=True)
class Grid:
    """Uniform cell-centred Cartesian grid in one or two dimensions.

    The spacing must be identical on every axis; ``from_spacing`` is the
    convenient way to build one from a box and a cell width.
    """

    lower: tuple[float, ...]
    upper: tuple[float, ...]
    shape: tuple[int, ...]

    def __post_init__(self):
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        shape = tuple(int(n) for n in self.shape)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "shape", shape)
        if not (len(lower) == len(upper) == len(shape)):
            raise ValueError("lower, upper and shape must have the same length")
        if len(shape) not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {len(shape)}")
        if any(n < 4 for n in shape):
            raise ValueError(f"need at least 4 cells per axis, got {shape}")
        widths = [(b - a) / n for a, b, n in zip(lower, upper, shape)]
        if any(w <= 0 for w in widths):
            raise ValueError("upper bounds must exceed lower bounds")
        if not np.allclose(widths, widths[0], rtol=1e-12, atol=0.0):
            raise ValueError(f"spacing differs between axes: {widths}")

    @classmethod
    def from_spacing(cls, lower, upper, h: float) -> "Grid":
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        shape = np.rint((upper - lower) / h).astype(int)
        upper = lower + shape * h
        return cls(tuple(lower), tuple(upper), tuple(shape))

    @property
    def d(self) -> int:
        return len(self.shape)

    @property
    def h(self) -> float:
        return (self.upper[0] - self.lower[0]) / self.shape[0]

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def cell_volume(self) -> float:
        return self.h**self.d

    def axis_centers(self, axis: int) -> np.ndarray:
        return self.lower[axis] + (np.arange(self.shape[axis]) + 0.5) * self.h

    def centers(self) -> np.ndarray:
        """Cell centres with shape ``self.shape + (d,)``."""
        axes = [self.axis_centers(k) for k in range(self.d)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        lo = np.asarray(self.lower)
        hi = np.asarray(self.upper)
        return np.all((x >= lo) & (x <= hi), axis=-1)

    def to_dict(self) -> dict:
        return {"lower": list(self.lower), "upper": list(self.upper), "shape": list(self.shape)}

    @classmethod
    def from_dict(cls, data: dict) -> "Grid":
        return cls(tuple(data["lower"]), tuple(data["upper"]), tuple(data["shape"]))


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Nonnegative cell-centred samples of a density or a pressure."""

    grid: Grid
    values: np.ndarray
    kind: str = DENSITY
    _checked: bool = field(default=True, repr=False)

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"kind must be one of {_KINDS}, got {self.kind!r}")
        values = np.array(self.values, dtype=float).reshape(self.grid.shape)
        if self._checked:
            if not np.all(np.isfinite(values)):
                raise ValueError("field contains non-finite values")
            if np.any(values < 0):
                raise ValueError(f"field values must be nonnegative (min {values.min():.3e})")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def with_values(self, values) -> "ScalarField":
        return ScalarField(self.grid, values, self.kind)

    def __eq__(self, other):
        if not isinstance(other, ScalarField):
            return NotImplemented
        return (
            self.grid == other.grid
            and self.kind == other.kind
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


@dataclass(frozen=True)
class ModelParams:
    m: float
    mass: float

    def __post_init__(self):
        check_exponent(self.m)
        if not self.mass > 0:
            raise ValueError(f"mass must be positive, got {self.mass}")


def check_exponent(m: float) -> float:
    if not np.isfinite(m) or m <= 1:
        raise ValueError(f"porous-medium exponent requires m > 1, got m={m}")
    return float(m)


def pressure_from_density(rho: ScalarField, m: float) -> ScalarField:
    """u = m/(m-1) * rho^(m-1), applied pointwise."""
    if rho.kind != DENSITY:
        raise ValueError(f"expected a density field, got {rho.kind}")
    m = check_exponent(m)
    return ScalarField(rho.grid, pressure_values(rho.values, m), PRESSURE)


def density_from_pressure(u: ScalarField, m: float) -> ScalarField:
    if u.kind != PRESSURE:
        raise ValueError(f"expected a pressure field, got {u.kind}")
    m = check_exponent(m)
    return ScalarField(u.grid, density_values(u.values, m), DENSITY)


def pressure_values(rho, m: float) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    return m / (m - 1.0) * rho ** (m - 1.0)


def density_values(u, m: float) -> np.ndarray:
    u = np.asarray(u, dtype=float)
    return ((m - 1.0) / m * u) ** (1.0 / (m - 1.0))


def mass(rho: ScalarField) -> float:
    """Midpoint-rule integral of a density field."""
    if rho.kind != DENSITY:
        raise ValueError("mass is only defined for density fields")
    return float(np.sum(rho.values) * rho.grid.cell_volume)


def lp_distance(f: ScalarField, g: ScalarField, p=1) -> float:
    if f.grid != g.grid:
        raise ValueError("fields live on different grids")
    if f.kind != g.kind:
        raise ValueError(f"cannot compare a {f.kind} field with a {g.kind} field")
    diff = np.abs(f.values - g.values)
    if p in (np.inf, "inf"):
        return float(diff.max())
    if p == 1:
        return float(diff.sum() * f.grid.cell_volume)
    if p == 2:
        return float(np.sqrt(np.sum(diff**2) * f.grid.cell_volume))
    raise ValueError(f"p must be 1, 2 or inf, got {p}")


def write_snapshot(f: ScalarField, path, t: float = 0.0) -> Path:
    """Write ``f`` as plain text: a ``# d h N kind t`` header, then one value per line.

    N is the comma-joined per-axis cell count. A second comment line records the
    lower corner so the grid can be rebuilt without the manifest.
    """
    path = Path(path)
    g = f.grid
    lines = [
        f"# {g.d} {g.h:.17g} {','.join(str(n) for n in g.shape)} {f.kind} {t:.17g}",
        "# lower " + " ".join(f"{v:.17g}" for v in g.lower),
    ]
    lines.extend(f"{v:.17g}" for v in f.values.ravel(order="C"))
    try:
        path.write_text("\n".join(lines) + "\n", newline="\n")
    except OSError as exc:
        raise OSError(f"cannot write snapshot {path}: {exc}") from exc
    return path


def read_snapshot(path) -> tuple[ScalarField, float]:
    path = Path(path)
    text = path.read_text().splitlines()
    head = text[0].lstrip("#").split()
    d, h, counts, kind, t = int(head[0]), float(head[1]), head[2], head[3], float(head[4])
    shape = tuple(int(n) for n in counts.split(","))
    lower = [0.0] * d
    body = []
    for line in text[1:]:
        if line.startswith("# lower"):
            lower = [float(v) for v in line.split()[2:]]
        elif line and not line.startswith("#"):
            body.append(float(line))
    upper = [a + n * h for a, n in zip(lower, shape)]
    grid = Grid(tuple(lower), tuple(upper), shape)
    return ScalarField(grid, np.array(body).reshape(shape), kind), t
