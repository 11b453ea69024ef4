"""Numerical lab for the porous medium equation with a drift potential."""

__version__ = "0.1.0"

from .field import (  # noqa: E402
    DENSITY,
    PRESSURE,
    Grid,
    ModelParams,
    ScalarField,
    density_from_pressure,
    lp_distance,
    mass,
    pressure_from_density,
    read_snapshot,
    write_snapshot,
)
from .potential import Potential, potential_probe  # noqa: E402
from .solver import SolverConfig, Trajectory, cfl_dt, evolve, flux_divergence, step  # noqa: E402

__all__ = [
    "DENSITY", "PRESSURE", "Grid", "ModelParams", "ScalarField", "density_from_pressure",
    "lp_distance", "mass", "pressure_from_density", "read_snapshot", "write_snapshot",
    "Potential", "potential_probe", "SolverConfig", "Trajectory", "cfl_dt", "evolve",
    "flux_divergence", "step",
]
