"""Numerics for sublinear (volatility-interval) expectations in one dimension.

Modules
-------
gcore     generators, driver specifications, grids, presets, config parsing
pde       monotone explicit solver for the fully nonlinear terminal PDE
gexpect   terminal/cylinder expectations, trinomial lattice oracle, Doob check
scenario  path simulation, variational processes, MC sensitivity estimators
gbsde     regularized solution families, K reconstruction, experiment reports
cli       command-line entry point
"""

__version__ = "0.1.0"

from .gcore import (  # noqa: F401
    ConfigError,
    CylinderFunctional,
    DomainError,
    DriverSpec,
    GFunction1D,
    GbmlabError,
    Grid1D,
    NumericalError,
    make_gfunction,
    parse_config,
    payoff_driver,
    preset_driver,
    regularize,
)
