"""triload: min-max load allocation on the unit-area triangle with corner bins.

Library layout:

* geometry     -- the triangle frame, cells, boundary sweeps, sampling
* costs        -- cost models (radial, constant, inverse-SINR) and checkers
* quadrature   -- adaptive integration over the cell polygons
* allocation   -- greedy / exact / fractional / boundary-sweep allocators
* asymptotics  -- rate functions, limit-law parameters, tilted sampling
* experiments  -- seeded Monte Carlo validation campaigns
* cli          -- the `triload` command
"""

from . import allocation, asymptotics, costs, errors, experiments, geometry, quadrature

__all__ = [
    "allocation",
    "asymptotics",
    "costs",
    "errors",
    "experiments",
    "geometry",
    "quadrature",
]

__version__ = "0.1.0"
