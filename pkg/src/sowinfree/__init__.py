"""Winfree-type coupled oscillators on the rotation group SO(n).

The package provides group/algebra primitives (:mod:`sowinfree.geometry`),
radial influence profiles (:mod:`sowinfree.influence`), structure-preserving
integrators for the coupled flow (:mod:`sowinfree.dynamics`), closed-form
coupling thresholds and decay-rate certificates (:mod:`sowinfree.analysis`),
equilibrium construction and fixed-point solvers
(:mod:`sowinfree.equilibria`), and a deterministic experiment harness with a
command-line front end (:mod:`sowinfree.experiments`, :mod:`sowinfree.cli`).
"""

from sowinfree import (analysis, config, dynamics, equilibria, experiments,
                       geometry, influence, io)

__all__ = ["analysis", "config", "dynamics", "equilibria", "experiments",
           "geometry", "influence", "io"]
__version__ = "0.1.0"
