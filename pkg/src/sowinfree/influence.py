"""Radial influence profiles.

An influence function assigns each oscillator a scalar weight through a
radial profile evaluated at geodesic distance from the attraction point:
``I(R) = profile(d(Q, R))``.  Admissible profiles are nonincreasing, equal
to 1 in the limit r -> 0+, and vanish outside a support radius ``beta``.

Constructors return :class:`InfluenceFunction` records carrying the profile
(vectorized over numpy arrays), its support radius, its radial Lipschitz
constant, and the parameters needed to serialize it.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from sowinfree.geometry import check_rotation, geodesic_distance


@dataclass(frozen=True)
class InfluenceFunction:
    """A radial influence profile.

    ``lip`` is a Lipschitz constant of the radial profile on [0, inf);
    ``params`` holds whatever the constructor needs to rebuild the profile.
    """

    kind: str
    beta: float
    lip: float
    profile: Callable[[np.ndarray], np.ndarray]
    params: dict = field(default_factory=dict)

    def __call__(self, r):
        arr = np.asarray(r, dtype=float)
        if np.any(arr < 0.0):
            raise ValueError("radial argument must be nonnegative")
        out = self.profile(arr)
        return float(out) if np.isscalar(r) or arr.ndim == 0 else out

    def at_rotation(self, rotation: np.ndarray) -> float:
        """Influence of a rotation: profile at distance from the identity."""
        r = check_rotation(rotation)
        eye = np.eye(r.shape[-1])
        return float(self(geodesic_distance(eye, r)))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "beta": self.beta, "lip": self.lip, "params": self.params}


def ambient_lipschitz_bound(f: InfluenceFunction) -> float:
    """Lipschitz constant of ``R -> f(d(I, R))`` in the ambient metric.

    Chordal and geodesic distances differ by at most a factor
    ``beta / sin(beta)`` on the support, so the radial constant transfers
    with that factor.
    """
    if not (0.0 < f.beta < np.pi):
        raise ValueError("support radius outside (0, pi)")
    return float(f.beta / np.sin(f.beta) * f.lip)


def make_linear_hat(beta: float) -> InfluenceFunction:
    """Linear hat profile ``max(0, 1 - r/beta)``; Lipschitz constant 1/beta."""
    if beta <= 0.0:
        raise ValueError("beta must be positive")

    def profile(r: np.ndarray) -> np.ndarray:
        return np.clip(1.0 - r / beta, 0.0, None)

    return InfluenceFunction("linear-hat", float(beta), 1.0 / beta, profile,
                             {"beta": float(beta)})


def make_cosine_taper(beta: float) -> InfluenceFunction:
    """Cosine taper ``cos^2(pi r / (2 beta))`` on [0, beta]; Lipschitz pi/(2 beta)."""
    if beta <= 0.0:
        raise ValueError("beta must be positive")

    def profile(r: np.ndarray) -> np.ndarray:
        return np.where(r < beta, np.cos(np.pi * np.minimum(r, beta) / (2.0 * beta)) ** 2, 0.0)

    return InfluenceFunction("cosine-taper", float(beta), np.pi / (2.0 * beta), profile,
                             {"beta": float(beta)})


def make_continuum_profile(kappa: float, lambda_star: float, x0: float,
                           beta: float) -> InfluenceFunction:
    """Profile whose self-consistency map is the identity on ``[x0, 1]``.

    Piecewise construction for a single-block frequency of rate
    ``lambda_star`` under coupling ``kappa``: with
    ``r(x) = arcsin(lambda_star / (kappa x))`` the profile is

    * 1 on ``[0, r(1)]``,
    * ``lambda_star / (kappa sin y)`` on ``[r(1), r(x0)]``  (so the mean
      influence of the matching equilibrium at level x is exactly x),
    * linear from ``(r(x0), x0)`` down to ``(beta, 0)``,
    * 0 beyond ``beta``.

    Requires ``lambda_star/kappa < x0 < 1`` and ``r(x0) < beta < pi/2``.
    """
    if kappa <= 0.0 or lambda_star <= 0.0:
        raise ValueError("kappa and lambda_star must be positive")
    if not (lambda_star / kappa < x0 < 1.0):
        raise ValueError(f"x0 must lie in (lambda_star/kappa, 1), got {x0}")
    r1 = float(np.arcsin(lambda_star / kappa))
    rx0 = float(np.arcsin(lambda_star / (kappa * x0)))
    if not (rx0 < beta < np.pi / 2.0):
        raise ValueError(f"beta must lie in ({rx0}, pi/2), got {beta}")
    tail_slope = x0 / (beta - rx0)

    def profile(r: np.ndarray) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        mid = lambda_star / (kappa * np.sin(np.clip(r, r1, rx0)))
        tail = x0 * (beta - r) / (beta - rx0)
        out = np.where(r <= r1, 1.0, np.where(r <= rx0, mid, np.where(r < beta, tail, 0.0)))
        return out

    # steepest pieces: the analytic-inverse zone at its left end, or the tail
    lip = max(kappa * np.cos(r1) / lambda_star, tail_slope)
    return InfluenceFunction(
        "continuum", float(beta), float(lip), profile,
        {"kappa": float(kappa), "lambda_star": float(lambda_star),
         "x0": float(x0), "beta": float(beta)})


def make_tabulated(knots: np.ndarray, values: np.ndarray) -> InfluenceFunction:
    """Piecewise-linear profile through (knots, values).

    Knots must be strictly increasing starting at 0, values nonincreasing
    from 1 to 0.  The support radius is the first knot where the value
    reaches 0.
    """
    knots = np.asarray(knots, dtype=float)
    values = np.asarray(values, dtype=float)
    if knots.ndim != 1 or knots.shape != values.shape or knots.size < 2:
        raise ValueError("knots and values must be equal-length 1-d arrays")
    if knots[0] != 0.0 or np.any(np.diff(knots) <= 0.0):
        raise ValueError("knots must start at 0 and increase strictly")
    if abs(values[0] - 1.0) > 1e-12:
        raise ValueError("profile must start at 1")
    if np.any(np.diff(values) > 1e-15):
        raise ValueError("profile values must be nonincreasing")
    if abs(values[-1]) > 1e-12:
        raise ValueError("profile must end at 0")
    zero = np.flatnonzero(np.abs(values) <= 1e-12)
    beta = float(knots[zero[0]])

    def profile(r: np.ndarray) -> np.ndarray:
        return np.interp(r, knots, values, right=0.0)

    lip = float(np.max(np.abs(np.diff(values) / np.diff(knots))))
    return InfluenceFunction("tabulated", beta, lip, profile,
                             {"knots": knots.tolist(), "values": values.tolist()})


def load_tabulated(path) -> InfluenceFunction:
    """Load a tabulated profile from a two-column CSV of (r, value) rows."""
    knots, values = [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#"):
                continue
            knots.append(float(row[0]))
            values.append(float(row[1]))
    return make_tabulated(np.array(knots), np.array(values))


def from_dict(payload: dict) -> InfluenceFunction:
    """Rebuild a profile from its serialized form."""
    kind = payload["kind"]
    params = payload["params"]
    if kind == "linear-hat":
        return make_linear_hat(params["beta"])
    if kind == "cosine-taper":
        return make_cosine_taper(params["beta"])
    if kind == "continuum":
        return make_continuum_profile(params["kappa"], params["lambda_star"],
                                      params["x0"], params["beta"])
    if kind == "tabulated":
        return make_tabulated(np.array(params["knots"]), np.array(params["values"]))
    raise ValueError(f"unknown influence kind {kind!r}")


def validate_profile(f: InfluenceFunction, samples: int = 4096) -> None:
    """Check the admissibility conditions on a dense grid; raise on failure.

    Verifies values in [0, 1], the limit 1 at r -> 0+, monotone decrease,
    vanishing outside the support, and the declared Lipschitz constant.
    """
    grid = np.linspace(0.0, f.beta, samples)
    vals = f(grid)
    if np.any(vals < -1e-12) or np.any(vals > 1.0 + 1e-12):
        raise ValueError("profile leaves [0, 1]")
    if abs(f(1e-9) - 1.0) > 1e-6:
        raise ValueError("profile does not tend to 1 at 0+")
    if np.any(np.diff(vals) > 1e-10):
        raise ValueError("profile is not nonincreasing")
    beyond = f(np.linspace(f.beta, min(np.pi, 2.0 * f.beta), 64))
    if np.any(np.abs(beyond) > 1e-12):
        raise ValueError("profile does not vanish outside its support")
    steps = np.abs(np.diff(vals))
    dx = grid[1] - grid[0]
    if np.any(steps > f.lip * dx * (1.0 + 1e-8) + 1e-14):
        raise ValueError("declared Lipschitz constant is violated on the grid")
