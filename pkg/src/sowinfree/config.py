"""Experiment decks: flat key-value text with dotted sections.

A deck is a plain text file of ``key = value`` lines.  Keys use dotted
sections (``model.kappa``, ``integration.h``); values are parsed as JSON
when possible (numbers, lists, booleans) and kept as bare strings otherwise.
``#`` starts a comment.  Matrices appear inline as row-major lists or as
``file:PATH`` references (CSV, resolved relative to the deck).

Example::

    kind = trap
    model.n = 3
    model.count = 5
    model.kappa = 2.5
    model.omega.mode = random
    model.omega.max_norm = 0.5
    influence.kind = linear-hat
    influence.beta = 1.2
    framework.gamma0 = 0.5
    integration.h = 0.01
    integration.t_end = 100
    seeds = [1, 2, 3]
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from sowinfree.analysis import FrameworkParams
from sowinfree.influence import (InfluenceFunction, load_tabulated,
                                 make_continuum_profile, make_cosine_taper,
                                 make_linear_hat)
from sowinfree.io import read_matrix_csv

KINDS = ("simulate", "trap", "herd", "stability", "sync", "equilibrium",
         "fixedpoint", "reduce2d")


class DeckError(ValueError):
    """Malformed or inconsistent experiment deck."""


def parse_deck(text: str) -> dict:
    """Parse deck text into a flat {dotted-key: value} mapping."""
    out: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DeckError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if not key:
            raise DeckError(f"line {lineno}: empty key")
        if key in out:
            raise DeckError(f"line {lineno}: duplicate key {key!r}")
        try:
            out[key] = json.loads(value)
        except json.JSONDecodeError:
            out[key] = value
    return out


def load_deck(path) -> dict:
    return parse_deck(Path(path).read_text())


@dataclass
class ExperimentSpec:
    """Fully resolved description of one experiment invocation."""

    kind: str
    kappa: float
    dim: int
    count: int
    influence: InfluenceFunction
    framework: FrameworkParams | None
    attraction: np.ndarray | None
    omega_mode: str                       # zero | explicit | random | shared-random
    omega_explicit: np.ndarray | None     # (count, n, n) when explicit
    omega_max_norm: float
    h: float
    t_end: float
    stepper: str
    stride: int
    seeds: list
    out_dir: Path
    init_radius: float
    follower_radius: float
    override_hypotheses: bool
    scan_lo: float | None
    scan_hi: float | None
    scan_num: int
    mapping: dict = field(default_factory=dict)     # canonical echo for hashing


def _get(mapping: dict, key: str, default=None, required: bool = False):
    if key in mapping:
        return mapping[key]
    if required:
        raise DeckError(f"missing required deck key {key!r}")
    return default


def _as_float(mapping: dict, key: str, default=None, required: bool = False) -> float | None:
    v = _get(mapping, key, default, required)
    if v is None:
        return None
    try:
        return float(v)
    except (TypeError, ValueError):
        raise DeckError(f"deck key {key!r} must be a number, got {v!r}") from None


def _as_int(mapping: dict, key: str, default=None, required: bool = False) -> int | None:
    v = _get(mapping, key, default, required)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
        raise DeckError(f"deck key {key!r} must be an integer, got {v!r}")
    return int(v)


def _matrix_value(value, dim: int, base: Path) -> np.ndarray:
    """Decode a matrix deck value: row-major list or file:PATH reference."""
    if isinstance(value, str):
        if not value.startswith("file:"):
            raise DeckError(f"matrix value must be a list or file:PATH, got {value!r}")
        m = read_matrix_csv(base / value[len("file:"):])
    else:
        entries = np.asarray(value, dtype=float)
        if entries.size != dim * dim:
            raise DeckError(f"matrix needs {dim * dim} row-major entries, got {entries.size}")
        m = entries.reshape(dim, dim)
    return m


def _build_influence(mapping: dict, base: Path) -> InfluenceFunction:
    kind = _get(mapping, "influence.kind", required=True)
    if kind == "linear-hat":
        return make_linear_hat(_as_float(mapping, "influence.beta", required=True))
    if kind == "cosine-taper":
        return make_cosine_taper(_as_float(mapping, "influence.beta", required=True))
    if kind == "continuum":
        return make_continuum_profile(
            kappa=_as_float(mapping, "influence.kappa", required=True),
            lambda_star=_as_float(mapping, "influence.lambda_star", required=True),
            x0=_as_float(mapping, "influence.x0", required=True),
            beta=_as_float(mapping, "influence.beta", required=True))
    if kind == "tabulated":
        return load_tabulated(base / _get(mapping, "influence.path", required=True))
    raise DeckError(f"unknown influence kind {kind!r}")


def build_spec(mapping: dict, base_dir=".", overrides: dict | None = None) -> ExperimentSpec:
    """Resolve a deck mapping (plus CLI overrides) into an ExperimentSpec.

    Overrides recognize the CLI flag names: seed, out, stepper, h, t_end,
    override_hypotheses.
    """
    base = Path(base_dir)
    mapping = dict(mapping)
    overrides = overrides or {}

    kind = _get(mapping, "kind", required=True)
    if kind not in KINDS:
        raise DeckError(f"unknown experiment kind {kind!r}; choose from {list(KINDS)}")
    dim = _as_int(mapping, "model.n", required=True)
    count = _as_int(mapping, "model.count", required=True)
    if dim < 2 or count < 1:
        raise DeckError("need model.n >= 2 and model.count >= 1")
    if kind == "reduce2d" and dim != 2:
        raise DeckError("reduce2d requires model.n = 2")
    kappa = _as_float(mapping, "model.kappa", required=True)
    if kappa < 0.0:
        raise DeckError("model.kappa must be nonnegative")

    influence = _build_influence(mapping, base)

    attraction = None
    attr_value = _get(mapping, "model.attraction", "identity")
    if attr_value != "identity":
        attraction = _matrix_value(attr_value, dim, base)
    if kind == "reduce2d" and attraction is not None:
        raise DeckError("reduce2d assumes the identity attraction point")

    omega_mode = _get(mapping, "model.omega.mode", "zero")
    if omega_mode not in ("zero", "explicit", "random", "shared-random"):
        raise DeckError(f"unknown model.omega.mode {omega_mode!r}")
    omega_explicit = None
    omega_max_norm = _as_float(mapping, "model.omega.max_norm", 0.0)
    if omega_mode == "explicit":
        rows = []
        for i in range(count):
            v = _get(mapping, f"model.omega.{i}")
            if v is None:
                raise DeckError(f"model.omega.{i} required for explicit frequencies")
            rows.append(_matrix_value(v, dim, base))
        omega_explicit = np.stack(rows)
    elif omega_mode in ("random", "shared-random") and omega_max_norm <= 0.0:
        raise DeckError("model.omega.max_norm must be positive for random frequencies")

    framework = None
    gamma0 = _as_float(mapping, "framework.gamma0")
    if gamma0 is not None:
        leaders = _get(mapping, "framework.leaders", [0])
        if not isinstance(leaders, list):
            raise DeckError("framework.leaders must be a list of indices")
        fw_beta = _as_float(mapping, "framework.beta", influence.beta)
        try:
            framework = FrameworkParams(beta=fw_beta, gamma0=gamma0,
                                        leaders=tuple(int(i) for i in leaders))
        except ValueError as exc:
            raise DeckError(f"framework parameters rejected: {exc}") from exc
    elif kind in ("trap", "herd", "stability", "sync", "equilibrium", "fixedpoint"):
        raise DeckError(f"experiment kind {kind!r} requires framework.gamma0")

    h = float(overrides.get("h") or _as_float(mapping, "integration.h", 1e-3))
    t_end = float(overrides.get("t_end") or _as_float(mapping, "integration.t_end", 10.0))
    stepper = overrides.get("stepper") or _get(mapping, "integration.stepper", "rkmk4")
    stride = _as_int(mapping, "integration.stride", 10)
    if h <= 0.0 or t_end < 0.0 or stride < 1:
        raise DeckError("need integration.h > 0, t_end >= 0, stride >= 1")

    if overrides.get("seed") is not None:
        seeds = [int(overrides["seed"])]
    else:
        raw_seeds = _get(mapping, "seeds", [0])
        if not isinstance(raw_seeds, list):
            raw_seeds = [raw_seeds]
        seeds = [int(s) for s in raw_seeds]
    for s in seeds:
        if not (0 <= s < 2 ** 64):
            raise DeckError(f"seed {s} outside the unsigned 64-bit range")

    out_dir = Path(overrides.get("out") or _get(mapping, "out", f"runs/{kind}"))

    init_radius = _as_float(mapping, "init.radius",
                            gamma0 if gamma0 is not None else 0.5)
    follower_radius = _as_float(mapping, "init.follower_radius", 1.3)
    if not (0.0 < init_radius <= np.pi) or not (0.0 < follower_radius <= np.pi):
        raise DeckError("initial sampling radii must lie in (0, pi]")

    echo = dict(mapping)
    echo["resolved.h"] = h
    echo["resolved.t_end"] = t_end
    echo["resolved.stepper"] = stepper
    echo["resolved.seeds"] = seeds

    return ExperimentSpec(
        kind=kind, kappa=kappa, dim=dim, count=count, influence=influence,
        framework=framework, attraction=attraction, omega_mode=omega_mode,
        omega_explicit=omega_explicit, omega_max_norm=omega_max_norm or 0.0,
        h=h, t_end=t_end, stepper=stepper, stride=stride, seeds=seeds,
        out_dir=out_dir, init_radius=init_radius, follower_radius=follower_radius,
        override_hypotheses=bool(overrides.get("override_hypotheses", False)),
        scan_lo=_as_float(mapping, "scan.lo"), scan_hi=_as_float(mapping, "scan.hi"),
        scan_num=_as_int(mapping, "scan.num", 10001), mapping=echo)


def load_spec(path, overrides: dict | None = None) -> ExperimentSpec:
    deck_path = Path(path)
    return build_spec(load_deck(deck_path), base_dir=deck_path.parent,
                      overrides=overrides)
