"""Coupling thresholds, decay rates, hypothesis validation, certificates.

The trapping/synchronization framework is parametrized by an influence
support radius ``beta`` and an initial confinement radius ``gamma0`` with

    0 < beta < pi/2,   0 < gamma0 < 2 sin(beta/2),
    gamma = 2 arcsin(gamma0 / 2) < beta.

Closed-form quantities:

* trapping threshold      kappa_trap = max_j ||Omega_j|| / (I(gamma) sin(2 sin(gamma/2)))
* critical coupling       kappa_c(gamma, N0) = (count/N0) max_j ||Omega_j|| / (sin(2 sin(gamma/2)) I(gamma))
* leader ball radius      Gamma_i = sqrt(2 + 2 sqrt(1 - rho_i^2)),
                          rho_i = count ||Omega_i|| / (kappa I(gamma))
* asymptotic radius       2 arcsin( arcsin(rho_i / N0-scaled) / 2 )
* contraction rates       lambda1 = kappa (cos(gamma) I(gamma) - gamma Lip*I)
                          lambda2 = kappa  cos(gamma) I(gamma)

``Lip*I`` is the analytic ambient Lipschitz bound of the influence module.
Certificates check integrated trajectories against these guarantees and are
serialized by the harness as JSON objects with a PASS/FAIL outcome and
numeric witnesses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from sowinfree.dynamics import ModelConfig, TrajectoryRecord, batch_distances
from sowinfree.influence import InfluenceFunction, ambient_lipschitz_bound

CERT_SLACK = 1e-6       # additive/multiplicative slack admitted by certificates
RATE_TOL = 0.05         # relative tolerance on fitted decay rates
RATE_BURN_IN = 0.10     # fraction of the horizon discarded before rate fits
UNDERFLOW = 1e-13       # l1 separations below this count as converged
TAIL_FRACTION = 0.20    # trailing fraction used for asymptotic-radius checks


class InfeasibleFrameworkError(ValueError):
    """A closed-form threshold is undefined for these parameters."""


@dataclass(frozen=True)
class FrameworkParams:
    """Admissible (beta, gamma0) pair, plus the leader set for herding runs.

    ``leaders`` indexes the oscillators required to start inside the small
    ball; ``count0`` is its size.
    """

    beta: float
    gamma0: float
    leaders: tuple = (0,)

    def __post_init__(self):
        if not (0.0 < self.beta < np.pi / 2.0):
            raise ValueError(f"beta must lie in (0, pi/2), got {self.beta}")
        if not (0.0 < self.gamma0 < 2.0 * np.sin(self.beta / 2.0)):
            raise ValueError(
                f"gamma0 must lie in (0, 2 sin(beta/2)) = (0, {2.0 * np.sin(self.beta / 2.0)})")
        if len(self.leaders) < 1 or len(set(self.leaders)) != len(self.leaders):
            raise ValueError("leaders must be a nonempty set of distinct indices")
        if self.gamma >= self.beta:  # guaranteed by the gamma0 bound; keep as a guard
            raise ValueError("derived gamma is not below beta")

    @property
    def gamma(self) -> float:
        return gamma_of(self.gamma0)

    @property
    def count0(self) -> int:
        return len(self.leaders)


def gamma_of(gamma0: float) -> float:
    """Geodesic radius 2 arcsin(gamma0/2) matching chordal radius gamma0."""
    if not (0.0 <= gamma0 <= 2.0):
        raise ValueError(f"gamma0 must lie in [0, 2], got {gamma0}")
    return float(2.0 * np.arcsin(gamma0 / 2.0))


def _influence_at_gamma(f: InfluenceFunction, gamma: float) -> float:
    val = float(f(gamma))
    if val <= 0.0:
        raise InfeasibleFrameworkError(
            f"influence vanishes at gamma = {gamma}: thresholds are undefined")
    return val


def kappa_trapping(fw: FrameworkParams, cfg: ModelConfig) -> float:
    """Coupling threshold above which the gamma-ball traps the ensemble."""
    g = fw.gamma
    return float(cfg.max_frequency_norm
                 / (_influence_at_gamma(cfg.influence, g) * np.sin(2.0 * np.sin(g / 2.0))))


def kappa_critical(fw: FrameworkParams, cfg: ModelConfig) -> float:
    """Critical coupling for count0 leaders herding the full ensemble."""
    g = fw.gamma
    return float(cfg.count / fw.count0 * cfg.max_frequency_norm
                 / (np.sin(2.0 * np.sin(g / 2.0)) * _influence_at_gamma(cfg.influence, g)))


def leader_ratio(fw: FrameworkParams, cfg: ModelConfig) -> np.ndarray:
    """Per-oscillator ratios count ||Omega_i|| / (kappa I(gamma))."""
    g = fw.gamma
    if cfg.kappa <= 0.0:
        raise InfeasibleFrameworkError("positive coupling required")
    return cfg.count * cfg.frequency_norms / (cfg.kappa * _influence_at_gamma(cfg.influence, g))


def big_gamma(fw: FrameworkParams, cfg: ModelConfig) -> np.ndarray:
    """Follower ball radii Gamma_i = sqrt(2 + 2 sqrt(1 - rho_i^2)).

    Defined while rho_i <= 1; equals 2 cos(arcsin(rho_i)/2), so it runs from
    2 at rho = 0 down to sqrt(2) at rho = 1.
    """
    rho = leader_ratio(fw, cfg)
    if np.any(rho > 1.0):
        raise InfeasibleFrameworkError(
            f"frequency/coupling ratio exceeds 1 (max {np.max(rho)}): no follower ball")
    return np.sqrt(2.0 + 2.0 * np.sqrt(1.0 - rho ** 2))


def asymptotic_radius(fw: FrameworkParams, cfg: ModelConfig) -> np.ndarray:
    """Per-oscillator asymptotic distances 2 arcsin(arcsin(rho_i/count0)/2)."""
    rho = leader_ratio(fw, cfg) / fw.count0
    if np.any(rho > 1.0):
        raise InfeasibleFrameworkError("frequency/coupling ratio exceeds 1")
    return 2.0 * np.arcsin(np.arcsin(rho) / 2.0)


def contraction_rates(fw: FrameworkParams, cfg: ModelConfig) -> tuple[float, float]:
    """(lambda1, lambda2): heterogeneous l1 rate and homogeneous pairwise rate.

    lambda1 uses the analytic ambient Lipschitz bound of the profile, so it
    is a usable (possibly conservative) certificate rate; lambda2 drops the
    Lipschitz penalty and is always the larger of the two.
    """
    g = fw.gamma
    ig = _influence_at_gamma(cfg.influence, g)
    lam2 = cfg.kappa * np.cos(g) * ig
    lam1 = lam2 - cfg.kappa * g * ambient_lipschitz_bound(cfg.influence)
    return float(lam1), float(lam2)


# ---------------------------------------------------------------------------
# hypothesis validation


@dataclass
class ValidationReport:
    """Itemized pass/fail record of framework hypothesis checks."""

    items: list = field(default_factory=list)

    def add(self, name: str, ok: bool, detail: str) -> None:
        self.items.append({"name": name, "ok": bool(ok), "detail": detail})

    @property
    def ok(self) -> bool:
        return all(item["ok"] for item in self.items)

    @property
    def failures(self) -> list:
        return [item["name"] for item in self.items if not item["ok"]]


def validate_framework(cfg: ModelConfig, fw: FrameworkParams,
                       initial: np.ndarray | None = None,
                       mode: str = "hetero") -> ValidationReport:
    """Check the admissibility and coupling hypotheses for a planned run.

    ``mode`` selects the hypothesis set: ``hetero`` (full-ensemble trapping),
    ``homog`` (identical frequencies), or ``herd`` (leader subset only).
    When ``initial`` is given the confinement hypothesis on the initial data
    is checked as well.
    """
    if mode not in ("hetero", "homog", "herd"):
        raise ValueError(f"unknown validation mode {mode!r}")
    rep = ValidationReport()
    rep.add("support-radius", 0.0 < cfg.influence.beta < np.pi / 2.0,
            f"beta = {cfg.influence.beta}")
    rep.add("support-matches-framework", abs(cfg.influence.beta - fw.beta) < 1e-12,
            f"profile beta = {cfg.influence.beta}, framework beta = {fw.beta}")
    g = fw.gamma
    rep.add("radii-ordering", g < fw.beta, f"gamma = {g}, beta = {fw.beta}")
    try:
        ig = _influence_at_gamma(cfg.influence, g)
        rep.add("influence-positive-at-gamma", True, f"I(gamma) = {ig}")
    except InfeasibleFrameworkError as exc:
        rep.add("influence-positive-at-gamma", False, str(exc))
        return rep

    if mode == "homog":
        rep.add("homogeneous-frequencies", cfg.homogeneous(),
                f"max deviation {np.max(np.abs(cfg.frequencies - cfg.frequencies[0]))}")
        thr = cfg.max_frequency_norm / (ig * np.sin(2.0 * np.sin(g / 2.0)))
        rep.add("coupling-above-threshold", cfg.kappa > thr,
                f"kappa = {cfg.kappa}, threshold = {thr}")
    elif mode == "hetero":
        thr = kappa_trapping(fw, cfg)
        rep.add("coupling-above-threshold", cfg.kappa > thr,
                f"kappa = {cfg.kappa}, threshold = {thr}")
    else:
        ok_idx = all(0 <= i < cfg.count for i in fw.leaders)
        rep.add("leader-indices", ok_idx, f"leaders = {list(fw.leaders)}, count = {cfg.count}")
        if not ok_idx:
            return rep
        thr = kappa_critical(fw, cfg)
        rep.add("coupling-above-critical", cfg.kappa > thr,
                f"kappa = {cfg.kappa}, kappa_c = {thr}")
        try:
            big_gamma(fw, cfg)
            rep.add("follower-radii-defined", True, "ratios within [0, 1]")
        except InfeasibleFrameworkError as exc:
            rep.add("follower-radii-defined", False, str(exc))

    if initial is not None:
        d0 = batch_distances(np.asarray(initial, dtype=float), cfg.attraction)
        if mode == "herd":
            lead = np.array(sorted(fw.leaders))
            rep.add("leaders-inside-small-ball", bool(np.all(d0[lead] < fw.gamma0)),
                    f"leader distances {d0[lead].tolist()}, gamma0 = {fw.gamma0}")
            rest = np.setdiff1d(np.arange(cfg.count), lead)
            if rest.size:
                try:
                    radii = big_gamma(fw, cfg)
                    rep.add("followers-inside-their-balls",
                            bool(np.all(d0[rest] < radii[rest])),
                            f"max excess {np.max(d0[rest] - radii[rest])}")
                except InfeasibleFrameworkError as exc:
                    rep.add("followers-inside-their-balls", False, str(exc))
        else:
            rep.add("initial-data-confined", bool(np.all(d0 < fw.gamma0)),
                    f"max initial distance {np.max(d0)}, gamma0 = {fw.gamma0}")
    return rep


# ---------------------------------------------------------------------------
# certificates


@dataclass
class Certificate:
    """Outcome of checking one guarantee against a trajectory."""

    name: str
    passed: bool
    hypotheses: dict
    witnesses: dict

    @property
    def outcome(self) -> str:
        return "PASS" if self.passed else "FAIL"

    def to_dict(self) -> dict:
        return {"name": self.name, "hypotheses": self.hypotheses,
                "outcome": self.outcome, "witnesses": self.witnesses}


def _fw_echo(fw: FrameworkParams, cfg: ModelConfig) -> dict:
    return {
        "beta": fw.beta, "gamma0": fw.gamma0, "gamma": fw.gamma,
        "kappa": cfg.kappa, "count": cfg.count, "dim": cfg.n,
        "max_frequency_norm": cfg.max_frequency_norm,
        "influence": cfg.influence.to_dict()["kind"],
    }


def certify_trapping(record: TrajectoryRecord, fw: FrameworkParams,
                     cfg: ModelConfig) -> Certificate:
    """PASS iff every oscillator stays within gamma (+ slack) at all samples."""
    bound = fw.gamma + CERT_SLACK
    worst = float(np.max(record.distances))
    k, i = np.unravel_index(int(np.argmax(record.distances)), record.distances.shape)
    return Certificate(
        "trapping", worst <= bound, _fw_echo(fw, cfg),
        {"max_distance": worst, "bound": bound, "time_of_max": float(record.times[k]),
         "oscillator_of_max": int(i), "margin": bound - worst})


def certify_herding(record: TrajectoryRecord, fw: FrameworkParams,
                    cfg: ModelConfig) -> Certificate:
    """Leaders must stay within gamma throughout; everyone must end below the
    asymptotic radius.

    The asymptotic check averages over nothing: it requires every sample in
    the trailing fraction of the horizon to sit below radius + slack.
    """
    lead = np.array(sorted(fw.leaders))
    leader_worst = float(np.max(record.distances[:, lead]))
    leader_ok = leader_worst <= fw.gamma + CERT_SLACK
    radii = asymptotic_radius(fw, cfg)
    tail = max(1, int(np.ceil(TAIL_FRACTION * record.distances.shape[0])))
    tail_max = record.distances[-tail:].max(axis=0)
    excess = tail_max - (radii + CERT_SLACK)
    tail_ok = bool(np.all(excess <= 0.0))
    return Certificate(
        "herding", leader_ok and tail_ok, _fw_echo(fw, cfg),
        {"leader_max_distance": leader_worst, "leader_bound": fw.gamma + CERT_SLACK,
         "asymptotic_radii": radii.tolist(), "tail_max_distances": tail_max.tolist(),
         "tail_samples": int(tail), "max_excess": float(np.max(excess))})


@dataclass
class RateReport:
    """Least-squares decay-rate fit of a positive signal on a time window."""

    slope: float
    intercept: float
    residual: float
    window: tuple
    samples: int


def fit_decay_rate(times: np.ndarray, values: np.ndarray,
                   burn_in: float = RATE_BURN_IN,
                   floor: float = UNDERFLOW) -> RateReport:
    """Fit log(values) ~ intercept + slope * t after a burn-in window.

    Values at or below ``floor`` are treated as converged and excluded.
    """
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    t0 = times[0] + burn_in * (times[-1] - times[0])
    keep = (times >= t0) & (values > floor)
    if np.count_nonzero(keep) < 3:
        raise ValueError("fewer than 3 usable samples for a rate fit")
    t = times[keep]
    y = np.log(values[keep])
    coef, res, *_ = np.polyfit(t, y, 1, full=True)
    residual = float(np.sqrt(res[0] / t.size)) if len(res) else 0.0
    return RateReport(slope=float(coef[0]), intercept=float(coef[1]),
                      residual=residual, window=(float(t[0]), float(t[-1])),
                      samples=int(t.size))


def certify_l1_contraction(rec_a: TrajectoryRecord, rec_b: TrajectoryRecord,
                           fw: FrameworkParams, cfg: ModelConfig) -> Certificate:
    """Exponential l1 contraction between two confined trajectories.

    PASS iff lambda1 > 0, the separation obeys the envelope
    ``l1(0) exp(-lambda1 t)`` with multiplicative slack at every sample
    (samples under the underflow floor are skipped), and the fitted decay
    rate is at least lambda1 (the rates are lower bounds, so faster decay
    passes) within the relative rate tolerance.
    """
    lam1, lam2 = contraction_rates(fw, cfg)
    sep = rec_a.l1_distance_to(rec_b)
    t = rec_a.times
    envelope = sep[0] * np.exp(-lam1 * (t - t[0])) * (1.0 + CERT_SLACK)
    live = sep > UNDERFLOW
    if np.count_nonzero(live) < 3:   # (near-)identical trajectories: no fittable decay
        return Certificate(
            "l1-contraction", lam1 > 0.0, _fw_echo(fw, cfg),
            {"lambda1": lam1, "lambda2": lam2, "initial_separation": float(sep[0]),
             "degenerate": True, "live_samples": int(np.count_nonzero(live))})
    env_ok = bool(np.all(sep[live] <= envelope[live])) and lam1 > 0.0
    fit = fit_decay_rate(t, sep)
    rate_ok = -fit.slope >= lam1 * (1.0 - RATE_TOL)
    worst = float(np.max(sep[live] / envelope[live])) if np.any(live) else 0.0
    return Certificate(
        "l1-contraction", env_ok and rate_ok, _fw_echo(fw, cfg),
        {"lambda1": lam1, "lambda2": lam2, "initial_separation": float(sep[0]),
         "fitted_rate": -fit.slope, "fit_window": list(fit.window),
         "fit_residual": fit.residual, "worst_envelope_ratio": worst,
         "envelope_ok": env_ok, "rate_ok": bool(rate_ok)})


def pairwise_norms(states: np.ndarray) -> np.ndarray:
    """Half-Frobenius norms ||R_i - R_j|| for i < j, shape (..., pairs)."""
    count = states.shape[-3]
    ii, jj = np.triu_indices(count, k=1)
    diff = states[..., ii, :, :] - states[..., jj, :, :]
    return np.sqrt(np.einsum("...ij,...ij->...", diff, diff) / 2.0)


def certify_pairwise_sync(record: TrajectoryRecord, fw: FrameworkParams,
                          cfg: ModelConfig) -> Certificate:
    """Homogeneous synchronization: each pair separation obeys its own
    ``exp(-lambda2 t)`` envelope.

    A tiny absolute floor covers pairs that start numerically identical.
    Also witnesses the strict ordering lambda2 > lambda1.
    """
    lam1, lam2 = contraction_rates(fw, cfg)
    if record.states is None:
        raise ValueError("pairwise certification needs recorded states")
    sep = pairwise_norms(record.states)              # (samples, pairs)
    t = record.times[:, None]
    envelope = sep[0][None] * np.exp(-lam2 * (t - t[0])) * (1.0 + CERT_SLACK) + 1e-12
    env_ok = bool(np.all(sep <= envelope))
    worst = float(np.max(sep / envelope))
    return Certificate(
        "pairwise-sync", env_ok and lam2 > lam1, _fw_echo(fw, cfg),
        {"lambda2": lam2, "lambda1": lam1, "rate_gap": lam2 - lam1,
         "pairs": int(sep.shape[1]), "initial_max_separation": float(np.max(sep[0])),
         "worst_envelope_ratio": worst})
