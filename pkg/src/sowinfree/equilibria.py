"""Phase-locked equilibria and the scalar self-consistency problem.

At an equilibrium of the coupled flow with identity attraction, each
oscillator satisfies

    Omega_i / (kappa x) = (R_i - R_i^T) / 2,      x = mean influence,

so the canonical planes of ``R_i`` are the canonical planes of ``Omega_i``
and the block angles obey ``sin(theta_ij) = lambda_ij / (kappa x)``, with a
branch choice ``theta`` in (0, pi/2] or [pi/2, pi) per block.  Closing the
loop over the ensemble gives the scalar fixed-point problem ``x = f(x)``:

    f(x) = (1/count) sum_i profile( sqrt(sum_j arcsin^2(lambda_ij/(kappa x))) )

with elementary bounds g <= f <= h, where g replaces the block norm by the
arcsin of the frequency norm ratio and h by the plain ratio.  The solver
brackets a root with g/h and bisects; a dense scan utility accompanies it
for diagnostics (and to expose fixed-point intervals, which exist for
profiles built by the continuum construction).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from sowinfree.analysis import (CERT_SLACK, Certificate, FrameworkParams,
                                _fw_echo, contraction_rates)
from sowinfree.dynamics import (ModelConfig, TrajectoryRecord, batch_distances,
                                generators)
from sowinfree.geometry import canonical_rotation_form, canonical_skew_form, norm

FIXED_POINT_TOL = 1e-12     # residual |x - f(x)| demanded of the solver
SCAN_FLAG_TOL = 1e-10       # |x - f(x)| at or below this flags a near-root
EQUILIBRIUM_TOL = 1e-10     # admitted defect in algebraic equilibrium identities


class FixedPointError(RuntimeError):
    """Bracketing or bisection for the self-consistency problem failed."""


@dataclass(frozen=True)
class BlockData:
    """Canonical planes of one frequency matrix: basis and positive rates."""

    basis: np.ndarray
    rates: np.ndarray


def frequency_blocks(cfg: ModelConfig) -> list:
    """Canonical block data of every oscillator's frequency matrix."""
    out = []
    for i in range(cfg.count):
        form = canonical_skew_form(cfg.frequencies[i])
        out.append(BlockData(basis=form.basis, rates=form.rates))
    return out


def _block_distance(blocks: BlockData, kappa: float, x: np.ndarray) -> np.ndarray:
    """Equilibrium distance sqrt(sum_j arcsin^2(lambda_j / (kappa x)))."""
    if blocks.rates.size == 0:
        return np.zeros_like(np.asarray(x, dtype=float))
    ratio = blocks.rates[None, :] / (kappa * np.asarray(x, dtype=float)[:, None])
    if np.any(ratio > 1.0 + 1e-15):
        raise ValueError("arcsin argument exceeds 1: x below the admissible range")
    th = np.arcsin(np.clip(ratio, 0.0, 1.0))
    return np.sqrt(np.einsum("xk,xk->x", th, th))


def mean_influence_map(x, cfg: ModelConfig, blocks: list | None = None):
    """The self-consistency map f; accepts scalars or 1-d arrays."""
    if blocks is None:
        blocks = frequency_blocks(cfg)
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    if np.any(xs <= 0.0):
        raise ValueError("x must be positive")
    acc = np.zeros_like(xs)
    for b in blocks:
        acc += cfg.influence.profile(_block_distance(b, cfg.kappa, xs))
    out = acc / cfg.count
    return float(out[0]) if np.isscalar(x) or np.ndim(x) == 0 else out


def lower_bound_map(x, cfg: ModelConfig):
    """g(x): profile at arcsin of the frequency-norm ratios (g <= f)."""
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    ratio = cfg.frequency_norms[None, :] / (cfg.kappa * xs[:, None])
    vals = cfg.influence.profile(np.arcsin(np.clip(ratio, 0.0, 1.0)))
    vals = np.where(ratio > 1.0, 0.0, vals)     # out of range: worst case
    out = vals.mean(axis=1)
    return float(out[0]) if np.ndim(x) == 0 else out


def upper_bound_map(x, cfg: ModelConfig):
    """h(x): profile at the plain frequency-norm ratios (f <= h)."""
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    ratio = cfg.frequency_norms[None, :] / (cfg.kappa * xs[:, None])
    out = cfg.influence.profile(ratio).mean(axis=1)
    return float(out[0]) if np.ndim(x) == 0 else out


@dataclass
class FixedPointResult:
    x_star: float
    residual: float
    iterations: int
    bracket: tuple
    interior: bool          # strictly above the arcsin-domain edge


def solve_fixed_point(cfg: ModelConfig, fw: FrameworkParams,
                      tol: float = FIXED_POINT_TOL) -> FixedPointResult:
    """Bracketed bisection for ``x = f(x)``.

    Requires the coupling condition ``kappa sin(gamma) I(gamma) >= max_j
    ||Omega_j||`` (up to rounding; profiles from the continuum construction
    sit exactly on the boundary).  The lower bracket starts just above the
    arcsin-domain edge ``max ||Omega|| / (kappa sin gamma)`` with a margin
    halved until ``x - g(x) <= 0``; the upper bracket starts at 1 and is
    doubled until ``x >= h(x)``.  Bisection runs until the residual
    ``|x - f(x)|`` is at or below ``tol``.
    """
    g = fw.gamma
    igamma = float(cfg.influence(g))
    max_norm = cfg.max_frequency_norm
    if cfg.kappa * np.sin(g) * igamma < max_norm * (1.0 - 1e-12):
        raise FixedPointError(
            f"coupling condition fails: kappa sin(gamma) I(gamma) = "
            f"{cfg.kappa * np.sin(g) * igamma} < max frequency norm {max_norm}")
    blocks = frequency_blocks(cfg)

    def phi(x: float) -> float:
        return x - mean_influence_map(x, cfg, blocks)

    edge = max_norm / (cfg.kappa * np.sin(g))
    eps = 1e-3 * edge if edge > 0.0 else 1e-3
    lo = None
    for _ in range(60):
        cand = edge + eps
        if cand - lower_bound_map(cand, cfg) <= 0.0:
            lo = cand
            break
        eps /= 2.0
    if lo is None:
        raise FixedPointError("no lower bracket: x - g(x) stayed positive near the domain edge")
    hi = 1.0
    for _ in range(60):
        if hi >= upper_bound_map(hi, cfg):
            break
        hi *= 2.0
    else:
        raise FixedPointError("no upper bracket: x stayed below h(x)")

    f_lo, f_hi = phi(lo), phi(hi)
    if f_lo > 0.0 or f_hi < 0.0:
        raise FixedPointError(f"bracket does not straddle a root: phi({lo}) = {f_lo}, "
                              f"phi({hi}) = {f_hi}")
    best_x, best_r = (lo, abs(f_lo)) if abs(f_lo) <= abs(f_hi) else (hi, abs(f_hi))
    iters = 0
    while best_r > tol and iters < 200:
        mid = 0.5 * (lo + hi)
        f_mid = phi(mid)
        iters += 1
        if abs(f_mid) < best_r:
            best_x, best_r = mid, abs(f_mid)
        if f_mid <= 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-17 * max(1.0, hi):
            break
    if best_r > tol:
        raise FixedPointError(f"bisection stalled at residual {best_r}")
    return FixedPointResult(x_star=float(best_x), residual=float(best_r),
                            iterations=iters, bracket=(float(lo), float(hi)),
                            interior=bool(best_x > edge))


@dataclass
class ScanResult:
    """Dense tabulation of the self-consistency defect x - f(x)."""

    xs: np.ndarray
    values: np.ndarray          # f(x)
    defects: np.ndarray         # x - f(x)
    sign_changes: list          # bracketing index pairs (i, i+1)
    flagged: np.ndarray         # boolean: |defect| <= flag tolerance


def scan_fixed_points(cfg: ModelConfig, lo: float, hi: float, num: int,
                      flag_tol: float = SCAN_FLAG_TOL) -> ScanResult:
    """Evaluate the map on a uniform grid and locate roots.

    The grid must start above the arcsin-domain edge.  Sign changes of the
    defect bracket isolated roots; the flagged mask exposes whole intervals
    of fixed points when the profile admits them.
    """
    if not (0.0 < lo < hi):
        raise ValueError("need 0 < lo < hi")
    blocks = frequency_blocks(cfg)
    top_rate = max((float(b.rates[0]) for b in blocks if b.rates.size), default=0.0)
    if lo * cfg.kappa < top_rate:
        raise ValueError(f"grid start {lo} below the admissible edge {top_rate / cfg.kappa}")
    xs = np.linspace(lo, hi, num)
    vals = mean_influence_map(xs, cfg, blocks)
    defects = xs - vals
    signs = np.sign(defects)
    flips = np.flatnonzero(np.diff(signs) != 0)
    return ScanResult(xs=xs, values=vals, defects=defects,
                      sign_changes=[(int(i), int(i + 1)) for i in flips],
                      flagged=np.abs(defects) <= flag_tol)


# ---------------------------------------------------------------------------
# equilibrium ensembles


@dataclass
class EquilibriumEnsemble:
    """Closed-form equilibrium: rotations plus their construction data."""

    rotations: np.ndarray
    x_star: float
    angles: list            # per oscillator: block angles, descending rates order
    branch_flags: list      # per oscillator: 0 principal / 1 reflected, per block

    @property
    def count(self) -> int:
        return self.rotations.shape[0]


def construct_equilibrium(cfg: ModelConfig, x_star: float,
                          branch_flags: list | None = None) -> EquilibriumEnsemble:
    """Build the equilibrium ensemble at mean-influence level ``x_star``.

    Block angles are ``arcsin(lambda_ij / (kappa x_star))`` on the principal
    branch (flag 0) or pi minus that on the reflected branch (flag 1).
    Verifies the skew-part identity ``(R - R^T)/2 = Omega/(kappa x_star)``
    to EQUILIBRIUM_TOL before returning.
    """
    if x_star <= 0.0:
        raise ValueError("x_star must be positive")
    blocks = frequency_blocks(cfg)
    if branch_flags is None:
        branch_flags = [[0] * b.rates.size for b in blocks]
    rotations = np.empty_like(cfg.frequencies)
    angles_out = []
    for i, b in enumerate(blocks):
        flags = branch_flags[i]
        if len(flags) != b.rates.size:
            raise ValueError(f"oscillator {i}: {len(flags)} flags for {b.rates.size} blocks")
        ratio = b.rates / (cfg.kappa * x_star)
        if np.any(ratio > 1.0):
            raise ValueError(f"oscillator {i}: rate ratio exceeds 1 at x_star = {x_star}")
        th = np.arcsin(ratio)
        th = np.where(np.asarray(flags, dtype=int) == 1, np.pi - th, th)
        n = cfg.n
        lam = np.eye(n)
        for j, a in enumerate(th):
            k = 2 * j
            c, s = np.cos(a), np.sin(a)
            lam[k, k] = c
            lam[k, k + 1] = -s
            lam[k + 1, k] = s
            lam[k + 1, k + 1] = c
        rotations[i] = b.basis.T @ lam @ b.basis
        angles_out.append(th.tolist())
        skew_part = (rotations[i] - rotations[i].T) / 2.0
        defect = norm(skew_part - cfg.frequencies[i] / (cfg.kappa * x_star))
        if defect > EQUILIBRIUM_TOL:
            raise RuntimeError(f"oscillator {i}: skew-part identity defect {defect}")
    return EquilibriumEnsemble(rotations=rotations, x_star=float(x_star),
                               angles=angles_out, branch_flags=branch_flags)


def equilibrium_residual(rotations: np.ndarray, cfg: ModelConfig) -> float:
    """Largest generator norm over the ensemble; zero exactly at equilibria.

    Right-invariance makes ``||A_i R_i|| = ||A_i||``, so this is the true
    stationarity defect of the flow.
    """
    return float(np.max(norm(generators(rotations, cfg))))


def self_consistency_gap(ens: EquilibriumEnsemble, cfg: ModelConfig) -> float:
    """|mean influence of the ensemble - x_star|."""
    d = batch_distances(ens.rotations, cfg.attraction)
    return float(abs(np.mean(cfg.influence.profile(d)) - ens.x_star))


def distance_sandwich(ens: EquilibriumEnsemble, cfg: ModelConfig) -> dict:
    """Check ratio <= d(I, R_i) <= arcsin(ratio) per oscillator.

    Applies to principal-branch ensembles; returns the worst defects (values
    at or below zero mean the bound holds).
    """
    d = batch_distances(ens.rotations, cfg.attraction)
    ratio = cfg.frequency_norms / (cfg.kappa * ens.x_star)
    upper = np.arcsin(np.clip(ratio, 0.0, 1.0))
    return {
        "distances": d.tolist(),
        "lower_defect": float(np.max(ratio - d)),
        "upper_defect": float(np.max(d - upper)),
    }


def certify_equilibrium(ens: EquilibriumEnsemble, fp: FixedPointResult,
                        fw: FrameworkParams, cfg: ModelConfig) -> Certificate:
    """Algebraic certificate: solver residual, skew-part identity already
    enforced at construction, self-consistency, and the distance sandwich."""
    gap = self_consistency_gap(ens, cfg)
    sandwich = distance_sandwich(ens, cfg)
    resid = equilibrium_residual(ens.rotations, cfg)
    ok = (fp.residual <= FIXED_POINT_TOL and gap <= EQUILIBRIUM_TOL
          and sandwich["lower_defect"] <= EQUILIBRIUM_TOL
          and sandwich["upper_defect"] <= EQUILIBRIUM_TOL)
    return Certificate(
        "equilibrium-construction", bool(ok), _fw_echo(fw, cfg),
        {"x_star": ens.x_star, "solver_residual": fp.residual,
         "solver_iterations": fp.iterations, "interior": fp.interior,
         "self_consistency_gap": gap, "flow_residual": resid, **sandwich})


def certify_stationarity(record: TrajectoryRecord, ens: EquilibriumEnsemble,
                         tol: float, fw: FrameworkParams,
                         cfg: ModelConfig) -> Certificate:
    """PASS iff the trajectory started at the equilibrium stays within
    ``tol`` of it in l1 at every sample."""
    move = record.l1_distance_to_point(ens.rotations)
    worst = float(np.max(move))
    return Certificate(
        "equilibrium-stationarity", worst <= tol, _fw_echo(fw, cfg),
        {"max_l1_move": worst, "tolerance": tol,
         "horizon": float(record.times[-1])})


def certify_relaxation(record: TrajectoryRecord, ens: EquilibriumEnsemble,
                       fw: FrameworkParams, cfg: ModelConfig,
                       final_tol: float = 1e-8) -> Certificate:
    """Convergence to the constructed equilibrium at rate lambda1.

    The envelope is anchored at the first sample where the whole ensemble
    sits inside the gamma-ball (entry time); PASS also needs the final l1
    distance at or below ``final_tol``.
    """
    lam1, _ = contraction_rates(fw, cfg)
    dist = record.l1_distance_to_point(ens.rotations)
    inside = np.all(record.distances <= fw.gamma + CERT_SLACK, axis=1)
    if not np.any(inside):
        return Certificate("equilibrium-relaxation", False, _fw_echo(fw, cfg),
                           {"entry_time": None, "detail": "never entered the gamma ball"})
    k0 = int(np.argmax(inside))
    t = record.times
    envelope = dist[k0] * np.exp(-lam1 * (t[k0:] - t[k0])) * (1.0 + CERT_SLACK) + 1e-12
    env_ok = bool(np.all(dist[k0:] <= envelope))
    final = float(dist[-1])
    return Certificate(
        "equilibrium-relaxation", env_ok and final <= final_tol and lam1 > 0.0,
        _fw_echo(fw, cfg),
        {"lambda1": lam1, "entry_time": float(t[k0]), "entry_l1": float(dist[k0]),
         "final_l1": final, "final_tol": final_tol, "envelope_ok": env_ok})


# ---------------------------------------------------------------------------
# homogeneous classification


@dataclass
class Classification:
    label: str
    residual: float
    details: dict


def classify_homogeneous(rotations: np.ndarray, cfg: ModelConfig,
                         tol: float = EQUILIBRIUM_TOL) -> Classification:
    """Classify a homogeneous-ensemble configuration as an equilibrium type.

    Labels: ``class-B`` (every rotation is an involution, R^2 = I),
    ``class-A`` (zero frequency with the whole ensemble outside the support,
    so the mean influence vanishes), ``generic-branch`` (stationary with
    nonzero frequency: block angles on arcsin branches at a self-consistent
    level), or ``non-equilibrium``.
    """
    if not cfg.homogeneous():
        raise ValueError("classification applies to homogeneous ensembles")
    rotations = np.asarray(rotations, dtype=float)
    resid = equilibrium_residual(rotations, cfg)
    d = batch_distances(rotations, cfg.attraction)
    mean_inf = float(np.mean(cfg.influence.profile(d)))
    details: dict = {"mean_influence": mean_inf, "distances": d.tolist()}
    if resid > tol:
        return Classification("non-equilibrium", resid, details)
    sq_defect = float(np.max(norm(rotations @ rotations - np.eye(cfg.n))))
    if sq_defect <= tol:
        details["involution_defect"] = sq_defect
        return Classification("class-B", resid, details)
    if cfg.max_frequency_norm <= tol and mean_inf <= tol:
        details["min_distance"] = float(np.min(d))
        return Classification("class-A", resid, details)
    flags = []
    for i in range(rotations.shape[0]):
        th = canonical_rotation_form(rotations[i]).angles
        flags.append([int(a > np.pi / 2.0) for a in th])
    details["branch_flags"] = flags
    details["x_level"] = mean_inf
    return Classification("generic-branch", resid, details)


def skew_rate_multiset(x: np.ndarray) -> np.ndarray:
    """Sorted squared block rates of a skew matrix."""
    return np.sort(canonical_skew_form(x).rates ** 2)


def check_skew_multiset(a: np.ndarray, b: np.ndarray, tol: float = 1e-9) -> bool:
    """Whether two skew matrices share their block-rate multiset.

    Equivalent to orthogonal similarity of the two matrices (and to equality
    of the spectra of A^T A and B^T B).
    """
    ra, rb = skew_rate_multiset(a), skew_rate_multiset(b)
    if ra.size != rb.size:
        return False
    return bool(np.all(np.abs(ra - rb) <= tol)) if ra.size else True
