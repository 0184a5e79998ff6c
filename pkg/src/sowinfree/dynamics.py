"""Coupled oscillator flow on SO(n) and structure-preserving integrators.

The model couples ``count`` rotations through the ensemble-mean influence:

    dR_i/dt = Omega_i R_i + (kappa/2) <I> (Q R_i^T - R_i Q^T) R_i,
    <I>     = (1/count) * sum_j profile(d(Q, R_j)),

with attraction point ``Q`` (identity by default).  The right-hand side is
``A_i R_i`` with skew generator ``A_i``, so exact exponentials keep the flow
on the manifold.

Steppers:

* ``lie-euler``   -- R <- exp(h A(R)) R
* ``rkmk4``       -- 4th-order Munthe-Kaas scheme (classical RK4 tableau in
  exponential coordinates, inverse-differential corrected stages)
* ``ambient-rk4`` -- classical RK4 in the ambient matrix space followed by
  polar re-orthonormalization; kept as a cross-validation path

The integrator hot loop avoids per-matrix factorizations: the mean-influence
distances come from closed forms on the symmetric part (dimensions up to 6)
and the exponentials from a scaled Paterson-Stockmeyer Taylor evaluation,
all batched over the ensemble.  The exact Schur-based routes in
:mod:`sowinfree.geometry` serve as their oracles in the test-suite.

When numba is importable, long fixed-step runs of the two Lie steppers go
through the compiled translation in :mod:`sowinfree._kernels` (same
algorithm, same observation points); set ``use_compiled_kernels = False``
to force the pure numpy path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from sowinfree.geometry import check_rotation, check_skew, norm
from sowinfree.influence import InfluenceFunction


class ManifoldDriftError(RuntimeError):
    """Orthogonality drifted beyond tolerance during integration."""

    def __init__(self, time: float, drift: float, tol: float):
        super().__init__(f"orthogonality drift {drift:.3e} exceeds {tol:.3e} at t = {time}")
        self.time = time
        self.drift = drift


@dataclass
class ModelConfig:
    """Ensemble parameters: coupling, frequencies, influence, attraction.

    ``frequencies`` has shape (count, n, n), one skew matrix per oscillator.
    ``attraction`` is a rotation or None for the identity.
    """

    kappa: float
    frequencies: np.ndarray
    influence: InfluenceFunction
    attraction: np.ndarray | None = None

    def __post_init__(self):
        self.frequencies = np.asarray(self.frequencies, dtype=float)
        if self.frequencies.ndim != 3:
            raise ValueError("frequencies must have shape (count, n, n)")
        check_skew(self.frequencies)
        if self.kappa < 0.0:
            raise ValueError("kappa must be nonnegative")
        if self.n < 2:
            raise ValueError("n >= 2 required")
        if self.attraction is not None:
            self.attraction = check_rotation(self.attraction)
            if self.attraction.shape != (self.n, self.n):
                raise ValueError("attraction dimension does not match frequencies")

    @property
    def n(self) -> int:
        return self.frequencies.shape[-1]

    @property
    def count(self) -> int:
        return self.frequencies.shape[0]

    @property
    def frequency_norms(self) -> np.ndarray:
        return norm(self.frequencies)

    @property
    def max_frequency_norm(self) -> float:
        return float(np.max(self.frequency_norms))

    def homogeneous(self, tol: float = 1e-13) -> bool:
        return bool(np.all(np.abs(self.frequencies - self.frequencies[0]) <= tol))


@dataclass
class TrajectoryRecord:
    """Observables sampled along one integrated trajectory.

    ``distances`` holds d(Q, R_i) per sample and oscillator, ``trace_gaps``
    the values n - tr(Q^T R_i), ``mean_influence`` the ensemble mean of the
    profile, ``orth_error`` the worst ||R^T R - I|| in the ensemble at each
    sample.  ``states`` carries the sampled rotations when recorded.
    """

    times: np.ndarray
    distances: np.ndarray
    trace_gaps: np.ndarray
    mean_influence: np.ndarray
    orth_error: np.ndarray
    states: np.ndarray | None = None
    config_hash: str = ""

    @property
    def count(self) -> int:
        return self.distances.shape[1]

    @property
    def max_orth_error(self) -> float:
        return float(np.max(self.orth_error))

    def final_states(self) -> np.ndarray:
        if self.states is None:
            raise ValueError("states were not recorded")
        return self.states[-1]

    def l1_distance_to(self, other: "TrajectoryRecord") -> np.ndarray:
        """Per-sample sum over oscillators of ||R_i - S_i|| (half-Frobenius)."""
        if self.states is None or other.states is None:
            raise ValueError("both records need states")
        if self.states.shape != other.states.shape or not np.allclose(
                self.times, other.times, atol=1e-12):
            raise ValueError("records are not sampled on the same grid")
        return norm(self.states - other.states).sum(axis=1)

    def l1_distance_to_point(self, rotations: np.ndarray) -> np.ndarray:
        """Per-sample l1 distance to a fixed ensemble."""
        if self.states is None:
            raise ValueError("states were not recorded")
        return norm(self.states - rotations[None]).sum(axis=1)


# ---------------------------------------------------------------------------
# batched kernels


def _pair_cosines(rel: np.ndarray) -> np.ndarray:
    """Cosines of the paired rotation angles of a batch of near-rotations.

    Works on the symmetric part, whose spectrum is the angle cosines with
    multiplicity two plus ones; closed forms cover n <= 6 (trace for n <= 3,
    a quadratic for n in {4, 5}, a trigonometric cubic for n = 6), a batched
    symmetric eigensolver handles the rest.
    """
    n = rel.shape[-1]
    if n == 2:
        c = (rel[..., 0, 0] + rel[..., 1, 1]) / 2.0
        return np.clip(c, -1.0, 1.0)[..., None]
    if n == 3:
        t1 = np.einsum("...ii->...", rel)
        return np.clip((t1 - 1.0) / 2.0, -1.0, 1.0)[..., None]
    s = (rel + np.swapaxes(rel, -1, -2)) / 2.0
    if n in (4, 5):
        off = float(n - 4)          # odd dimension pins one eigenvalue at 1
        t1 = np.einsum("...ii->...", s)
        t2 = np.einsum("...ij,...ij->...", s, s)
        e1 = (t1 - off) / 2.0
        m2 = (t2 - off) / 2.0       # c1^2 + c2^2
        disc = np.sqrt(np.maximum(2.0 * m2 - e1 * e1, 0.0))
        c_hi = np.clip((e1 + disc) / 2.0, -1.0, 1.0)
        c_lo = np.clip((e1 - disc) / 2.0, -1.0, 1.0)
        return np.stack([c_hi, c_lo], axis=-1)
    if n == 6:
        s2 = s @ s
        p1 = np.einsum("...ii->...", s) / 2.0
        p2 = np.einsum("...ii->...", s2) / 2.0
        p3 = np.einsum("...ij,...ij->...", s2, s) / 2.0
        e1 = p1
        e2 = (p1 * p1 - p2) / 2.0
        e3 = (p1 ** 3 - 3.0 * p1 * p2 + 2.0 * p3) / 6.0
        p = e2 - e1 * e1 / 3.0
        q = -2.0 * e1 ** 3 / 27.0 + e1 * e2 / 3.0 - e3
        m = 2.0 * np.sqrt(np.maximum(-p / 3.0, 0.0))
        denom = p * m
        arg = np.divide(3.0 * q, denom, out=np.zeros_like(q),
                        where=np.abs(denom) > 1e-300)
        phi = np.arccos(np.clip(arg, -1.0, 1.0))
        shift = e1[..., None] / 3.0
        ks = np.array([0.0, 1.0, 2.0])
        roots = shift + m[..., None] * np.cos((phi[..., None] - 2.0 * np.pi * ks) / 3.0)
        return np.clip(roots, -1.0, 1.0)
    w = np.linalg.eigvalsh(s)
    cos_pairs = w[..., : 2 * (n // 2)].reshape(*w.shape[:-1], n // 2, 2).mean(-1)
    return np.clip(cos_pairs, -1.0, 1.0)


def _distances_from_rel(rel: np.ndarray) -> np.ndarray:
    if rel.shape[-1] == 2:      # atan2 keeps full precision near zero angle
        return np.abs(np.arctan2(rel[..., 1, 0] - rel[..., 0, 1],
                                 rel[..., 0, 0] + rel[..., 1, 1]))
    th = np.arccos(_pair_cosines(rel))
    return np.sqrt(np.einsum("...k,...k->...", th, th))


def batch_distances(rotations: np.ndarray, attraction: np.ndarray | None = None) -> np.ndarray:
    """Geodesic distances d(Q, R_i) for a batch of rotations."""
    rel = rotations if attraction is None else np.matmul(attraction.T, rotations)
    return _distances_from_rel(rel)


# Taylor coefficients 1/k! for the Paterson-Stockmeyer exponential
_FACT = np.array([1.0, 1.0, 2.0, 6.0, 24.0, 120.0, 720.0, 5040.0, 40320.0])


def _expm_skew_batch(x: np.ndarray) -> np.ndarray:
    """Exponentials of a batch of skew matrices.

    Dimensions 2 and 3 use the planar/axis closed forms; larger dimensions a
    degree-8 Taylor evaluation with scaling and squaring (threshold 0.05, so
    the truncation error sits below 1e-17 before squaring).
    """
    n = x.shape[-1]
    if n == 2:
        a = x[..., 1, 0]
        c, s = np.cos(a), np.sin(a)
        out = np.empty(x.shape)
        out[..., 0, 0] = c
        out[..., 0, 1] = -s
        out[..., 1, 0] = s
        out[..., 1, 1] = c
        return out
    if n == 3:
        th = np.sqrt(x[..., 2, 1] ** 2 + x[..., 0, 2] ** 2 + x[..., 1, 0] ** 2)
        a = np.sinc(th / np.pi)                        # sin(th)/th
        b = 0.5 * np.sinc(th / (2.0 * np.pi)) ** 2     # (1 - cos(th))/th^2
        return (np.eye(3) + a[..., None, None] * x
                + b[..., None, None] * (x @ x))
    top = float(np.max(np.sqrt(np.einsum("...ij,...ij->...", x, x)))) if x.size else 0.0
    squarings = max(0, int(np.ceil(np.log2(top / 0.05))) if top > 0.05 else 0)
    y = x / (2.0 ** squarings) if squarings else x
    eye = np.broadcast_to(np.eye(n), y.shape)
    y2 = y @ y
    y3 = y2 @ y
    y4 = y2 @ y2
    lo = eye + y + y2 / _FACT[2] + y3 / _FACT[3]
    hi = (eye / _FACT[4] + y / _FACT[5] + y2 / _FACT[6] + y3 / _FACT[7]
          + y4 / _FACT[8])
    out = lo + y4 @ hi
    for _ in range(squarings):
        out = out @ out
    return out


def mean_influence(rotations: np.ndarray, cfg: ModelConfig) -> float:
    """Ensemble mean of the influence profile at the current configuration."""
    d = batch_distances(rotations, cfg.attraction)
    return float(np.mean(cfg.influence.profile(d)))


def generators(rotations: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """Skew generators A_i with dR_i/dt = A_i R_i."""
    if cfg.kappa == 0.0:
        return cfg.frequencies.copy()
    c = 0.5 * cfg.kappa * mean_influence(rotations, cfg)
    rt = np.swapaxes(rotations, -1, -2)
    if cfg.attraction is None:
        return cfg.frequencies + c * (rt - rotations)
    m = np.matmul(cfg.attraction, rt)
    return cfg.frequencies + c * (m - np.swapaxes(m, -1, -2))


def translate_right(rotations: np.ndarray, t_mat: np.ndarray) -> np.ndarray:
    """Right-translate every ensemble member: R_i -> R_i T.

    Geodesic distances to a right-translated attraction point are unchanged,
    so a trajectory of the flow with attraction Q maps onto the trajectory
    with attraction QT started from the translated data.
    """
    t_mat = check_rotation(np.asarray(t_mat, dtype=float))
    return rotations @ t_mat


def rhs(rotations: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """Ambient time-derivatives A_i R_i."""
    return generators(rotations, cfg) @ rotations


def _dexpinv(u: np.ndarray, a: np.ndarray) -> np.ndarray:
    # inverse differential of exp, truncated after the double commutator;
    # adequate for a 4th-order method since u = O(h)
    c1 = u @ a - a @ u
    c2 = u @ c1 - c1 @ u
    return a - 0.5 * c1 + c2 / 12.0


def _step_lie_euler(rot, h, gen):
    return _expm_skew_batch(h * gen(rot)) @ rot


def _step_rkmk4(rot, h, gen):
    k1 = gen(rot)
    u2 = (0.5 * h) * k1
    k2 = _dexpinv(u2, gen(_expm_skew_batch(u2) @ rot))
    u3 = (0.5 * h) * k2
    k3 = _dexpinv(u3, gen(_expm_skew_batch(u3) @ rot))
    u4 = h * k3
    k4 = _dexpinv(u4, gen(_expm_skew_batch(u4) @ rot))
    v = (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
    return _expm_skew_batch(v) @ rot


def _step_ambient_rk4(rot, h, gen):
    def f(y):
        return gen(y) @ y

    k1 = f(rot)
    k2 = f(rot + (0.5 * h) * k1)
    k3 = f(rot + (0.5 * h) * k2)
    k4 = f(rot + h * k3)
    y = rot + (h / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)
    u, _, vt = np.linalg.svd(y)
    return u @ vt


STEPPERS = {
    "lie-euler": _step_lie_euler,
    "rkmk4": _step_rkmk4,
    "ambient-rk4": _step_ambient_rk4,
}

# compiled fast path: resolved lazily, False once import or packing failed
use_compiled_kernels = True
_kernels = None


def _compiled_path(cfg: ModelConfig, stepper: str):
    """Return (module, packed profile) when the compiled loop applies."""
    global _kernels
    if not use_compiled_kernels or stepper == "ambient-rk4" or cfg.n > 6:
        return None
    if _kernels is None:
        try:
            from sowinfree import _kernels as mod
            _kernels = mod
        except Exception:
            _kernels = False
    if not _kernels:
        return None
    packed = _kernels.pack_profile(cfg.influence)
    return None if packed is None else (_kernels, packed)


def integrate(cfg: ModelConfig, initial: np.ndarray, h: float, t_end: float,
              stepper: str = "rkmk4", observer_stride: int = 1,
              record_states: bool = True, orth_tol: float = 1e-10) -> TrajectoryRecord:
    """Fixed-step integration from ``initial`` (shape (count, n, n)).

    Observables are recorded every ``observer_stride`` steps plus the final
    step.  The orthogonality defect is checked at every recorded sample; a
    defect beyond ``orth_tol`` aborts with :class:`ManifoldDriftError`
    carrying the offending time.  The mean influence entering the right-hand
    side is recomputed at every internal stage of every step.
    """
    if stepper not in STEPPERS:
        raise ValueError(f"unknown stepper {stepper!r}; choose from {sorted(STEPPERS)}")
    if h <= 0.0 or t_end < 0.0:
        raise ValueError("h must be positive and t_end nonnegative")
    if observer_stride < 1:
        raise ValueError("observer_stride must be >= 1")
    rot = check_rotation(initial).copy()
    if rot.shape != (cfg.count, cfg.n, cfg.n):
        raise ValueError(f"initial ensemble shape {rot.shape} does not match config")
    step = STEPPERS[stepper]
    num_steps = int(round(t_end / h))

    def gen(y):
        return generators(y, cfg)

    qt = None if cfg.attraction is None else np.ascontiguousarray(cfg.attraction.T)
    eye = np.eye(cfg.n)
    times, dists, gaps, minf, oerr, states = [], [], [], [], [], []

    def observe(step_index: int) -> None:
        t = step_index * h
        rel = rot if qt is None else qt @ rot
        d = _distances_from_rel(rel)
        drift = float(np.max(norm(np.swapaxes(rot, -1, -2) @ rot - eye)))
        if drift > orth_tol:
            raise ManifoldDriftError(t, drift, orth_tol)
        times.append(t)
        dists.append(d)
        gaps.append(cfg.n - np.einsum("...ii->...", rel))
        minf.append(np.mean(cfg.influence.profile(d)))
        oerr.append(drift)
        if record_states:
            states.append(rot.copy())

    observe(0)
    fast = _compiled_path(cfg, stepper)
    if fast is not None and num_steps > 0:
        kern, (kind, sp, knots, vals) = fast
        rot = np.ascontiguousarray(rot)
        freqs = np.ascontiguousarray(cfg.frequencies)
        qmat_t = np.eye(cfg.n) if qt is None else qt
        points = list(range(observer_stride, num_steps + 1, observer_stride))
        if not points or points[-1] != num_steps:
            points.append(num_steps)
        cur = 0
        for p in points:
            kern.advance(rot, freqs, cfg.kappa, qmat_t, qt is not None,
                         kind, sp, knots, vals, h, p - cur, stepper == "rkmk4")
            cur = p
            observe(p)
    else:
        for i in range(1, num_steps + 1):
            rot = step(rot, h, gen)
            if i % observer_stride == 0 or i == num_steps:
                observe(i)

    return TrajectoryRecord(
        times=np.array(times),
        distances=np.array(dists),
        trace_gaps=np.array(gaps),
        mean_influence=np.array(minf),
        orth_error=np.array(oerr),
        states=np.array(states) if record_states else None,
    )


# ---------------------------------------------------------------------------
# planar reduction (n = 2)


def phases_of(rotations: np.ndarray) -> np.ndarray:
    """Rotation angles of a batch of 2x2 rotations, in (-pi, pi]."""
    if rotations.shape[-1] != 2:
        raise ValueError("phases are defined for n = 2 only")
    return np.arctan2(rotations[..., 1, 0], rotations[..., 0, 0])


def planar_rates(cfg: ModelConfig) -> np.ndarray:
    """Scalar frequencies nu_i of an n = 2 configuration."""
    if cfg.n != 2:
        raise ValueError("planar rates are defined for n = 2 only")
    return cfg.frequencies[:, 1, 0].copy()


def reduced_phase_rhs(theta: np.ndarray, cfg: ModelConfig) -> np.ndarray:
    """Scalar right-hand side of the planar reduction.

    For n = 2 with identity attraction the matrix flow collapses to the
    classical phase model ``theta_i' = nu_i - kappa <I> sin(theta_i)`` with
    ``<I>`` the mean of the profile at ``|theta_j|``.
    """
    if cfg.attraction is not None:
        raise ValueError("planar reduction assumes identity attraction")
    w = float(np.mean(cfg.influence.profile(np.abs(theta))))
    return planar_rates(cfg) - cfg.kappa * w * np.sin(theta)


def integrate_reduced_phases(cfg: ModelConfig, theta0: np.ndarray,
                             t_eval: np.ndarray) -> np.ndarray:
    """High-accuracy scalar reference for the planar reduction.

    Returns phases of shape (len(t_eval), count) from an adaptive
    integration at tolerance 1e-12.
    """
    theta0 = np.asarray(theta0, dtype=float)
    sol = solve_ivp(lambda _, y: reduced_phase_rhs(y, cfg),
                    (0.0, float(t_eval[-1])), theta0, t_eval=t_eval,
                    method="DOP853", rtol=1e-12, atol=1e-12)
    if not sol.success:  # pragma: no cover
        raise RuntimeError(f"reference integration failed: {sol.message}")
    return sol.y.T
