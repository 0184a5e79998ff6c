"""Seeded experiment orchestration: sampling, gating, integration, artifacts.

Each experiment kind draws its frequencies and initial ensembles from a per
seed ``SeedSequence`` tree (root -> one branch per consumer -> one leaf per
oscillator), validates the relevant hypothesis set, runs the dynamics or the
solver, and emits certificates plus plot-ready CSV files.  Identical deck and
seeds give byte-identical artifacts.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from sowinfree.analysis import (Certificate, InfeasibleFrameworkError,
                                ValidationReport, certify_herding,
                                certify_l1_contraction, certify_pairwise_sync,
                                certify_trapping, contraction_rates,
                                validate_framework)
from sowinfree.config import ExperimentSpec
from sowinfree.dynamics import (ManifoldDriftError, ModelConfig,
                                TrajectoryRecord, batch_distances, integrate,
                                integrate_reduced_phases, phases_of)
from sowinfree.equilibria import (FixedPointError, certify_equilibrium,
                                  certify_relaxation, certify_stationarity,
                                  construct_equilibrium, scan_fixed_points,
                                  solve_fixed_point)
from sowinfree.geometry import norm, project_skew, sample_ball
from sowinfree.io import (config_hash, ensure_dir, write_certificate,
                          write_columns_csv, write_json, write_rows_csv,
                          write_scan_csv, write_trajectory_csv)

EXIT_PASS = 0
EXIT_FAIL = 1
EXIT_INVALID = 2

# hypothesis set gated per kind; absent kinds run ungated
VALIDATION_MODES = {"trap": "hetero", "stability": "hetero", "sync": "homog",
                    "herd": "herd", "equilibrium": "herd"}
# kinds whose theorem needs the positive contraction rate lambda1
NEEDS_LAMBDA1 = ("stability", "equilibrium")


@dataclass
class ExperimentOutcome:
    """What one deck invocation produced, for the CLI to report."""

    exit_code: int
    messages: list = field(default_factory=list)
    artifacts: list = field(default_factory=list)
    certificates: list = field(default_factory=list)   # (seed, Certificate)
    summary: dict = field(default_factory=dict)


def _random_skew(dim: int, rng: np.random.Generator, max_norm: float) -> np.ndarray:
    while True:
        u = project_skew(rng.normal(size=(dim, dim)))
        size = norm(u)
        if size > 1e-12:
            break
    return (rng.uniform(0.0, max_norm) / size) * u


def sample_frequencies(spec: ExperimentSpec, seq: np.random.SeedSequence) -> np.ndarray:
    """Frequency ensemble for one seed, per the deck's omega mode."""
    shape = (spec.count, spec.dim, spec.dim)
    if spec.omega_mode == "zero":
        return np.zeros(shape)
    if spec.omega_mode == "explicit":
        return spec.omega_explicit.copy()
    children = seq.spawn(spec.count)
    if spec.omega_mode == "shared-random":
        shared = _random_skew(spec.dim, np.random.default_rng(children[0]),
                              spec.omega_max_norm)
        return np.broadcast_to(shared, shape).copy()
    return np.stack([_random_skew(spec.dim, np.random.default_rng(c), spec.omega_max_norm)
                     for c in children])


def sample_initial(spec: ExperimentSpec, seq: np.random.SeedSequence) -> np.ndarray:
    """Initial rotations for one seed: leaders (and everyone outside herd
    runs) inside the small ball, herd followers inside their looser ball."""
    children = seq.spawn(spec.count)
    leaders = set(spec.framework.leaders) if spec.framework is not None else set()
    rows = []
    for i, child in enumerate(children):
        radius = spec.init_radius
        if spec.kind == "herd" and i not in leaders:
            radius = spec.follower_radius
        rows.append(sample_ball(spec.dim, radius, np.random.default_rng(child)))
    return np.stack(rows)


def _materialize(spec: ExperimentSpec, seed: int, ensembles: int = 1):
    branches = np.random.SeedSequence(seed).spawn(1 + ensembles)
    freqs = sample_frequencies(spec, branches[0])
    cfg = ModelConfig(kappa=spec.kappa, frequencies=freqs,
                      influence=spec.influence, attraction=spec.attraction)
    return cfg, [sample_initial(spec, b) for b in branches[1:]]


def _mapping_float(spec: ExperimentSpec, key: str, default: float) -> float:
    v = spec.mapping.get(key, default)
    return float(v)


def _report_payload(report: ValidationReport, seed: int, mode: str) -> dict:
    return {"seed": seed, "mode": mode, "ok": report.ok,
            "items": report.items}


def _validate(spec: ExperimentSpec, cfg: ModelConfig, initials: list,
              seed: int, out: Path, outcome: ExperimentOutcome) -> bool:
    """Gate one seed.  Returns True to proceed; on failure without the
    override flag, records the reason and flips the outcome to invalid."""
    mode = VALIDATION_MODES.get(spec.kind)
    if mode is None:
        return True
    report = validate_framework(cfg, spec.framework, initials[0], mode=mode)
    for k, extra in enumerate(initials[1:], start=1):
        d0 = batch_distances(extra, cfg.attraction)
        report.add(f"ensemble-{k}-initial-data-confined",
                   bool(np.all(d0 < spec.framework.gamma0)),
                   f"max initial distance {np.max(d0)}, gamma0 = {spec.framework.gamma0}")
    if spec.kind in NEEDS_LAMBDA1:
        lam1, _ = contraction_rates(spec.framework, cfg)
        report.add("contraction-rate-positive", lam1 > 0.0, f"lambda1 = {lam1}")
    path = out / f"validation_seed{seed}.json"
    write_json(path, _report_payload(report, seed, mode))
    outcome.artifacts.append(path)
    if report.ok or spec.override_hypotheses:
        if not report.ok:
            outcome.messages.append(
                f"seed {seed}: hypotheses violated but overridden: "
                f"{report.failures}")
        return True
    outcome.messages.append(
        f"seed {seed}: hypothesis validation failed: {report.failures}")
    outcome.exit_code = EXIT_INVALID
    return False


def _emit_trajectory(out: Path, label: str, seed: int, record: TrajectoryRecord,
                     outcome: ExperimentOutcome) -> None:
    path = out / f"{label}_seed{seed}.csv"
    write_trajectory_csv(path, record)
    outcome.artifacts.append(path)


def _emit_certificate(out: Path, seed: int, cert: Certificate,
                      outcome: ExperimentOutcome) -> None:
    path = out / f"cert_{cert.name}_seed{seed}.json"
    write_certificate(path, cert)
    outcome.artifacts.append(path)
    outcome.certificates.append((seed, cert))


def _integrate(spec: ExperimentSpec, cfg: ModelConfig, initial: np.ndarray,
               record_states: bool) -> TrajectoryRecord:
    return integrate(cfg, initial, spec.h, spec.t_end, stepper=spec.stepper,
                     observer_stride=spec.stride, record_states=record_states)


def _run_simulate(spec, cfg, initials, seed, out, outcome) -> dict:
    record = _integrate(spec, cfg, initials[0], record_states=False)
    _emit_trajectory(out, "traj", seed, record, outcome)
    return {"seed": seed, "passed": 1,
            "final_max_distance": float(np.max(record.distances[-1])),
            "max_orth_error": record.max_orth_error}


def _run_trap(spec, cfg, initials, seed, out, outcome) -> dict:
    record = _integrate(spec, cfg, initials[0], record_states=False)
    _emit_trajectory(out, "traj", seed, record, outcome)
    cert = certify_trapping(record, spec.framework, cfg)
    _emit_certificate(out, seed, cert, outcome)
    return {"seed": seed, "passed": int(cert.passed),
            "max_distance": cert.witnesses["max_distance"],
            "bound": cert.witnesses["bound"],
            "max_orth_error": record.max_orth_error}


def _run_herd(spec, cfg, initials, seed, out, outcome) -> dict:
    record = _integrate(spec, cfg, initials[0], record_states=False)
    _emit_trajectory(out, "traj", seed, record, outcome)
    cert = certify_herding(record, spec.framework, cfg)
    _emit_certificate(out, seed, cert, outcome)
    return {"seed": seed, "passed": int(cert.passed),
            "leader_max_distance": cert.witnesses["leader_max_distance"],
            "max_excess": cert.witnesses["max_excess"],
            "max_orth_error": record.max_orth_error}


def _run_stability(spec, cfg, initials, seed, out, outcome) -> dict:
    rec_a = _integrate(spec, cfg, initials[0], record_states=True)
    rec_b = _integrate(spec, cfg, initials[1], record_states=True)
    _emit_trajectory(out, "traj", seed, rec_a, outcome)
    _emit_trajectory(out, "traj_perturbed", seed, rec_b, outcome)
    sep = rec_a.l1_distance_to(rec_b)
    sep_path = out / f"separation_seed{seed}.csv"
    write_columns_csv(sep_path, ["t", "l1_separation"], [rec_a.times, sep])
    outcome.artifacts.append(sep_path)
    cert = certify_l1_contraction(rec_a, rec_b, spec.framework, cfg)
    _emit_certificate(out, seed, cert, outcome)
    return {"seed": seed, "passed": int(cert.passed),
            "lambda1": cert.witnesses["lambda1"],
            "fitted_rate": cert.witnesses["fitted_rate"],
            "initial_separation": cert.witnesses["initial_separation"]}


def _run_sync(spec, cfg, initials, seed, out, outcome) -> dict:
    record = _integrate(spec, cfg, initials[0], record_states=True)
    _emit_trajectory(out, "traj", seed, record, outcome)
    cert = certify_pairwise_sync(record, spec.framework, cfg)
    _emit_certificate(out, seed, cert, outcome)
    return {"seed": seed, "passed": int(cert.passed),
            "lambda2": cert.witnesses["lambda2"],
            "initial_max_separation": cert.witnesses["initial_max_separation"],
            "worst_envelope_ratio": cert.witnesses["worst_envelope_ratio"]}


def _run_equilibrium(spec, cfg, initials, seed, out, outcome) -> dict:
    fp = solve_fixed_point(cfg, spec.framework)
    ens = construct_equilibrium(cfg, fp.x_star)
    cert_c = certify_equilibrium(ens, fp, spec.framework, cfg)
    _emit_certificate(out, seed, cert_c, outcome)

    stat_tol = _mapping_float(spec, "equilibrium.stationarity_tol", 1e-7)
    rec_stat = _integrate(spec, cfg, ens.rotations, record_states=True)
    cert_s = certify_stationarity(rec_stat, ens, stat_tol, spec.framework, cfg)
    _emit_certificate(out, seed, cert_s, outcome)

    final_tol = _mapping_float(spec, "equilibrium.final_tol", 1e-8)
    rec_rel = _integrate(spec, cfg, initials[0], record_states=True)
    _emit_trajectory(out, "traj", seed, rec_rel, outcome)
    gap_path = out / f"relaxation_seed{seed}.csv"
    write_columns_csv(gap_path, ["t", "l1_to_equilibrium"],
                      [rec_rel.times, rec_rel.l1_distance_to_point(ens.rotations)])
    outcome.artifacts.append(gap_path)
    cert_r = certify_relaxation(rec_rel, ens, spec.framework, cfg, final_tol)
    _emit_certificate(out, seed, cert_r, outcome)
    return {"seed": seed,
            "passed": int(cert_c.passed and cert_s.passed and cert_r.passed),
            "x_star": fp.x_star, "solver_residual": fp.residual,
            "max_l1_move": cert_s.witnesses["max_l1_move"],
            "final_l1": cert_r.witnesses["final_l1"]}


def _run_fixedpoint(spec, cfg, initials, seed, out, outcome) -> dict:
    fp = solve_fixed_point(cfg, spec.framework)
    g = spec.framework.gamma
    edge = cfg.max_frequency_norm / (cfg.kappa * np.sin(g))
    lo = spec.scan_lo if spec.scan_lo is not None else max(edge * (1.0 + 1e-3), 1e-6)
    hi = spec.scan_hi if spec.scan_hi is not None else max(1.0, fp.x_star)
    scan = scan_fixed_points(cfg, lo, hi, spec.scan_num)
    scan_path = out / f"scan_seed{seed}.csv"
    write_scan_csv(scan_path, scan)
    outcome.artifacts.append(scan_path)

    nearest = int(np.argmin(np.abs(scan.xs - fp.x_star)))
    bracketed = any(scan.xs[i] <= fp.x_star <= scan.xs[j]
                    for i, j in scan.sign_changes)
    located = bracketed or bool(scan.flagged[nearest])
    cert = Certificate(
        "fixed-point", fp.residual <= 1e-12 and located,
        {"kappa": cfg.kappa, "gamma": g, "count": cfg.count,
         "max_frequency_norm": cfg.max_frequency_norm,
         "scan_lo": float(lo), "scan_hi": float(hi), "scan_num": int(spec.scan_num)},
        {"x_star": fp.x_star, "residual": fp.residual,
         "iterations": fp.iterations, "interior": fp.interior,
         "scan_sign_changes": len(scan.sign_changes),
         "scan_flagged_points": int(np.count_nonzero(scan.flagged)),
         "scan_defect_at_solution": float(scan.defects[nearest]),
         "solution_bracketed": bracketed})
    _emit_certificate(out, seed, cert, outcome)
    return {"seed": seed, "passed": int(cert.passed), "x_star": fp.x_star,
            "residual": fp.residual,
            "sign_changes": len(scan.sign_changes)}


def _run_reduce2d(spec, cfg, initials, seed, out, outcome) -> dict:
    record = _integrate(spec, cfg, initials[0], record_states=True)
    _emit_trajectory(out, "traj", seed, record, outcome)
    theta = phases_of(record.states)
    theta_ref = integrate_reduced_phases(cfg, phases_of(initials[0]), record.times)
    err = np.abs(np.arctan2(np.sin(theta - theta_ref), np.cos(theta - theta_ref)))
    cmp_path = out / f"reduction_seed{seed}.csv"
    ts = np.repeat(record.times, cfg.count)
    idx = np.tile(np.arange(cfg.count), record.times.size)
    write_columns_csv(cmp_path, ["t", "i", "theta", "theta_ref", "abs_error"],
                      [ts, idx, theta.ravel(), theta_ref.ravel(), err.ravel()])
    outcome.artifacts.append(cmp_path)
    tol = _mapping_float(spec, "reduce.tol", 1e-6)
    worst = float(np.max(err))
    cert = Certificate(
        "planar-reduction", worst <= tol,
        {"kappa": cfg.kappa, "count": cfg.count, "h": spec.h,
         "t_end": spec.t_end, "stepper": spec.stepper, "tolerance": tol},
        {"max_phase_error": worst,
         "time_of_max": float(record.times[int(np.argmax(np.max(err, axis=1)))])})
    _emit_certificate(out, seed, cert, outcome)
    return {"seed": seed, "passed": int(cert.passed), "max_phase_error": worst}


_RUNNERS = {"simulate": _run_simulate, "trap": _run_trap, "herd": _run_herd,
            "stability": _run_stability, "sync": _run_sync,
            "equilibrium": _run_equilibrium, "fixedpoint": _run_fixedpoint,
            "reduce2d": _run_reduce2d}
# stability compares a pair of ensembles; everything else uses one
_ENSEMBLES = {"stability": 2}


def run_experiment(spec: ExperimentSpec) -> ExperimentOutcome:
    """Execute one resolved deck across its seeds and write all artifacts.

    Exit code 0 when every certificate passes, 1 when any fails (or the
    integrator leaves the manifold), 2 when hypothesis validation rejects a
    seed without the override flag or the solver preconditions fail.
    """
    out = ensure_dir(spec.out_dir)
    outcome = ExperimentOutcome(exit_code=EXIT_PASS)
    runner = _RUNNERS[spec.kind]
    sweep_rows = []
    for seed in spec.seeds:
        cfg, initials = _materialize(spec, seed, _ENSEMBLES.get(spec.kind, 1))
        if not _validate(spec, cfg, initials, seed, out, outcome):
            break
        try:
            sweep_rows.append(runner(spec, cfg, initials, seed, out, outcome))
        except ManifoldDriftError as exc:
            outcome.messages.append(f"seed {seed}: {exc}")
            outcome.exit_code = EXIT_FAIL
            sweep_rows.append({"seed": seed, "passed": 0})
        except (FixedPointError, InfeasibleFrameworkError) as exc:
            outcome.messages.append(f"seed {seed}: {exc}")
            reason = out / f"invalid_seed{seed}.json"
            write_json(reason, {"seed": seed, "error": type(exc).__name__,
                                "detail": str(exc)})
            outcome.artifacts.append(reason)
            outcome.exit_code = EXIT_INVALID
            break

    if outcome.exit_code == EXIT_PASS:
        failed = [(s, c.name) for s, c in outcome.certificates if not c.passed]
        if failed:
            outcome.exit_code = EXIT_FAIL
            for s, name in failed:
                outcome.messages.append(f"seed {s}: certificate {name} FAILED")

    if sweep_rows:
        header = list(sweep_rows[0])
        sweep_path = out / "sweep.csv"
        write_rows_csv(sweep_path, header, sweep_rows)
        outcome.artifacts.append(sweep_path)

    digest = config_hash(spec.mapping)
    outcome.summary = {
        "kind": spec.kind, "config_hash": digest, "seeds": list(spec.seeds),
        "exit_code": outcome.exit_code,
        "certificates": [{"seed": s, "name": c.name, "outcome": c.outcome}
                         for s, c in outcome.certificates],
        "messages": list(outcome.messages),
        "sweep": sweep_rows,
    }
    summary_path = out / "summary.json"
    write_json(summary_path, outcome.summary)
    outcome.artifacts.append(summary_path)
    return outcome
