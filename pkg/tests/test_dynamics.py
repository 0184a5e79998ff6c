"""Coupled flow on SO(n): right-hand side, steppers, compiled-path parity."""

import numpy as np
import pytest
import scipy.linalg

import sowinfree.dynamics as dyn
from conftest import skew_with_norm
from sowinfree.dynamics import (ManifoldDriftError, ModelConfig,
                                _expm_skew_batch, batch_distances, generators,
                                integrate, integrate_reduced_phases,
                                mean_influence, phases_of, planar_rates,
                                reduced_phase_rhs, rhs, translate_right)
from sowinfree.geometry import (check_rotation, exp_so, geodesic_distance,
                                norm, project_skew, sample_ball, sample_haar)
from sowinfree.influence import (make_continuum_profile, make_cosine_taper,
                                 make_linear_hat, make_tabulated)


def planar(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def make_config(n, count, rng, kappa=1.2, freq_scale=0.5, beta=1.5,
                influence=None, attraction=None):
    freqs = np.stack([skew_with_norm(n, rng, freq_scale) for _ in range(count)])
    return ModelConfig(kappa=kappa, frequencies=freqs,
                       influence=influence or make_linear_hat(beta),
                       attraction=attraction)


def ball_ensemble(n, count, radius, rng):
    return np.stack([sample_ball(n, radius, rng) for _ in range(count)])


# ---------------------------------------------------------------------------
# right-hand side


def test_identity_ensemble_with_zero_frequencies_is_stationary():
    cfg = ModelConfig(kappa=2.0, frequencies=np.zeros((3, 4, 4)),
                      influence=make_linear_hat(1.0))
    rot = np.stack([np.eye(4)] * 3)
    assert np.all(rhs(rot, cfg) == 0.0)


def test_generators_match_hand_formula(rng):
    cfg = make_config(3, 4, rng)
    rot = ball_ensemble(3, 4, 0.9, rng)
    d = np.array([geodesic_distance(np.eye(3), r) for r in rot])
    w = float(np.mean(cfg.influence(d)))
    want = cfg.frequencies + 0.5 * cfg.kappa * w * (
        np.swapaxes(rot, -1, -2) - rot)
    np.testing.assert_allclose(generators(rot, cfg), want, atol=1e-13)
    assert abs(mean_influence(rot, cfg) - w) < 1e-13


def test_generators_with_offset_attraction(rng):
    q = sample_haar(3, rng)
    cfg = make_config(3, 3, rng, attraction=q)
    rot = np.stack([q @ sample_ball(3, 0.8, rng) for _ in range(3)])
    d = np.array([geodesic_distance(q, r) for r in rot])
    w = float(np.mean(cfg.influence(d)))
    m = q @ np.swapaxes(rot, -1, -2)
    want = cfg.frequencies + 0.5 * cfg.kappa * w * (m - np.swapaxes(m, -1, -2))
    np.testing.assert_allclose(generators(rot, cfg), want, atol=1e-13)


def test_rhs_is_tangent_to_the_group(rng):
    cfg = make_config(4, 3, rng)
    rot = ball_ensemble(4, 3, 1.0, rng)
    v = rhs(rot, cfg)
    resid = v @ np.swapaxes(rot, -1, -2)
    assert float(norm(resid + np.swapaxes(resid, -1, -2)).max()) < 1e-12


def test_single_planar_oscillator_matches_scalar_model(rng):
    nu, theta = 0.37, 0.51
    cfg = ModelConfig(kappa=1.7, frequencies=np.array([[[0.0, -nu], [nu, 0.0]]]),
                      influence=make_linear_hat(1.1))
    rot = planar(theta)[None]
    rate = reduced_phase_rhs(np.array([theta]), cfg)[0]
    want = nu - 1.7 * cfg.influence(theta) * np.sin(theta)
    assert abs(rate - want) < 1e-14
    gen = generators(rot, cfg)[0]
    assert abs(gen[1, 0] - rate) < 1e-14


def test_zero_coupling_skips_influence_evaluation(rng):
    # kappa = 0 must not evaluate distances at all
    cfg = ModelConfig(kappa=0.0, frequencies=np.stack([skew_with_norm(3, rng, 0.4)]),
                      influence=make_linear_hat(1.0))
    rot = sample_haar(3, rng)[None]
    np.testing.assert_allclose(generators(rot, cfg), cfg.frequencies, atol=0.0)


# ---------------------------------------------------------------------------
# steppers


def test_free_flow_is_exact_for_both_lie_steppers(rng):
    # with kappa = 0 the generator is constant, so every Lie step is the
    # exact flow exp(h Omega) regardless of h
    freqs = np.stack([skew_with_norm(4, rng, 0.8) for _ in range(3)])
    cfg = ModelConfig(kappa=0.0, frequencies=freqs, influence=make_linear_hat(1.0))
    init = ball_ensemble(4, 3, 0.7, rng)
    want = np.stack([scipy.linalg.expm(2.0 * w) @ r for w, r in zip(freqs, init)])
    for stepper in ("lie-euler", "rkmk4"):
        got = integrate(cfg, init, h=0.01, t_end=2.0, stepper=stepper,
                        observer_stride=200).final_states()
        assert float(norm(got - want).max()) < 1e-12


def test_stepper_convergence_orders(rng):
    cfg = make_config(3, 3, rng)
    init = ball_ensemble(3, 3, 0.6, rng)
    ref = integrate(cfg, init, h=1e-4, t_end=1.0, stepper="rkmk4",
                    observer_stride=10000).final_states()
    for stepper, hs, lo, hi in (("lie-euler", [0.04, 0.02, 0.01, 0.005], 0.9, 1.1),
                                ("rkmk4", [0.2, 0.1, 0.05, 0.025], 3.7, 4.4)):
        errs = [float(norm(integrate(cfg, init, h=h, t_end=1.0, stepper=stepper,
                                     observer_stride=10**6).final_states() - ref).max())
                for h in hs]
        slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
        assert lo < slope < hi, (stepper, slope, errs)


def test_ambient_stepper_agrees_with_lie_stepper(rng):
    cfg = make_config(3, 3, rng)
    init = ball_ensemble(3, 3, 0.6, rng)
    a = integrate(cfg, init, h=1e-3, t_end=2.0, stepper="rkmk4", observer_stride=2000)
    b = integrate(cfg, init, h=1e-3, t_end=2.0, stepper="ambient-rk4", observer_stride=2000)
    assert float(norm(a.final_states() - b.final_states()).max()) < 1e-8
    assert b.max_orth_error < 1e-12


def test_integration_is_bitwise_deterministic(rng):
    cfg = make_config(3, 4, rng)
    init = ball_ensemble(3, 4, 0.8, rng)
    a = integrate(cfg, init, h=1e-2, t_end=3.0, observer_stride=10)
    b = integrate(cfg, init, h=1e-2, t_end=3.0, observer_stride=10)
    assert np.array_equal(a.states, b.states)
    assert np.array_equal(a.distances, b.distances)


def test_planar_flow_matches_scalar_reference(rng):
    nus = np.array([0.3, -0.2, 0.45])
    freqs = np.stack([[[0.0, -v], [v, 0.0]] for v in nus])
    cfg = ModelConfig(kappa=1.5, frequencies=freqs, influence=make_linear_hat(1.2))
    theta0 = np.array([0.4, -0.5, 0.2])
    init = np.stack([planar(t) for t in theta0])
    rec = integrate(cfg, init, h=1e-3, t_end=2.0, observer_stride=200)
    ref = integrate_reduced_phases(cfg, theta0, rec.times)
    got = phases_of(rec.states)
    err = np.abs(np.angle(np.exp(1j * (got - ref))))
    assert float(err.max()) < 1e-8


# ---------------------------------------------------------------------------
# compiled fast path


@pytest.mark.parametrize("stepper", ["lie-euler", "rkmk4"])
@pytest.mark.parametrize("n", [2, 3, 4, 5, 6])
def test_compiled_path_matches_reference_path(n, stepper, rng, monkeypatch):
    cfg = make_config(n, 3, rng, freq_scale=0.4)
    init = ball_ensemble(n, 3, 0.7, rng)
    fast = integrate(cfg, init, h=1e-2, t_end=2.0, stepper=stepper, observer_stride=20)
    monkeypatch.setattr(dyn, "use_compiled_kernels", False)
    slow = integrate(cfg, init, h=1e-2, t_end=2.0, stepper=stepper, observer_stride=20)
    assert float(norm(fast.states - slow.states).max()) < 1e-11
    np.testing.assert_allclose(fast.distances, slow.distances, atol=1e-11)
    np.testing.assert_allclose(fast.mean_influence, slow.mean_influence, atol=1e-11)


@pytest.mark.parametrize("influence", [
    make_linear_hat(1.2),
    make_cosine_taper(1.0),
    make_continuum_profile(2.0, 1.0, 0.6, 1.2),
    make_tabulated([0.0, 0.4, 0.9, 1.3], [1.0, 0.6, 0.1, 0.0]),
], ids=["hat", "taper", "continuum", "tabulated"])
def test_compiled_path_covers_every_profile_kind(influence, rng, monkeypatch):
    cfg = make_config(3, 4, rng, influence=influence)
    init = ball_ensemble(3, 4, 0.8, rng)
    fast = integrate(cfg, init, h=1e-2, t_end=1.0, observer_stride=10)
    monkeypatch.setattr(dyn, "use_compiled_kernels", False)
    slow = integrate(cfg, init, h=1e-2, t_end=1.0, observer_stride=10)
    assert float(norm(fast.states - slow.states).max()) < 1e-11


def test_compiled_path_handles_offset_attraction(rng, monkeypatch):
    q = sample_haar(3, rng)
    cfg = make_config(3, 3, rng, attraction=q)
    init = np.stack([q @ sample_ball(3, 0.7, rng) for _ in range(3)])
    fast = integrate(cfg, init, h=1e-2, t_end=1.5, observer_stride=15)
    monkeypatch.setattr(dyn, "use_compiled_kernels", False)
    slow = integrate(cfg, init, h=1e-2, t_end=1.5, observer_stride=15)
    assert float(norm(fast.states - slow.states).max()) < 1e-11


# ---------------------------------------------------------------------------
# translation equivariance


def test_translate_right_identity_and_validation(rng):
    rot = ball_ensemble(3, 2, 0.5, rng)
    np.testing.assert_allclose(translate_right(rot, np.eye(3)), rot, atol=0.0)
    with pytest.raises(ValueError):
        translate_right(rot, np.diag([1.0, 1.0, 2.0]))


def test_translate_right_preserves_translated_distances(rng):
    t = sample_haar(4, rng)
    rot = ball_ensemble(4, 3, 1.0, rng)
    d0 = batch_distances(rot)
    d1 = batch_distances(translate_right(rot, t), attraction=t)
    np.testing.assert_allclose(d1, d0, atol=1e-10)


def test_flow_is_equivariant_under_right_translation(rng):
    t = sample_haar(3, rng)
    cfg = make_config(3, 3, rng)
    cfg_t = ModelConfig(kappa=cfg.kappa, frequencies=cfg.frequencies,
                        influence=cfg.influence, attraction=t)
    init = ball_ensemble(3, 3, 0.7, rng)
    a = integrate(cfg, init, h=1e-2, t_end=2.0, observer_stride=20)
    b = integrate(cfg_t, translate_right(init, t), h=1e-2, t_end=2.0,
                  observer_stride=20)
    moved = np.stack([s @ t for s in a.states])
    assert float(norm(b.states - moved).max()) < 1e-10
    np.testing.assert_allclose(a.distances, b.distances, atol=1e-10)


# ---------------------------------------------------------------------------
# observation and failure handling


def test_time_zero_run_records_single_sample(rng):
    cfg = make_config(3, 2, rng)
    init = ball_ensemble(3, 2, 0.5, rng)
    rec = integrate(cfg, init, h=1e-2, t_end=0.0)
    assert rec.times.shape == (1,)
    assert rec.times[0] == 0.0
    np.testing.assert_allclose(rec.states[0], init, atol=0.0)


def test_observer_stride_includes_ragged_final_step(rng):
    cfg = make_config(3, 2, rng)
    init = ball_ensemble(3, 2, 0.5, rng)
    rec = integrate(cfg, init, h=0.1, t_end=0.7, observer_stride=3)
    np.testing.assert_allclose(rec.times, [0.0, 0.3, 0.6, 0.7], atol=1e-12)
    assert rec.distances.shape == (4, 2)


def test_states_can_be_left_unrecorded(rng):
    cfg = make_config(3, 2, rng)
    init = ball_ensemble(3, 2, 0.5, rng)
    rec = integrate(cfg, init, h=0.1, t_end=0.5, record_states=False)
    assert rec.states is None
    with pytest.raises(ValueError, match="not recorded"):
        rec.final_states()
    with pytest.raises(ValueError, match="states"):
        rec.l1_distance_to_point(init)


def test_mismatched_grids_refuse_l1_comparison(rng):
    cfg = make_config(3, 2, rng)
    init = ball_ensemble(3, 2, 0.5, rng)
    a = integrate(cfg, init, h=0.1, t_end=0.4)
    b = integrate(cfg, init, h=0.1, t_end=0.8)
    with pytest.raises(ValueError, match="grid"):
        a.l1_distance_to(b)


def test_drift_beyond_tolerance_aborts(rng):
    cfg = make_config(3, 2, rng, kappa=0.0)
    init = ball_ensemble(3, 2, 0.5, rng)
    init = init + 5e-12   # off-manifold but inside the input gate
    with pytest.raises(ManifoldDriftError):
        integrate(cfg, init, h=1e-2, t_end=1.0, orth_tol=1e-13)


def test_integrate_input_validation(rng):
    cfg = make_config(3, 2, rng)
    init = ball_ensemble(3, 2, 0.5, rng)
    with pytest.raises(ValueError, match="stepper"):
        integrate(cfg, init, h=1e-2, t_end=1.0, stepper="euler")
    with pytest.raises(ValueError, match="h must"):
        integrate(cfg, init, h=0.0, t_end=1.0)
    with pytest.raises(ValueError, match="h must"):
        integrate(cfg, init, h=1e-2, t_end=-1.0)
    with pytest.raises(ValueError, match="observer_stride"):
        integrate(cfg, init, h=1e-2, t_end=1.0, observer_stride=0)
    with pytest.raises(ValueError, match="shape"):
        integrate(cfg, init[:1], h=1e-2, t_end=1.0)
    with pytest.raises(ValueError):
        integrate(cfg, init + 0.1, h=1e-2, t_end=1.0)


def test_model_config_validation(rng):
    hat = make_linear_hat(1.0)
    with pytest.raises(ValueError, match="shape"):
        ModelConfig(kappa=1.0, frequencies=np.zeros((3, 3)), influence=hat)
    with pytest.raises(ValueError, match="skew"):
        ModelConfig(kappa=1.0, frequencies=np.ones((2, 3, 3)), influence=hat)
    with pytest.raises(ValueError, match="kappa"):
        ModelConfig(kappa=-0.5, frequencies=np.zeros((2, 3, 3)), influence=hat)
    with pytest.raises(ValueError, match="dimension"):
        ModelConfig(kappa=1.0, frequencies=np.zeros((2, 3, 3)), influence=hat,
                    attraction=np.eye(4))
    cfg = ModelConfig(kappa=1.0, frequencies=np.zeros((2, 3, 3)), influence=hat)
    assert cfg.n == 3 and cfg.count == 2
    assert cfg.homogeneous()
    assert cfg.max_frequency_norm == 0.0


# ---------------------------------------------------------------------------
# batched primitives


def test_batch_distances_match_canonical_form_oracle(rng):
    for n in range(2, 8):   # n = 7 exercises the eigensolver branch
        rs = np.stack([sample_haar(n, rng) for _ in range(60)])
        ref = np.array([geodesic_distance(np.eye(n), r) for r in rs])
        np.testing.assert_allclose(batch_distances(rs), ref, atol=1e-10)


def test_batch_exponential_matches_scipy(rng):
    for n in (2, 3, 4, 6):
        for scale in (0.01, 0.04, 0.8, 3.0):   # straddles the squaring threshold
            xs = np.stack([skew_with_norm(n, rng, scale) for _ in range(5)])
            want = np.stack([scipy.linalg.expm(x) for x in xs])
            got = _expm_skew_batch(xs)
            assert float(norm(got - want).max()) < 1e-11
            check_rotation(got)
            np.testing.assert_allclose(got, np.stack([exp_so(x) for x in xs]),
                                       atol=1e-11)


# ---------------------------------------------------------------------------
# planar helpers


def test_phase_extraction_and_rates():
    thetas = np.array([0.3, -1.2, 2.9])
    rots = np.stack([planar(t) for t in thetas])
    np.testing.assert_allclose(phases_of(rots), thetas, atol=1e-14)
    freqs = np.stack([[[0.0, -v], [v, 0.0]] for v in (0.5, -0.25, 0.0)])
    cfg = ModelConfig(kappa=1.0, frequencies=freqs, influence=make_linear_hat(1.0))
    np.testing.assert_allclose(planar_rates(cfg), [0.5, -0.25, 0.0], atol=0.0)


def test_planar_helpers_reject_other_dimensions(rng):
    with pytest.raises(ValueError, match="n = 2"):
        phases_of(np.eye(3)[None])
    cfg3 = make_config(3, 2, rng)
    with pytest.raises(ValueError, match="n = 2"):
        planar_rates(cfg3)
    cfg2 = ModelConfig(kappa=1.0, frequencies=np.zeros((2, 2, 2)),
                       influence=make_linear_hat(1.0), attraction=planar(0.4))
    with pytest.raises(ValueError, match="identity attraction"):
        reduced_phase_rhs(np.zeros(2), cfg2)
