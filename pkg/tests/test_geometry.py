"""Rotation-group primitives against independent linear-algebra oracles."""

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, strategies as st

from conftest import skew_with_norm, unit_skew
from sowinfree.geometry import (BranchAmbiguityError, canonical_rotation_form,
                                canonical_skew_form, check_rotation, check_skew,
                                exp_so, geodesic_distance, half_frobenius,
                                log_so, norm, principal_angles, project_skew,
                                project_tangent, sample_ball, sample_haar,
                                trace_gap)


def planar(theta: float) -> np.ndarray:
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[c, -s], [s, c]])


def embed(n: int, theta: float) -> np.ndarray:
    """Single planar block of angle theta inside SO(n)."""
    out = np.eye(n)
    out[:2, :2] = planar(theta)
    return out


def eig_angles(r: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Rotation angles via complex eigendecomposition, descending.

    Independent oracle route: each conjugate eigenvalue pair e^{+-i theta}
    contributes one angle |arg|.
    """
    w = np.linalg.eigvals(r)
    ang = np.angle(w)
    return np.sort(ang[ang > tol])[::-1]


# ---------------------------------------------------------------------------
# inner product and projections


def test_half_frobenius_normalizes_planar_generator():
    j = np.array([[0.0, -1.0], [1.0, 0.0]])
    assert norm(j) == 1.0
    assert half_frobenius(j, j) == 1.0


def test_rotation_norm_is_sqrt_half_dim(rng):
    for n in (2, 3, 5):
        r = sample_haar(n, rng)
        assert abs(norm(r) - np.sqrt(n / 2.0)) < 1e-12


def test_project_skew_is_idempotent(rng):
    x = rng.standard_normal((4, 4))
    once = project_skew(x)
    np.testing.assert_allclose(project_skew(once), once, atol=1e-15)
    check_skew(once)


def test_project_tangent_lands_in_tangent_space(rng):
    r = sample_haar(4, rng)
    x = rng.standard_normal((4, 4))
    v = project_tangent(x, r)
    # tangent vectors at r are (skew) @ r
    assert norm(v @ r.T + (v @ r.T).T) < 1e-12


def test_project_tangent_fixes_tangent_vectors(rng):
    r = sample_haar(3, rng)
    v = skew_with_norm(3, rng, 0.7) @ r
    np.testing.assert_allclose(project_tangent(v, r), v, atol=1e-13)


def test_check_rotation_rejects_shear_and_reflection():
    with pytest.raises(ValueError, match="orthogonal"):
        check_rotation(np.array([[1.0, 0.1], [0.0, 1.0]]))
    with pytest.raises(ValueError, match="determinant"):
        check_rotation(np.diag([1.0, -1.0]))
    with pytest.raises(ValueError, match="square"):
        check_rotation(np.ones((2, 3)))
    with pytest.raises(ValueError, match="finite"):
        check_rotation(np.array([[np.nan, 0.0], [0.0, 1.0]]))


def test_check_skew_rejects_symmetric_part():
    with pytest.raises(ValueError, match="skew"):
        check_skew(np.array([[0.0, 1.0], [1.0, 0.0]]))


# ---------------------------------------------------------------------------
# canonical forms


def test_canonical_rotation_recovers_planted_angles(rng):
    angles = np.array([2.4, 1.1])
    lam = np.eye(5)
    lam[:2, :2] = planar(angles[0])
    lam[2:4, 2:4] = planar(angles[1])
    p = sample_haar(5, rng)
    form = canonical_rotation_form(p.T @ lam @ p)
    np.testing.assert_allclose(form.angles, angles, atol=1e-12)
    np.testing.assert_allclose(form.matrix(), p.T @ lam @ p, atol=1e-12)


def test_canonical_rotation_angles_match_complex_eigen_oracle(rng):
    for n in (2, 3, 4, 5, 6):
        for _ in range(20):
            r = sample_haar(n, rng)
            got = canonical_rotation_form(r).angles
            want = eig_angles(r)
            assert got.size == want.size
            np.testing.assert_allclose(got, want, atol=1e-9)


def test_canonical_rotation_handles_paired_minus_ones():
    r = np.diag([-1.0, -1.0, 1.0])
    form = canonical_rotation_form(r)
    np.testing.assert_allclose(form.angles, [np.pi], atol=1e-12)
    np.testing.assert_allclose(form.matrix(), r, atol=1e-12)


def test_canonical_rotation_of_identity_has_no_blocks():
    form = canonical_rotation_form(np.eye(4))
    assert form.angles.size == 0
    np.testing.assert_allclose(form.matrix(), np.eye(4), atol=1e-15)


def test_canonical_skew_zero_matrix_has_no_blocks():
    form = canonical_skew_form(np.zeros((3, 3)))
    assert form.rates.size == 0
    np.testing.assert_allclose(form.matrix(), np.zeros((3, 3)), atol=1e-15)


def test_canonical_skew_single_block_rate():
    nu = 0.83
    x = np.array([[0.0, -nu], [nu, 0.0]])
    form = canonical_skew_form(x)
    np.testing.assert_allclose(form.rates, [nu], atol=1e-14)
    np.testing.assert_allclose(form.matrix(), x, atol=1e-14)


def test_canonical_skew_rates_match_gram_spectrum(rng):
    # squared rates are the eigenvalues of X^T X with halved multiplicity
    for _ in range(15):
        x = skew_with_norm(6, rng, 2.0)
        rates = canonical_skew_form(x).rates
        w = np.sort(np.linalg.eigvalsh(x.T @ x))[::-1]
        paired = w[: 2 * rates.size].reshape(rates.size, 2).mean(axis=1)
        np.testing.assert_allclose(np.sort(rates)[::-1] ** 2, paired, atol=1e-10)


def test_canonical_skew_descending_and_positive(rng):
    x = skew_with_norm(7, rng, 1.5)
    rates = canonical_skew_form(x).rates
    assert np.all(rates > 0.0)
    assert np.all(np.diff(rates) <= 1e-15)


def test_skew_norm_equals_rate_norm(rng):
    x = skew_with_norm(6, rng, 1.3)
    rates = canonical_skew_form(x).rates
    assert abs(norm(x) - np.sqrt(np.sum(rates**2))) < 1e-12


def test_principal_angles_merges_tiny_blocks():
    r = embed(4, 1e-12)
    pa = principal_angles(r)
    assert pa.angles.size == 0
    assert pa.fixed_dim == 4


# ---------------------------------------------------------------------------
# exp / log


def test_exp_of_zero_is_identity():
    np.testing.assert_allclose(exp_so(np.zeros((4, 4))), np.eye(4), atol=1e-15)


@given(st.floats(min_value=-6.0, max_value=6.0))
def test_exp_planar_generator_gives_planar_rotation(theta):
    x = np.array([[0.0, -theta], [theta, 0.0]])
    np.testing.assert_allclose(exp_so(x), planar(theta), atol=1e-12)


def test_exp_matches_scaling_and_squaring_oracle(rng):
    for n in (2, 3, 4, 5, 6):
        for scale in (0.3, 2.0, 5.0):
            x = skew_with_norm(n, rng, scale)
            assert norm(exp_so(x) - scipy.linalg.expm(x)) < 1e-11


def test_exp_output_is_orthogonal_for_large_inputs(rng):
    x = skew_with_norm(6, rng, 40.0)
    check_rotation(exp_so(x))


def test_log_of_identity_is_zero():
    np.testing.assert_allclose(log_so(np.eye(3)), np.zeros((3, 3)), atol=1e-14)


@given(st.floats(min_value=0.01, max_value=3.1))
def test_log_planar_rotation_recovers_generator(theta):
    x = log_so(planar(theta))
    np.testing.assert_allclose(x, [[0.0, -theta], [theta, 0.0]], atol=1e-12)


def test_exp_log_round_trip(rng):
    for n in (2, 3, 4, 6):
        for _ in range(10):
            r = sample_ball(n, 2.9, rng)
            np.testing.assert_allclose(exp_so(log_so(r)), r, atol=1e-10)


def test_log_matches_scipy_oracle(rng):
    for _ in range(10):
        r = sample_ball(5, 2.0, rng)
        want = scipy.linalg.logm(r)
        np.testing.assert_allclose(log_so(r), np.real(want), atol=1e-9)


def test_log_norm_equals_distance(rng):
    r = sample_ball(4, 2.5, rng)
    assert abs(norm(log_so(r)) - geodesic_distance(np.eye(4), r)) < 1e-11


def test_log_refuses_angle_pi():
    with pytest.raises(BranchAmbiguityError):
        log_so(planar(np.pi))
    with pytest.raises(BranchAmbiguityError):
        log_so(np.diag([-1.0, -1.0, 1.0]))


def test_distance_defined_at_angle_pi():
    assert abs(geodesic_distance(np.eye(2), planar(np.pi)) - np.pi) < 1e-12


# ---------------------------------------------------------------------------
# distance and the trace-gap sandwich


def test_distance_of_single_block_is_angle():
    assert abs(geodesic_distance(np.eye(4), embed(4, 1.2)) - 1.2) < 1e-12


def test_distance_is_symmetric_and_right_invariant(rng):
    a = sample_haar(4, rng)
    b = sample_haar(4, rng)
    t = sample_haar(4, rng)
    d = geodesic_distance(a, b)
    assert abs(d - geodesic_distance(b, a)) < 1e-11
    assert abs(d - geodesic_distance(np.eye(4), a.T @ b)) < 1e-11
    assert abs(d - geodesic_distance(a @ t, b @ t)) < 1e-11


def test_trace_gap_examples():
    assert trace_gap(np.eye(3)) == 0.0
    r = embed(3, np.pi / 3.0)
    gap = trace_gap(r)
    assert abs(gap - 1.0) < 1e-14
    d = np.pi / 3.0
    assert 4.0 * np.sin(d / 2.0) ** 2 <= gap + 1e-14 <= d * d


@given(st.floats(min_value=1e-6, max_value=np.pi))
def test_trace_gap_tight_on_single_blocks(theta):
    gap = trace_gap(embed(5, theta))
    assert abs(gap - 4.0 * np.sin(theta / 2.0) ** 2) < 1e-12


def test_trace_gap_sandwich_on_haar_samples():
    rng = np.random.default_rng(11)
    for n in (2, 3, 4, 5, 6):
        rs = np.stack([sample_haar(n, rng) for _ in range(2000)])
        tr = np.einsum("kii->k", rs)
        gaps = n - tr
        from sowinfree.dynamics import batch_distances
        d = batch_distances(rs)
        keep = d <= np.pi
        assert np.all(4.0 * np.sin(d[keep] / 2.0) ** 2 <= gaps[keep] + 1e-12)
        assert np.all(gaps[keep] <= d[keep] ** 2 + 1e-12)


# ---------------------------------------------------------------------------
# samplers


def test_haar_sampler_is_deterministic():
    a = sample_haar(4, 123)
    b = sample_haar(4, 123)
    assert np.array_equal(a, b)
    check_rotation(a)


def test_haar_trace_is_centered():
    # E[tr] = 0 on SO(3) (var 1), so the 20000-sample mean sits within a
    # few times 1/sqrt(20000) of zero
    rng = np.random.default_rng(5)
    mean = np.mean([np.trace(sample_haar(3, rng)) for _ in range(20000)])
    assert abs(mean) < 0.03


def test_ball_sampler_respects_radius():
    rng = np.random.default_rng(9)
    dists = [geodesic_distance(np.eye(3), sample_ball(3, 1.0, rng))
             for _ in range(1000)]
    assert max(dists) < 1.0
    assert min(dists) > 0.0


def test_ball_sampler_tiny_radius_stays_near_identity():
    r = sample_ball(4, 1e-8, 3)
    assert norm(r - np.eye(4)) < 1e-8


def test_ball_sampler_rejects_bad_radius():
    with pytest.raises(ValueError):
        sample_ball(3, 0.0, 1)
    with pytest.raises(ValueError):
        sample_ball(3, 3.5, 1)


def test_unit_skew_helper_is_unit_norm(rng):
    assert abs(norm(unit_skew(5, rng)) - 1.0) < 1e-12
