"""Radial influence profiles: values, Lipschitz data, serialization."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from sowinfree.influence import (ambient_lipschitz_bound, from_dict,
                                 load_tabulated, make_continuum_profile,
                                 make_cosine_taper, make_linear_hat,
                                 make_tabulated, validate_profile)
from sowinfree.geometry import exp_so


def test_linear_hat_values():
    f = make_linear_hat(1.0)
    assert f(0.0) == 1.0
    assert f(1.5) == 0.0
    assert f.beta == 1.0
    assert f.lip == 1.0
    g = make_linear_hat(0.8)
    assert abs(g(0.4) - 0.5) < 1e-15


def test_linear_hat_vector_argument():
    f = make_linear_hat(2.0)
    np.testing.assert_allclose(f(np.array([0.0, 1.0, 2.0, 3.0])),
                               [1.0, 0.5, 0.0, 0.0], atol=1e-15)


def test_negative_radius_rejected():
    f = make_linear_hat(1.0)
    with pytest.raises(ValueError, match="nonnegative"):
        f(-0.1)
    with pytest.raises(ValueError, match="nonnegative"):
        f(np.array([0.2, -0.2]))


def test_at_rotation_uses_geodesic_distance():
    f = make_linear_hat(1.0)
    x = np.array([[0.0, -0.25], [0.25, 0.0]])
    assert abs(f.at_rotation(exp_so(x)) - 0.75) < 1e-12


def test_cosine_taper_values():
    f = make_cosine_taper(1.0)
    assert f(0.0) == 1.0
    assert abs(f(0.5) - 0.5) < 1e-15
    assert f(1.0) == 0.0
    # continuous at the support edge
    assert f(1.0 - 1e-9) < 1e-8


def test_constructors_reject_nonpositive_beta():
    with pytest.raises(ValueError):
        make_linear_hat(0.0)
    with pytest.raises(ValueError):
        make_cosine_taper(-1.0)


def test_ambient_bound_spot_value():
    # beta / sin(beta) at beta = 1 with unit radial constant
    f = make_linear_hat(1.0)
    assert abs(ambient_lipschitz_bound(f) - 1.1883951057781212) < 1e-15


def test_ambient_bound_requires_support_in_zero_pi():
    f = make_linear_hat(4.0)
    with pytest.raises(ValueError):
        ambient_lipschitz_bound(f)


def test_radial_lipschitz_holds_empirically(rng):
    for f in (make_linear_hat(1.3), make_cosine_taper(0.9),
              make_continuum_profile(2.0, 1.0, 0.6, 1.2)):
        a = rng.uniform(0.0, np.pi, size=4000)
        b = rng.uniform(0.0, np.pi, size=4000)
        ratio = np.abs(f(a) - f(b)) / np.maximum(np.abs(a - b), 1e-12)
        assert np.max(ratio) <= f.lip * (1.0 + 1e-9)


def test_continuum_profile_inverts_sine_on_target_band():
    kappa, lam, x0 = 2.0, 1.0, 0.6
    f = make_continuum_profile(kappa, lam, x0, 1.2)
    xs = np.linspace(x0, 1.0, 100)
    # at r(x) = arcsin(lam / (kappa x)) the profile must return exactly x
    r = np.arcsin(lam / (kappa * xs))
    np.testing.assert_allclose(f(r), xs, atol=1e-12)


def test_continuum_profile_piece_joins():
    f = make_continuum_profile(2.0, 1.0, 0.6, 1.2)
    r1 = np.arcsin(0.5)
    assert abs(f(r1) - 1.0) < 1e-12
    assert f(r1 / 2.0) == 1.0
    rx0 = np.arcsin(1.0 / (2.0 * 0.6))
    assert abs(f(rx0) - 0.6) < 1e-12
    assert f(1.2) == 0.0
    assert f(2.0) == 0.0


def test_continuum_profile_preconditions():
    with pytest.raises(ValueError, match="x0"):
        make_continuum_profile(2.0, 1.0, 0.4, 1.2)   # x0 <= lam/kappa
    with pytest.raises(ValueError, match="x0"):
        make_continuum_profile(2.0, 1.0, 1.0, 1.2)
    with pytest.raises(ValueError, match="beta"):
        make_continuum_profile(2.0, 1.0, 0.6, 0.9)   # beta <= r(x0)
    with pytest.raises(ValueError, match="beta"):
        make_continuum_profile(2.0, 1.0, 0.6, 1.6)   # beta >= pi/2
    with pytest.raises(ValueError):
        make_continuum_profile(-2.0, 1.0, 0.6, 1.2)


def test_tabulated_round_trip(tmp_path):
    knots = np.array([0.0, 0.5, 1.0, 1.5])
    values = np.array([1.0, 0.7, 0.2, 0.0])
    f = make_tabulated(knots, values)
    assert f.beta == 1.5
    assert abs(f(0.25) - 0.85) < 1e-15
    assert f(2.0) == 0.0
    path = tmp_path / "profile.csv"
    path.write_text("# r, value\n" + "\n".join(
        f"{k},{v}" for k, v in zip(knots, values)) + "\n")
    g = load_tabulated(path)
    assert g.beta == f.beta
    grid = np.linspace(0.0, 2.0, 101)
    np.testing.assert_allclose(g(grid), f(grid), atol=1e-15)


def test_tabulated_support_is_first_zero():
    f = make_tabulated([0.0, 0.4, 0.8, 1.2], [1.0, 0.5, 0.0, 0.0])
    assert f.beta == 0.8


def test_tabulated_rejections():
    with pytest.raises(ValueError, match="start at 0"):
        make_tabulated([0.1, 0.5], [1.0, 0.0])
    with pytest.raises(ValueError, match="increase"):
        make_tabulated([0.0, 0.5, 0.5], [1.0, 0.5, 0.0])
    with pytest.raises(ValueError, match="start at 1"):
        make_tabulated([0.0, 0.5], [0.9, 0.0])
    with pytest.raises(ValueError, match="nonincreasing"):
        make_tabulated([0.0, 0.3, 0.6, 0.9], [1.0, 0.2, 0.4, 0.0])
    with pytest.raises(ValueError, match="end at 0"):
        make_tabulated([0.0, 0.5], [1.0, 0.1])
    with pytest.raises(ValueError, match="equal-length"):
        make_tabulated([0.0, 0.5], [1.0, 0.5, 0.0])


def test_from_dict_rebuilds_each_kind():
    originals = [make_linear_hat(0.9), make_cosine_taper(1.1),
                 make_continuum_profile(2.0, 1.0, 0.6, 1.2),
                 make_tabulated([0.0, 0.6, 1.0], [1.0, 0.3, 0.0])]
    grid = np.linspace(0.0, 1.6, 257)
    for f in originals:
        g = from_dict(f.to_dict())
        assert g.kind == f.kind
        assert g.beta == f.beta
        assert g.lip == f.lip
        np.testing.assert_allclose(g(grid), f(grid), atol=1e-15)
    with pytest.raises(ValueError, match="unknown"):
        from_dict({"kind": "gaussian", "params": {}})


def test_validate_profile_accepts_constructors():
    for f in (make_linear_hat(1.0), make_cosine_taper(1.3),
              make_continuum_profile(2.0, 1.0, 0.6, 1.2),
              make_tabulated([0.0, 1.0], [1.0, 0.0])):
        validate_profile(f)


def test_validate_profile_flags_bad_profiles():
    from sowinfree.influence import InfluenceFunction
    rising = InfluenceFunction("tabulated", 1.0, 2.0,
                               lambda r: np.clip(r, 0.0, 1.0), {})
    with pytest.raises(ValueError):
        validate_profile(rising)
    wide = InfluenceFunction("linear-hat", 0.5, 2.0,
                             make_linear_hat(1.0).profile, {})
    with pytest.raises(ValueError, match="vanish"):
        validate_profile(wide)
    lying = InfluenceFunction("linear-hat", 1.0, 0.1,
                              make_linear_hat(1.0).profile, {})
    with pytest.raises(ValueError, match="Lipschitz"):
        validate_profile(lying)


@given(st.floats(min_value=0.0, max_value=4.0))
def test_profiles_stay_in_unit_interval(r):
    for f in (make_linear_hat(1.2), make_cosine_taper(0.7),
              make_continuum_profile(2.0, 1.0, 0.6, 1.2)):
        v = f(r)
        assert 0.0 <= v <= 1.0


@given(st.floats(min_value=0.0, max_value=1.5), st.floats(min_value=0.0, max_value=1.5))
def test_hat_is_nonincreasing(a, b):
    f = make_linear_hat(1.1)
    lo, hi = sorted((a, b))
    assert f(hi) <= f(lo) + 1e-15
