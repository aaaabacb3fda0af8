import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cellident.parameters import (Parameter, ParameterSet, Prior, Transformation, chain_gradient, from_search,
                                  prior_logpdf, sample_prior, to_search)

LN_3_3E_14 = -31.0422688334442050  # mpmath, 30 digits
HALF_LN_2PI = 0.918938533204672742


def one(transform, lower=-10.0, upper=10.0, initial=None, prior=None):
    return ParameterSet([Parameter("x", lower, upper, initial, prior, transform)])


class TestTransforms:
    def test_identity(self):
        ps = one(Transformation.identity())
        assert to_search([0.5], ps)[0] == 0.5
        assert from_search([0.5], ps)[0] == 0.5

    def test_log(self):
        ps = one(Transformation.log(), 1e-20, 1.0)
        assert to_search([3.3e-14], ps)[0] == pytest.approx(LN_3_3E_14, rel=1e-15)
        assert from_search([0.0], ps)[0] == 1.0

    def test_affine(self):
        ps = one(Transformation.affine(2.0, 1.0))
        assert to_search([5.0], ps)[0] == pytest.approx(2.0)
        assert from_search([2.0], ps)[0] == pytest.approx(5.0)

    @pytest.mark.parametrize("t, theta, expected", [
        (Transformation.identity(), 0.7, 3.0),
        (Transformation.log(), 2.0, 6.0),
        (Transformation.affine(2.0, 1.0), 0.7, 6.0),
    ])
    def test_chain_gradient(self, t, theta, expected):
        ps = one(t, 0.1, 5.0)
        assert chain_gradient([3.0], [theta], ps)[0] == pytest.approx(expected)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            Transformation("sqrt")

    def test_log_rejects_nonpositive_bound(self):
        with pytest.raises(ValueError):
            Parameter("x", 0.0, 1.0, transform=Transformation.log())

    @settings(max_examples=200, deadline=None)
    @given(st.floats(1e-300, 1e300), st.floats(-1e6, 1e6), st.floats(0.01, 100.0), st.floats(-50, 50))
    def test_round_trip(self, pos, any_value, scale, offset):
        assert Transformation.log().from_search(Transformation.log().to_search(pos)) == pytest.approx(pos, rel=1e-12)
        aff = Transformation.affine(scale, offset)
        assert aff.from_search(aff.to_search(any_value)) == pytest.approx(any_value, rel=1e-9, abs=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(1e-3, 1e3))
    def test_log_jacobian_matches_derivative(self, theta):
        t = Transformation.log()
        u = t.to_search(theta)
        assert math.exp(float(t.log_abs_det(u))) == pytest.approx(float(t.derivative(theta)), rel=1e-12)


class TestPriors:
    def test_uniform(self):
        ps = one(Transformation.identity(), 0.0, 1.0)
        assert prior_logpdf([0.5], ps) == 0.0
        assert Prior.uniform(0, 1).logpdf(2.0) == -math.inf

    def test_gaussian_at_mean(self):
        assert Prior.gaussian(0.0, 1.0).logpdf(0.0) == pytest.approx(-HALF_LN_2PI, rel=1e-14)

    def test_log_uniform_normalised(self):
        p = Prior.log_uniform(1e-3, 1.0)
        x = np.geomspace(1e-3, 1.0, 20001)
        dens = np.exp([p.logpdf(v) for v in x])
        assert np.trapezoid(dens, x) == pytest.approx(1.0, rel=1e-4)

    def test_default_prior_is_uniform_over_bounds(self):
        p = Parameter("x", 2.0, 4.0)
        assert p.prior == Prior.uniform(2.0, 4.0)
        assert p.initial == 3.0

    def test_unbounded_needs_prior(self):
        with pytest.raises(ValueError):
            Parameter("x")
        Parameter("x", prior=Prior.gaussian(0, 1))

    def test_support_must_contain_bounds(self):
        with pytest.raises(ValueError):
            Parameter("x", 0.0, 2.0, prior=Prior.uniform(0.0, 1.0))

    def test_sample_in_support_and_deterministic(self):
        ps = one(Transformation.identity(), 0.0, 1.0)
        a = sample_prior(ps, np.random.default_rng(3))
        b = sample_prior(ps, np.random.default_rng(3))
        assert 0.0 <= a[0] <= 1.0
        assert np.array_equal(a, b)

    def test_sample_mean(self):
        rng = np.random.default_rng(0)
        p = Prior.uniform(0.0, 1.0)
        draws = np.array([p.sample(rng) for _ in range(100_000)])
        assert abs(draws.mean() - 0.5) < 0.01


class TestParameterSet:
    def test_duplicate_names(self):
        with pytest.raises(ValueError):
            ParameterSet([Parameter("a", 0, 1), Parameter("a", 0, 1)])

    def test_initial_outside_bounds(self):
        with pytest.raises(ValueError):
            Parameter("a", 0, 1, 2.0)

    def test_search_bounds_sorted_for_negative_scale(self):
        ps = one(Transformation.affine(-2.0, 0.0), 0.0, 4.0)
        lo, hi = ps.search_bounds()
        assert (lo[0], hi[0]) == (-2.0, 0.0)

    def test_dict_round_trip(self):
        spec = {"name": "D_n", "lower": 1e-14, "upper": 1e-13, "initial": 5e-14, "transform": "log",
                "prior": {"kind": "log-uniform", "a": 1e-14, "b": 1e-13}}
        p = Parameter.from_dict(spec)
        assert Parameter.from_dict(p.to_dict()) == p
        assert p.transform.kind == "log"

    def test_mapping_helpers(self):
        ps = ParameterSet([Parameter("a", 0, 1), Parameter("b", 0, 2)])
        assert ps.as_dict([0.1, 0.2]) == {"a": 0.1, "b": 0.2}
        assert np.array_equal(ps.from_mapping({"b": 1.0, "a": 0.5}), [0.5, 1.0])
        assert ps.index("b") == 1 and "a" in ps and ps["b"].upper == 2
