import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from cellident.estimators import BayesianEstimator, ParameterEstimator, resolve_model, validate_time_series
from cellident.models import EcmConfig, SpmConfig

ECM_PARAMS = [{"name": "R0", "lower": 0.005, "upper": 0.02}, {"name": "R1", "lower": 0.01, "upper": 0.03}]


def xy(data):
    return np.column_stack([data.time, data.current]), data.voltage


def test_point_estimate_and_predict(ecm_data):
    X, y = xy(ecm_data)
    # ecm_data is generated at the default coefficients R0=0.01, R1=0.02
    est = ParameterEstimator(model="ecm", parameters=ECM_PARAMS, optimiser="cmaes", max_evaluations=600, seed=1)
    est.fit(X, y)
    assert est.params_["R0"] == pytest.approx(0.01, rel=0.01)
    assert est.params_["R1"] == pytest.approx(0.02, rel=0.01)
    resid = est.predict(X) - y
    assert resid.std() == pytest.approx(1e-3, rel=0.1)
    assert est.score(X, y) > 0.99


def test_clone_and_params():
    est = ParameterEstimator(model="ecm", parameters=ECM_PARAMS, cost="rmse")
    c = clone(est)
    assert c.get_params()["cost"] == "rmse" and c.parameters == ECM_PARAMS


def test_map_cost(ecm_data):
    X, y = xy(ecm_data)
    est = ParameterEstimator(model="ecm", parameters=ECM_PARAMS, cost="map", optimiser="nelder-mead",
                             max_evaluations=400).fit(X, y)
    assert set(est.params_) == {"R0", "R1", "sigma"}
    assert est.params_["sigma"] == pytest.approx(1e-3, rel=0.1)


def test_bayesian(ecm_data):
    X, y = xy(ecm_data)
    est = BayesianEstimator(model="ecm", parameters=ECM_PARAMS, sigma=1e-3, n_chains=2, iterations=1500,
                            seed=2).fit(X, y)
    s = est.summary_
    # with flat priors the posterior centres on the least-squares point
    ls = ParameterEstimator(model="ecm", parameters=ECM_PARAMS, optimiser="nelder-mead", max_evaluations=400).fit(X, y)
    assert np.all(np.abs(s.mean - [ls.params_["R0"], ls.params_["R1"]]) < 3 * s.std)
    assert est.predict(X).shape == y.shape


def test_unfitted_predict(ecm_data):
    X, _ = xy(ecm_data)
    with pytest.raises(NotFittedError):
        ParameterEstimator(model="ecm", parameters=ECM_PARAMS).predict(X)


def test_validation():
    with pytest.raises(ValueError):
        validate_time_series(np.ones((5, 3)))
    with pytest.raises(ValueError):
        validate_time_series(np.column_stack([[0, 0, 1], [1, 1, 1]]))
    with pytest.raises(ValueError):
        ParameterEstimator(model="ecm", parameters=[]).fit(np.column_stack([[0, 1, 2], [1, 1, 1]]), [3, 3, 3])
    with pytest.raises(ValueError):
        ParameterEstimator(model="ecm", parameters=ECM_PARAMS, cost="gravimetric-energy-density").fit(
            np.column_stack([[0, 1, 2], [1, 1, 1]]), [3, 3, 3])


def test_resolve_model():
    assert resolve_model("ecm").name != resolve_model(None).name
    assert resolve_model(SpmConfig()).name == resolve_model("spm").name
    assert resolve_model(EcmConfig(R0=0.02)).defaults["R0"] == 0.02
    with pytest.raises(ValueError):
        resolve_model("dfn")
