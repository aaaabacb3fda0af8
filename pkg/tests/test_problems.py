from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cellident.models import Protocol, SpmModel
from cellident.parameters import Parameter, ParameterSet
from cellident.problems import (Dataset, DesignProblem, FittingProblem, InfeasibleDesign, MassModel, SynthSpec,
                                cell_mass, format_float, synthesize)

from conftest import D_TRUE, RC_TRUE, spm_parameters, spm_protocol

DATA = Path(__file__).parent / "data"


class TestDataset:
    def test_csv_round_trip_is_lossless(self, tmp_path, rng):
        t = np.cumsum(rng.uniform(0.1, 2.0, 200))
        d = Dataset.time_series(t, rng.normal(size=200), rng.normal(size=200) * 1e-3 + 3.7)
        path = tmp_path / "d.csv"
        d.to_csv(path)
        back = Dataset.from_csv(path)
        assert back.equals(d)
        assert back.to_csv() == path.read_text()

    def test_spectrum_round_trip(self, tmp_path, rng):
        f = np.logspace(-3, 3, 25)
        z = rng.normal(size=25) + 1j * rng.normal(size=25)
        d = Dataset.spectrum(f, z)
        d.to_csv(tmp_path / "z.csv")
        assert Dataset.from_csv(tmp_path / "z.csv").equals(d)

    @settings(max_examples=300, deadline=None)
    @given(st.floats(allow_nan=False, allow_infinity=False))
    def test_format_float_round_trips(self, x):
        assert float(format_float(x)) == x

    @pytest.mark.parametrize("args", [
        ("time", [0, 0], ([1, 1], [1, 1])),
        ("time", [0, 1], ([1], [1, 1])),
        ("time", [0, 1], ([1, np.nan], [1, 1])),
        ("frequency", [-1, 1], [1, 1]),
        ("other", [0, 1], [1, 1]),
    ])
    def test_validation(self, args):
        with pytest.raises(ValueError):
            Dataset(*args)

    def test_bad_header(self, tmp_path):
        (tmp_path / "x.csv").write_text("a,b,c\n1,2,3\n2,3,4\n")
        with pytest.raises(ValueError):
            Dataset.from_csv(tmp_path / "x.csv")

    def test_read_only(self, ecm_data):
        with pytest.raises(ValueError):
            ecm_data.voltage[0] = 0.0


class TestFittingProblem:
    def test_truth_reproduces_clean_data(self, spm, spm_clean):
        prob = FittingProblem(spm, spm_parameters(), spm_clean)
        pred = prob.evaluate([D_TRUE, RC_TRUE])
        assert np.max(np.abs(pred.values - spm_clean.voltage)) < 1e-9

    def test_stored_reference_trace(self, spm):
        ref = Dataset.from_csv(DATA / "spm_reference_dt10.csv")
        pred = FittingProblem(spm, spm_parameters(), ref).evaluate([D_TRUE, RC_TRUE])
        assert np.max(np.abs(pred.values - ref.voltage)) < 1e-8

    def test_repeat_is_identical(self, ecm, ecm_data):
        prob = FittingProblem(ecm, ParameterSet([Parameter("R0", 0.001, 0.1)]), ecm_data)
        a, b = prob.evaluate([0.012]).values, prob.evaluate([0.012]).values
        assert np.array_equal(a, b)

    def test_sensitivities_shape(self, ecm, ecm_data):
        params = ParameterSet([Parameter("R0", 0.001, 0.1), Parameter("R1", 0.001, 0.1)])
        pred = FittingProblem(ecm, params, ecm_data).evaluate([0.01, 0.02], sensitivities=True)
        assert pred.sensitivities.shape == (len(ecm_data), 2)

    def test_unknown_parameter(self, ecm, ecm_data):
        with pytest.raises(KeyError):
            FittingProblem(ecm, ParameterSet([Parameter("D_n", 0, 1)]), ecm_data)

    def test_fixed_overrides_default(self, ecm, ecm_data):
        params = ParameterSet([Parameter("R0", 0.001, 0.1)])
        a = FittingProblem(ecm, params, ecm_data).evaluate([0.01]).values
        b = FittingProblem(ecm, params, ecm_data, fixed={"R1": 0.03}).evaluate([0.01]).values
        assert not np.array_equal(a, b)


class TestSynthesize:
    def test_zero_noise_equals_clean(self, ecm):
        pr = Protocol.constant([(5.0, 600.0)], dt=5.0)
        data, clean = synthesize(ecm, SynthSpec({}, pr, 0.0, 1), return_clean=True)
        assert data.equals(clean)

    def test_noise_level(self, spm_data, spm_clean):
        r = spm_data.voltage - spm_clean.voltage
        assert len(r) == 5400
        assert 0.0019 <= r.std(ddof=1) <= 0.0021

    def test_seeded(self, ecm):
        pr = Protocol.constant([(5.0, 600.0)], dt=5.0)
        a = synthesize(ecm, SynthSpec({}, pr, 0.01, 9))
        b = synthesize(ecm, SynthSpec({}, pr, 0.01, 9))
        assert a.equals(b)
        assert a.metadata == {"sigma": 0.01, "seed": 9, "soc0": 1.0}

    def test_negative_sigma(self, ecm):
        with pytest.raises(ValueError):
            SynthSpec({}, Protocol.constant([(1.0, 10.0)]), -1.0)


def design_problem(rescale=True, **kw):
    params = ParameterSet([Parameter("L_p", 40e-6, 120e-6, 75.6e-6), Parameter("eps_act_p", 0.4, 0.9, 0.665)])
    return DesignProblem(SpmModel(), params, rescale_current=rescale, **kw)


class TestDesign:
    def test_cell_mass(self):
        assert cell_mass(1.0, [(1e-4, 2000.0)]) == pytest.approx(0.2)
        assert cell_mass(1.0, [(1e-4, 2000.0), (0.0, 5000.0)]) == pytest.approx(0.2)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0, 1e-3), st.floats(0, 1e-3), st.floats(1, 1e4))
    def test_cell_mass_linear(self, L1, L2, rho):
        assert cell_mass(2.0, [(L1 + L2, rho)]) == pytest.approx(
            cell_mass(2.0, [(L1, rho)]) + cell_mass(2.0, [(L2, rho)]), rel=1e-12, abs=1e-15)

    def test_infeasible_porosity(self):
        prob = design_problem()
        with pytest.raises(InfeasibleDesign):
            prob.design_evaluate([75.6e-6, 0.96])

    def test_mass_increases_with_thickness(self):
        prob = design_problem()
        m = MassModel()
        masses = [m.mass(prob.model_parameters([L, 0.665])) for L in np.linspace(40e-6, 120e-6, 9)]
        assert np.all(np.diff(masses) > 0)

    def test_rescaled_current_follows_capacity(self):
        prob = design_problem()
        p = prob.model_parameters(prob.params.initial)
        q = dict(p, L_n=2 * p["L_n"], L_p=2 * p["L_p"])
        assert prob.current(q) == pytest.approx(2 * prob.current(p), rel=1e-12)
        fixed = design_problem(rescale=False)
        assert fixed.current(q) == fixed.current(p)

    def test_discharge_reaches_cutoff(self):
        res = design_problem().design_evaluate([75.6e-6, 0.665])
        assert res.trace.outputs[-1] < 2.5
        assert res.porosity["p"] == pytest.approx(1 - 0.665 - 0.05)

    def test_cutoff_above_ocv(self):
        with pytest.raises(ValueError):
            design_problem(cutoff_voltage=4.5)
