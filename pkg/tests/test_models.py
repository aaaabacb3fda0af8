import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cellident.models import (BuildError, Curve, DaeSystem, EcmConfig, Protocol, SolverError, SolverOptions,
                              SpmConfig, SpmModel, build_ecm, build_spm, fd_step, find_steady_state, integrate,
                              integrate_with_sensitivities, rebuild_geometry, theoretical_capacity)
from cellident.models.spm import FARADAY

from conftest import ONE_C, spm_protocol


def decay_system():
    return DaeSystem("decay", 1, {"k": 1.0}, lambda p: np.array([1.0]),
                     lambda t, X, p, I: np.atleast_2d(X)[:, 0], rhs=lambda t, x, p, I: -p["k"] * x)


class TestSolver:
    def test_exponential(self):
        pr = Protocol((0.0,), (1.0,), [1.0])
        tr = integrate(decay_system(), None, pr, SolverOptions(rtol=1e-8, atol=1e-12))
        assert tr.outputs[-1] == pytest.approx(math.exp(-1.0), rel=1e-8)

    def test_halving_rtol_does_not_increase_error(self):
        pr = Protocol((0.0,), (5.0,), np.linspace(0.5, 5.0, 10))
        prev = math.inf
        for rtol in (1e-4, 5e-5, 2.5e-5, 1.25e-5, 6.25e-6):
            tr = integrate(decay_system(), None, pr, SolverOptions(rtol=rtol, atol=1e-14))
            err = float(np.max(np.abs(tr.outputs - np.exp(-pr.t_eval))))
            assert err <= prev * 1.0000001
            prev = err

    def test_algebraic_row(self):
        # x' = -x, 0 = z - 2x  ->  y = z = 2 e^-t
        def rhs(t, x, p, I):
            return np.array([-x[0], x[1] - 2 * x[0]])
        sys_ = DaeSystem("dae", 2, {}, lambda p: np.array([1.0, 0.0]),
                         lambda t, X, p, I: np.atleast_2d(X)[:, 1], rhs=rhs, mass=np.array([1.0, 0.0]))
        tr = integrate(sys_, None, Protocol((0.0,), (2.0,), [0.0, 1.0, 2.0]))
        assert np.allclose(tr.outputs, 2 * np.exp(-np.array([0.0, 1.0, 2.0])), rtol=1e-7)

    def test_fd_step(self):
        assert fd_step(2.0) == pytest.approx(2e-6)
        assert fd_step(0.0) == 1e-10
        assert fd_step(-3.0, rel=1e-7) == pytest.approx(3e-7)

    def test_mass_matrix_validation(self):
        with pytest.raises(BuildError):
            DaeSystem("bad", 1, {}, lambda p: np.zeros(1), lambda *a: 0, rhs=lambda *a: 0, mass=np.array([0.5]))
        with pytest.raises(BuildError):
            DaeSystem("bad", 1, {}, lambda p: np.zeros(1), lambda *a: 0)

    def test_unknown_parameter(self, ecm):
        with pytest.raises(KeyError):
            integrate(ecm, {"nope": 1.0}, Protocol.constant([(1.0, 10.0)]))


class TestProtocol:
    def test_constant_sampling(self):
        pr = Protocol.constant([(1.0, 10.0), (0.0, 5.0)], dt=1.0)
        assert pr.t_eval.size == 15 and pr.duration == 15.0
        assert pr.current_at([9.999, 10.0])[1] == 0.0  # right-continuous

    def test_from_samples_replays_current(self):
        t = np.arange(6.0)
        I = np.array([1.0, 1.0, 2.0, 2.0, 0.0, 0.0])
        pr = Protocol.from_samples(t, I)
        assert pr.currents == (1.0, 2.0, 0.0)
        assert np.array_equal(pr.sample_currents(), I)

    @pytest.mark.parametrize("kw", [dict(currents=(1.0,), durations=(-1.0,), t_eval=[0.0]),
                                    dict(currents=(1.0,), durations=(1.0,), t_eval=[0.0, 0.0]),
                                    dict(currents=(1.0,), durations=(1.0,), t_eval=[0.0, 2.0])])
    def test_validation(self, kw):
        with pytest.raises(ValueError):
            Protocol(**kw)

    def test_cutoff_stops_at_first_sample_below(self, spm):
        pr = Protocol.constant([(ONE_C, 4000.0)], dt=10.0, cutoff_voltage=3.0)
        tr = integrate(spm, None, pr, keep_states=False)
        assert tr.outputs[-1] < 3.0 and np.all(tr.outputs[:-1] >= 3.0)


class TestEcm:
    def test_rest_holds_ocv(self, ecm):
        tr = integrate(ecm, {"soc0": 0.6}, Protocol.constant([(0.0, 500.0)], dt=50.0))
        ocv = Curve.from_table(*map(np.asarray, (EcmConfig().ocv_soc, EcmConfig().ocv_volts)))
        assert np.allclose(tr.outputs, ocv(0.6), atol=1e-12)

    def test_coulomb_counting(self, ecm):
        tr = integrate(ecm, None, Protocol.constant([(5.0, 3600.0)], dt=3600.0).with_t_eval([0.0, 3600.0]))
        assert tr.states[-1, 0] == pytest.approx(0.0, abs=1e-9)

    def test_rc_step_response(self):
        R0, R1, C1, I = 0.01, 0.02, 2000.0, 5.0
        cfg = EcmConfig(R0=R0, rc=((R1, C1),))
        sys_ = build_ecm(cfg)
        t = np.arange(0.0, 1800.0, 1.0)
        tr = integrate(sys_, None, Protocol((I,), (1800.0,), t))
        ocv = Curve.from_table(np.asarray(cfg.ocv_soc), np.asarray(cfg.ocv_volts))
        exact = ocv(1.0 - I * t / (3600 * 5.0)) - I * R0 - I * R1 * (1 - np.exp(-t / (R1 * C1)))
        assert np.max(np.abs(tr.outputs - exact)) < 1e-6

    def test_long_time_limit(self, ecm):
        I = 1.0
        t_end = 5000.0
        tr = integrate(ecm, {"soc0": 0.9}, Protocol.constant([(I, t_end)], dt=100.0))
        soc = tr.states[-1, 0]
        ocv = Curve.from_table(np.asarray(EcmConfig().ocv_soc), np.asarray(EcmConfig().ocv_volts))
        assert tr.outputs[-1] == pytest.approx(ocv(soc) - I * (0.01 + 0.02), abs=1e-6)

    def test_sensitivity_R0_is_minus_current(self, ecm):
        pr = Protocol.constant([(5.0, 600.0), (0.0, 300.0), (-2.0, 300.0)], dt=10.0)
        tr = integrate_with_sensitivities(ecm, None, pr, ["R0"])
        assert np.array_equal(tr.sensitivities[:, 0], -tr.currents)

    def test_sensitivity_Q_matches_finite_difference(self, ecm):
        pr = Protocol.constant([(5.0, 1800.0), (0.0, 600.0)], dt=10.0)
        opts = SolverOptions(rtol=1e-11, atol=1e-13)
        tr = integrate_with_sensitivities(ecm, None, pr, ["Q"], opts)
        h = 1e-5 * 5.0
        yp = integrate(ecm, {"Q": 5.0 + h}, pr, opts).outputs
        ym = integrate(ecm, {"Q": 5.0 - h}, pr, opts).outputs
        fd = (yp - ym) / (2 * h)
        mask = np.abs(fd) > 1e-3 * np.abs(fd).max()
        assert np.max(np.abs(tr.sensitivities[mask, 0] / fd[mask] - 1)) < 1e-5

    def test_steady_state(self, ecm):
        x = find_steady_state(ecm, None, 0.05)
        assert np.array_equal(x, [0.05, 0.0])
        assert np.max(np.abs(ecm.F(0.0, x, ecm.resolve(), 0.0))) < 1e-10

    def test_invalid_config(self):
        with pytest.raises(BuildError):
            EcmConfig(R0=-1.0)
        with pytest.raises(BuildError):
            build_ecm(EcmConfig(ocv_soc=(0.0, 1.0), ocv_volts=(4.0, 3.0)))


class TestSpm:
    def test_open_circuit_constant(self, spm):
        p = spm.resolve({"soc0": 0.7})
        tr = integrate(spm, {"soc0": 0.7}, Protocol.constant([(0.0, 600.0)], dt=60.0))
        x0 = spm.initial_state(p)
        N = spm.info["n_shells"]
        cfg = spm.info["config"]
        ocv = cfg.positive.ocp(x0[-1] / p["c_max_p"]) - cfg.negative.ocp(x0[N - 1] / p["c_max_n"])
        assert np.allclose(tr.outputs, ocv, atol=1e-12)

    def test_one_c_equals_capacity(self, spm):
        assert theoretical_capacity(spm.resolve(), spm.info["config"]) == pytest.approx(ONE_C, rel=1e-15)

    def test_soc_100_to_0(self, spm):
        pr = Protocol.constant([(ONE_C, 3600.0)], dt=3600.0).with_t_eval([0.0, 3600.0])
        tr = integrate(spm, None, pr)
        p = spm.resolve()
        N = spm.info["n_shells"]
        mesh_n, _ = spm.info["mesh"]
        x_avg = mesh_n.average(tr.states[-1, :N]) / p["c_max_n"]
        assert x_avg == pytest.approx(spm.info["config"].negative.sto_limit, abs=1e-6)

    def test_coulomb_balance(self, spm):
        pr = Protocol.constant([(ONE_C, 3600.0)], dt=3600.0).with_t_eval([0.0, 3600.0])
        tr = integrate(spm, None, pr)
        p = spm.resolve()
        N = spm.info["n_shells"]
        mesh_n, _ = spm.info["mesh"]
        dc = mesh_n.average(tr.states[0, :N]) - mesh_n.average(tr.states[-1, :N])
        charge = p["A"] * p["L_n"] * p["eps_act_n"] * FARADAY * dc
        assert charge == pytest.approx(ONE_C * 3600.0, rel=1e-3)

    def test_grid_refinement_one_millivolt(self):
        # 10 vs 20 shells on the 1C protocol must agree to 1 mV
        y10 = integrate(build_spm(SpmConfig(n_shells=10)), None, spm_protocol(), keep_states=False).outputs
        y20 = integrate(build_spm(SpmConfig(n_shells=20)), None, spm_protocol(), keep_states=False).outputs
        assert np.max(np.abs(y10 - y20)) < 1e-3

    def test_grid_refinement_second_order(self):
        ys = {n: integrate(build_spm(SpmConfig(n_shells=n)), None, spm_protocol(), keep_states=False).outputs
              for n in (40, 80, 160)}
        e1 = np.max(np.abs(ys[40] - ys[80]))
        e2 = np.max(np.abs(ys[80] - ys[160]))
        assert e1 / e2 > 3.0

    def test_sensitivity_Rc_is_minus_current(self, spm):
        pr = Protocol.constant([(ONE_C, 600.0), (0.0, 300.0)], dt=10.0)
        tr = integrate_with_sensitivities(spm, None, pr, ["R_c", "D_n"])
        assert np.array_equal(tr.sensitivities[:, 0], -tr.currents)

    def test_sensitivity_Dn_matches_finite_difference(self, spm):
        pr = Protocol.constant([(ONE_C, 1800.0), (0.0, 600.0)], dt=10.0)
        opts = SolverOptions(rtol=1e-10, atol=1e-12)
        tr = integrate_with_sensitivities(spm, None, pr, ["D_n"], opts)
        h = 1e-4 * 3.3e-14
        yp = integrate(spm, {"D_n": 3.3e-14 + h}, pr, opts).outputs
        ym = integrate(spm, {"D_n": 3.3e-14 - h}, pr, opts).outputs
        fd = (yp - ym) / (2 * h)
        mask = np.abs(fd) > 1e-2 * np.abs(fd).max()
        assert np.max(np.abs(tr.sensitivities[mask, 0] / fd[mask] - 1)) < 1e-4

    def test_steady_state_uniform(self, spm):
        x = find_steady_state(spm, None, 0.05)
        N = spm.info["n_shells"]
        assert np.ptp(x[:N]) == 0 and np.ptp(x[N:]) == 0
        assert np.max(np.abs(spm.F(0.0, x, spm.resolve(), 0.0))) < 1e-10

    def test_depletion_raises(self, spm):
        with pytest.raises(SolverError):
            integrate(spm, None, Protocol.constant([(3 * ONE_C, 3600.0)], dt=60.0))

    def test_bad_config(self):
        with pytest.raises(BuildError):
            SpmConfig(n_shells=2)


class TestGeometry:
    def test_rebuild_counter(self):
        builder = SpmModel()
        s0 = builder.system()
        assert builder.rebuild_count == 1
        s1 = rebuild_geometry(s0, {"D_n": 4e-14})
        assert s1 is s0 and builder.rebuild_count == 1
        s2 = rebuild_geometry(s0, {"L_p": 80e-6})
        assert builder.rebuild_count == 2 and s2 is not s0
        rebuild_geometry(s2, {"L_p": 80e-6})
        assert builder.rebuild_count == 2

    def test_rebuild_changes_capacity(self):
        builder = SpmModel()
        assert builder.capacity({"L_n": 0.5 * 85.2e-6}) == pytest.approx(0.5 * builder.capacity(), rel=1e-12)


class TestCurves:
    def test_domain_nan(self):
        c = Curve.from_table([0.0, 0.5, 1.0], [3.0, 3.5, 4.0])
        assert math.isnan(float(c(1.5))) and float(c(0.5)) == 3.5

    def test_csv(self, tmp_path):
        path = tmp_path / "ocv.csv"
        path.write_text("x,volts\n0,3\n0.5,3.6\n1,4.1\n")
        c = Curve.from_csv(path, require="increasing")
        assert c.monotone == "increasing" and float(c(1.0)) == 4.1
        path.write_text("a,b\n0,1\n")
        with pytest.raises(BuildError):
            Curve.from_csv(path)

    @settings(max_examples=50, deadline=None)
    @given(st.floats(0.05, 0.95))
    def test_derivative_matches_difference(self, x):
        c = Curve.from_table(np.linspace(0, 1, 11), np.sqrt(np.linspace(0, 1, 11)) + 3)
        h = 1e-6
        fd = (float(c(x + h)) - float(c(x - h))) / (2 * h)
        assert float(c.derivative(x)) == pytest.approx(fd, rel=1e-4, abs=1e-6)
