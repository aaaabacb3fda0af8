import math
import time

import numpy as np
import pytest

from cellident.eis import (ImpedanceCost, ImpedanceProblem, ImpedanceSpectrum, default_frequencies, eis_cost,
                           impedance, linearise, sweep)
from cellident.errors import ConfigurationError
from cellident.models import EcmConfig, build_ecm
from cellident.models.curves import Curve
from cellident.parameters import Parameter, ParameterSet
from cellident.problems import Dataset

SQRT_5_2 = 1.5811388300841898  # sqrt(5/2)
SOC = 0.53  # inside a table interval, so the OCV slope is single valued


def ocv_slope(cfg, soc=SOC):
    return float(Curve.from_table(cfg.ocv_soc, cfg.ocv_volts).derivative(soc))


def analytic_z(cfg, f):
    w = 2 * math.pi * np.asarray(f)
    z = cfg.R0 + sum(R / (1 + 1j * w * R * C) for R, C in cfg.rc)
    return z + ocv_slope(cfg) / (3600.0 * cfg.capacity * 1j * w)


def dense(A):
    return A.toarray() if hasattr(A, "toarray") else np.asarray(A)


class TestLinearisation:
    def test_ecm_structure(self):
        cfg = EcmConfig(R0=0.01, rc=((0.02, 2000.0),), capacity=5.0)
        lin = linearise(build_ecm(cfg), soc=SOC)
        assert np.allclose(dense(lin.A), [[0.0, 0.0], [0.0, -1.0 / 40.0]], rtol=1e-14, atol=0)
        assert np.allclose(lin.B, [-1.0 / 18000.0, 1.0 / 2000.0], rtol=1e-14)
        assert np.allclose(lin.C, [ocv_slope(cfg), -1.0], rtol=1e-12)
        assert lin.D == pytest.approx(-0.01, rel=1e-14)
        assert lin.residual < 1e-10

    def test_fd_matches_analytic(self):
        sysm = build_ecm(EcmConfig(rc=((0.02, 2000.0), (0.005, 50.0))))
        a, f = linearise(sysm, soc=SOC), linearise(sysm, soc=SOC, method="fd")
        assert np.allclose(dense(f.A), dense(a.A), rtol=1e-6, atol=1e-12)
        assert np.allclose(f.B, a.B, rtol=1e-6)
        assert np.allclose(f.C, a.C, rtol=1e-6)
        assert f.D == pytest.approx(a.D, rel=1e-6)

    def test_soc_only_changes_slope(self):
        sysm = build_ecm(EcmConfig())
        a, b = linearise(sysm, soc=0.33), linearise(sysm, soc=0.78)
        assert np.array_equal(dense(a.A), dense(b.A)) and np.array_equal(a.B, b.B) and a.D == b.D
        assert np.array_equal(a.C[1:], b.C[1:]) and a.C[0] != b.C[0]

    def test_bad_method(self):
        with pytest.raises(ValueError):
            linearise(build_ecm(), method="exact")


class TestImpedance:
    def test_ecm_analytic_oracle(self):
        cfg = EcmConfig(R0=0.012, rc=((0.02, 2000.0), (0.004, 25.0)), capacity=4.2)
        lin = linearise(build_ecm(cfg), soc=SOC)
        f = np.logspace(-3, 4, 71)
        Z = sweep(lin, f).Z
        want = analytic_z(cfg, f)
        assert np.max(np.abs(Z - want) / np.abs(want)) < 1e-8

    def test_fd_linearisation_oracle(self):
        cfg = EcmConfig()
        lin = linearise(build_ecm(cfg), soc=SOC, method="fd")
        f = np.logspace(-3, 4, 29)
        assert np.max(np.abs(sweep(lin, f).Z - analytic_z(cfg, f)) / np.abs(analytic_z(cfg, f))) < 1e-6

    def test_pure_resistor_limit(self):
        lin = linearise(build_ecm(EcmConfig(R0=0.03, rc=())), soc=SOC)
        # the SOC integrator remains; it vanishes at high frequency
        assert impedance(lin, 2 * math.pi * 1e9).real == pytest.approx(0.03, rel=1e-12)
        assert abs(impedance(lin, 2 * math.pi * 1e9).imag) < 1e-12

    def test_high_frequency_limit(self):
        lin = linearise(build_ecm(EcmConfig(R0=0.01)), soc=SOC)
        assert impedance(lin, 2 * math.pi * 1e8) == pytest.approx(0.01, rel=1e-6)

    def test_r0_shift(self):
        f = np.logspace(-2, 3, 11)
        base = sweep(linearise(build_ecm(EcmConfig(R0=0.01)), soc=SOC), f).Z
        scaled = sweep(linearise(build_ecm(EcmConfig(R0=0.03)), soc=SOC), f).Z
        assert np.allclose(scaled - base, 0.02, rtol=0, atol=1e-14)

    def test_nonpositive_frequency(self):
        with pytest.raises(ValueError):
            impedance(linearise(build_ecm(), soc=SOC), 0.0)

    def test_single_frequency_sweep(self):
        lin = linearise(build_ecm(), soc=SOC)
        assert sweep(lin, [5.0]).Z[0] == impedance(lin, 2 * math.pi * 5.0)

    def test_default_grid(self):
        f = default_frequencies()
        assert f.size == 71 and f[0] == pytest.approx(1e-4) and f[-1] == pytest.approx(1e3)
        assert np.all(np.diff(f) > 0)
        s = sweep(linearise(build_ecm(), soc=SOC))
        assert np.array_equal(s.frequencies, f)

    def test_spectrum_validation(self):
        with pytest.raises(ValueError):
            ImpedanceSpectrum([1.0, 1.0], [1, 1])


class TestSpm:
    def test_low_soc_spectrum(self, spm):
        f = np.logspace(-4, 3, 60)
        t0 = time.perf_counter()
        s = sweep(linearise(spm, soc=0.05), f)
        assert time.perf_counter() - t0 < 10.0
        assert np.all(np.isfinite(s.Z)) and np.all(s.Z.real > 0)
        mid = (f > 1e-2) & (f < 1e2)
        assert np.all(s.Z.imag[mid] <= 0)

    def test_high_frequency_limit_exceeds_contact_resistance(self, spm):
        lin = linearise(spm, {"R_c": 0.01}, soc=0.5)
        z_inf = impedance(lin, 2 * math.pi * 1e9)
        assert z_inf.real > 0.01 and abs(z_inf.imag) < 1e-6 * z_inf.real
        shifted = impedance(linearise(spm, {"R_c": 0.02}, soc=0.5), 2 * math.pi * 1e9)
        assert shifted.real - z_inf.real == pytest.approx(0.01, rel=1e-9)


class TestCost:
    def test_identical(self):
        z = np.array([1 + 1j, 2 - 1j])
        assert eis_cost(z, z).value == 0.0

    def test_hand_value(self):
        assert eis_cost([1 + 0j, 0 + 2j], [0j, 0j]).value == pytest.approx(SQRT_5_2, rel=1e-15)

    def test_conjugation_invariant(self, rng):
        a = rng.normal(size=20) + 1j * rng.normal(size=20)
        b = rng.normal(size=20) + 1j * rng.normal(size=20)
        assert eis_cost(a.conj(), b.conj()).value == pytest.approx(eis_cost(a, b).value, rel=1e-15)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            eis_cost([1j], [1j, 2j])

    def problem(self):
        truth = EcmConfig(R0=0.015, rc=((0.025, 1500.0),))
        f = np.logspace(-3, 3, 25)
        data = Dataset.spectrum(f, sweep(linearise(build_ecm(truth), soc=SOC), f).Z, {"soc": SOC})
        params = ParameterSet([Parameter("R0", 1e-3, 0.1), Parameter("R1", 1e-3, 0.1)])
        return ImpedanceProblem(build_ecm(), params, data, fixed={"C1": 1500.0})

    def test_problem_cost_zero_at_truth(self):
        cost = ImpedanceCost(self.problem())
        assert cost([0.015, 0.025]).value < 1e-12
        assert cost([0.012, 0.025]).value > 1e-4

    def test_gradient_rejected(self):
        cost = ImpedanceCost(self.problem())
        assert not cost.differentiable
        with pytest.raises(ConfigurationError):
            cost([0.015, 0.025], gradient=True)

    def test_needs_spectrum(self, ecm_data):
        with pytest.raises(ValueError):
            ImpedanceProblem(build_ecm(), ParameterSet([Parameter("R0", 1e-3, 0.1)]), ecm_data)
