import numpy as np
import pytest

from cellident.models import EcmConfig, Protocol, build_ecm, build_spm
from cellident.parameters import Parameter, ParameterSet, Transformation
from cellident.problems import SynthSpec, synthesize

D_TRUE, RC_TRUE = 3.3e-14, 0.010
ONE_C = 5.0904217623429417  # theoretical capacity of the default cell, A at 1C
DATA_SEED = 4


def spm_protocol(dt=1.0):
    """1C discharge for an hour followed by 30 min rest."""
    return Protocol.constant([(ONE_C, 3600.0), (0.0, 1800.0)], dt=dt)


def spm_parameters():
    return ParameterSet([
        Parameter("D_n", 2.5e-14, 1e-13, 6e-14, transform=Transformation.log()),
        Parameter("R_c", 1e-3, 5e-2, 0.02, transform=Transformation.log()),
    ])


@pytest.fixture(scope="session")
def spm():
    return build_spm()


@pytest.fixture(scope="session")
def spm_data(spm):
    return synthesize(spm, SynthSpec({"D_n": D_TRUE, "R_c": RC_TRUE}, spm_protocol(), 0.002, DATA_SEED))


@pytest.fixture(scope="session")
def spm_clean(spm):
    return synthesize(spm, SynthSpec({"D_n": D_TRUE, "R_c": RC_TRUE}, spm_protocol(), 0.0, DATA_SEED))


@pytest.fixture(scope="session")
def ecm():
    return build_ecm(EcmConfig())


@pytest.fixture(scope="session")
def ecm_data(ecm):
    proto = Protocol.constant([(5.0, 1200.0), (0.0, 600.0), (-2.5, 600.0)], dt=2.0)
    return synthesize(ecm, SynthSpec({}, proto, 0.001, 7))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record(criterion: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE[criterion] = (bool(ok), detail)
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
