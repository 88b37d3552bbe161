import numpy as np
import pytest

from wgqed.model import DriveConfig, SystemParams, ghz

# decay rates of the two emitters used throughout (GHz)
GAMMA1_GHZ = 0.73
GAMMA2_GHZ = 0.79

ACCEPTANCE_LINES: dict[int, str] = {}


def record_criterion(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture
def paper_pair():
    return SystemParams.pair(ghz(GAMMA1_GHZ), ghz(GAMMA2_GHZ))


@pytest.fixture
def ideal_pair():
    g = ghz(0.76)
    return SystemParams.pair(g, g, beta1=1.0, beta2=1.0)


@pytest.fixture
def ground():
    rho = np.zeros((4, 4), complex)
    rho[0, 0] = 1.0
    return rho


def weak(sys: SystemParams, fraction: float = 0.01) -> DriveConfig:
    return DriveConfig.cw(fraction * sys.mean_decay)
