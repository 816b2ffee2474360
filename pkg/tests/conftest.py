import numpy as np
import pytest

from vectorphoton.modes import GridSpec, ModeLabel, make_custom, make_mode
from vectorphoton.state import JonesVector, build_state

SQRT_HALF = np.sqrt(0.5)


def lg_state(grid, l1=1, l2=-1, pol1="R", pol2="L", a=SQRT_HALF, phi=0.0, noise=0.0):
    u1 = make_mode(ModeLabel.lg(l1), grid)
    u2 = make_mode(ModeLabel.lg(l2), grid)
    b = np.sqrt(1 - a * a)
    return build_state(a, b, phi, (u1, JonesVector.named(pol1)), (u2, JonesVector.named(pol2)), noise=noise)


def hg_state(grid, noise=0.0):
    u1 = make_mode(ModeLabel.hg(1, 0), grid)
    u2 = make_mode(ModeLabel.hg(0, 1), grid)
    return build_state(SQRT_HALF, SQRT_HALF, 0.0, (u1, JonesVector.named("H")), (u2, JonesVector.named("V")),
                       noise=noise)


def uniform_field(grid, phase=0.0):
    return make_custom(np.ones(grid.shape), np.full(grid.shape, phase), grid)


@pytest.fixture(scope="session")
def grid256():
    return GridSpec(256, 256)


@pytest.fixture(scope="session")
def grid64():
    return GridSpec(64, 64)


@pytest.fixture(scope="session")
def radial_state(grid256):
    return lg_state(grid256)


@pytest.fixture(scope="session")
def poincare_state(grid256):
    return lg_state(grid256, 0, 1)


# acceptance criteria report one line each in the terminal summary
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {number:>2}. {title}: {detail}")
