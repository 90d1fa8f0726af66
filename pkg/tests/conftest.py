import numpy as np
import pytest

from canonavatar.mesh import TriMesh, box_mesh, icosphere


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def unit_sphere():
    return icosphere(0.5, 4)


@pytest.fixture(scope="session")
def unit_cube():
    return box_mesh((-0.5, -0.5, -0.5), (0.5, 0.5, 0.5))


@pytest.fixture(scope="session")
def subject():
    from canonavatar.synthetic import make_subject

    return make_subject(64)


def single_triangle():
    return TriMesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0]]), np.array([[0, 1, 2]]))


_ACCEPTANCE = []


@pytest.fixture
def acceptance():
    """Record one PASS/FAIL line per acceptance criterion; printed in the terminal summary."""

    def record(number, title, ok, detail=""):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {title}" + (f" ({detail})" if detail else "")
        _ACCEPTANCE.append((number, line))
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
