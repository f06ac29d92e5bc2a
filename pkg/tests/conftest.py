import numpy as np
import pytest

from fosda.fem import FemOperators
from fosda.mesh import TriangleMesh, icosphere
from fosda.spectral import laplace_beltrami_eigs


@pytest.fixture(scope="session")
def right_triangle():
    return TriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])


@pytest.fixture(scope="session")
def sphere1():
    return icosphere(1, 1.0)


@pytest.fixture(scope="session")
def sphere2():
    return icosphere(2, 1.0)


@pytest.fixture(scope="session")
def sphere3():
    return icosphere(3, 1.0)


@pytest.fixture(scope="session")
def ops1(sphere1):
    return FemOperators.from_mesh(sphere1)


@pytest.fixture(scope="session")
def ops2(sphere2):
    return FemOperators.from_mesh(sphere2)


@pytest.fixture(scope="session")
def ops3(sphere3):
    return FemOperators.from_mesh(sphere3)


@pytest.fixture(scope="session")
def basis3(ops3):
    return laplace_beltrami_eigs(ops3, 41)


@pytest.fixture(scope="session")
def basis2(ops2):
    return laplace_beltrami_eigs(ops2, 41)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_rotation(rng):
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] *= -1
    return q


def pytest_configure(config):
    config._acceptance = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "_acceptance", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(results):
        ok, detail = results[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  criterion {key}: {detail}")
