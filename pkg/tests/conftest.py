"""Shared builders for the test suite."""
import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cutflux.cutfem import ProblemData, solve_primal
from cutflux.cutgeom import InterfacePolyline, classify
from cutflux.harness import manufactured
from cutflux.mesh import build_structured_mesh
from cutflux.multipliers import build_multiplier

settings.register_profile("cutflux", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("cutflux")


def vertical(x):
    return InterfacePolyline.line((x, -0.5), (x, 1.5))


def build_case(case="M1", nx=8, k1=1.0, k2=10.0, alpha=None):
    """(mesh, topology, data, exact case) for a manufactured problem."""
    mc = manufactured(case, k1=k1, k2=k2, alpha=alpha)
    mesh = build_structured_mesh(nx, nx)
    topo = classify(mesh, mc.interface)
    data = ProblemData(k1, k2, mc.f[0], mc.f[1])
    return mesh, topo, data, mc


def solve_case(case="M1", nx=8, k1=1.0, k2=10.0, alpha=None, tol=1e-11):
    mesh, topo, data, mc = build_case(case, nx, k1, k2, alpha)
    u = solve_primal(topo, data, tol=tol)
    theta = build_multiplier(u)
    return topo, data, mc, u, theta


@pytest.fixture(scope="session")
def m1_coarse():
    """M1 on an 8x8 mesh with k = (1, 10): (topo, data, exact, u, theta)."""
    return solve_case("M1", 8, 1.0, 10.0)


@pytest.fixture(scope="session")
def zero_case():
    """f = 0 on an 8x8 mesh with a cut interface."""
    return solve_case("M0", 8, 1.0, 10.0)


def rng(seed=0):
    return np.random.default_rng(seed)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1][1:])):
            terminalreporter.write_line(line)
