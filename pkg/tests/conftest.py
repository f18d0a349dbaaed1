import pytest

from chnsprec.driver import init_two_step, initial_profile
from chnsprec.mesh import build_dofmap, build_rect_mesh
from chnsprec.model import History, State
from chnsprec.physics import BENCHMARK1


@pytest.fixture(scope="session")
def tiny():
    """4x8 mesh of the benchmark rectangle with its dof map."""
    mesh = build_rect_mesh(1.0, 2.0, 4, 8)
    return mesh, build_dofmap(mesh)


@pytest.fixture(scope="session")
def small():
    mesh = build_rect_mesh(1.0, 2.0, 8, 16)
    return mesh, build_dofmap(mesh)


@pytest.fixture(scope="session")
def small_params():
    # wider interface so that the 8x16 mesh resolves the profile
    return BENCHMARK1.with_(eps=0.1, b=1e-4)


@pytest.fixture(scope="session")
def small_history(small, small_params):
    mesh, dof = small
    return init_two_step(small_params, mesh, dof)


def random_state(dof, rng, phi_scale=0.9):
    v = dof.project(rng.standard_normal(dof.n2))
    return State(v=v, p=rng.standard_normal(dof.n1),
                 phi=rng.uniform(-phi_scale, phi_scale, dof.n1),
                 mu=rng.standard_normal(dof.n1))


def random_history(mesh, dof, rng, eps=0.1):
    phi = initial_profile(mesh, eps)
    return History(phi_km2=phi + 0.01 * rng.standard_normal(dof.n1), phi_km1=phi,
                   mu_km1=rng.standard_normal(dof.n1),
                   v_km1=dof.project(0.1 * rng.standard_normal(dof.n2)))


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS):
            terminalreporter.write_line(line)
