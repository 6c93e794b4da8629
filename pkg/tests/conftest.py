import numpy as np
import pytest

from mesohom import mechanics as ME
from mesohom.mesh import Domain2, build_transport_network, generate_mesh

PATCH = Domain2(0.2, 0.2)


@pytest.fixture(scope="session")
def patch_mesh():
    return generate_mesh(PATCH, 0.002, 0.005, 0.5, 0.5, seed=5)


@pytest.fixture(scope="session")
def dual_net(patch_mesh):
    return build_transport_network(patch_mesh, "dual")


@pytest.fixture(scope="session")
def particle_net(patch_mesh):
    return build_transport_network(patch_mesh, "particle")


@pytest.fixture(scope="session")
def small_mesh():
    """A few hundred particles: quick for mechanics unit tests."""
    return generate_mesh(Domain2(0.1, 0.1), 0.004, 0.01, 0.5, 0.5, seed=11)


@pytest.fixture(scope="session")
def small_beam():
    """Coarse cantilever (0.3 x 1.2 m) for fast statics and dynamics checks."""
    dom = Domain2(1.2, 0.3)
    mesh = generate_mesh(dom, 0.01, 0.025, 0.5, 0.5, seed=4)
    return dom, mesh


@pytest.fixture(scope="session")
def small_beam_solution(small_beam):
    dom, mesh = small_beam
    mat = ME.MaterialMech(40e9, 0.3, 0.0, 2400.0)
    setup = ME.cantilever_setup(mesh, 1e5)
    sol = ME.solve_static(mesh, mat, setup.constraints, setup.loads, setup.n_extra)
    return dom, mesh, mat, setup, sol


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance reporting ---------------------------------------------------
# Tests marked ``acceptance(number, title)`` get one PASS/FAIL line each in
# the terminal summary; ``record_property("detail", ...)`` adds the numbers.

_ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, title): numbered acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    number, title = mark.args
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    status = "PASS" if rep.passed else "FAIL"
    _ACCEPTANCE[number] = (status, title, detail)
    print(f"\ncriterion {number:2d} {status}: {title}" + (f" [{detail}]" if detail else ""))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        status, title, detail = _ACCEPTANCE[number]
        line = f"criterion {number:2d} {status}: {title}"
        terminalreporter.write_line(line + (f" [{detail}]" if detail else ""))
