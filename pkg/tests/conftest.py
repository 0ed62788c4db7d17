import numpy as np
import pytest

from relaxeq import AnnealSchedule, Candidate, anneal, make_grid, make_r1, solve_regularized_equilibrium

CRITERIA = {
    1: "Gibbs normalization and shift invariance",
    2: "closed-form Gibbs density",
    3: "softmax to hard max",
    4: "entropy sublinear growth",
    5: "policy evaluation analytic oracle",
    6: "PDE/MC cross-validation",
    7: "fixed-point convergence and residual order",
    8: "decay estimate shape",
    9: "annealing convergence",
    10: "strong EHJB residual of the annealed limit",
    11: "equilibrium verification",
    12: "reproducibility",
}
LAMBDAS = (1.0, 0.5, 0.25, 0.1)

_outcomes: dict[int, list[bool]] = {}


def pytest_runtest_logreport(report):
    marker = dict(report.user_properties).get("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _outcomes.setdefault(marker, []).append(report.outcome == "passed")


@pytest.fixture(autouse=True)
def _tag_criterion(request):
    mark = request.node.get_closest_marker("criterion")
    if mark is not None:
        request.node.user_properties.append(("criterion", mark.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n, title in CRITERIA.items():
        res = _outcomes.get(n)
        status = "NOT RUN" if res is None else ("PASS" if all(res) else "FAIL")
        terminalreporter.write_line(f"criterion {n:2d} [{status}] {title}")


@pytest.fixture(scope="session")
def r1():
    return make_r1()


@pytest.fixture(scope="session")
def r1_grid(r1):
    return make_grid(r1, n_x=201, dt0=0.01)


@pytest.fixture(scope="session")
def r1_fixed_points(r1, r1_grid):
    return {lam: solve_regularized_equilibrium(r1, r1_grid, lam) for lam in LAMBDAS}


@pytest.fixture(scope="session")
def r1_trace(r1, r1_grid):
    """Default schedule 2^0 .. 2^-7."""
    return anneal(r1, r1_grid, AnnealSchedule.geometric(0, 7))


@pytest.fixture(scope="session")
def r1_trace_k5(r1, r1_grid):
    return anneal(r1, r1_grid, AnnealSchedule.geometric(0, 5))


@pytest.fixture(scope="session")
def r1_candidate(r1, r1_grid, r1_trace):
    """Annealed limit policy evaluated without entropy."""
    return Candidate.from_trace(r1, r1_grid, r1_trace)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def scheme_constant(r1):
    """C in res <= C (dt0 + dx^2), fixed by solving R1 at lam = 0.5 on two nested grids."""
    grid = make_grid(r1, n_x=101, dt0=0.02)
    consts = []
    for g in (grid, grid.refined()):
        res = solve_regularized_equilibrium(r1, g, 0.5)
        h = g.dt0 + g.dx[0] ** 2
        consts += [res.eehjb_residual_t0 / h, res.eehjb_residual_field / h]
    return max(consts)
