import numpy as np
import pytest

from kvmms import config
from kvmms.densities import MaterialParams
from kvmms.field import AdmissibleSet, DeformationField, LoadField, grid_for


def random_F(rng, d=2, min_det=0.2, spread=0.5):
    while True:
        F = np.eye(d) + spread * rng.standard_normal((d, d))
        if np.linalg.det(F) >= min_det:
            return F


def fd_matrix_derivative(fn, X, eps=1e-5):
    """Central finite-difference derivative of a scalar function of an array."""
    out = np.zeros_like(X)
    for idx in np.ndindex(X.shape):
        E = np.zeros_like(X)
        E[idx] = eps
        out[idx] = (fn(X + E) - fn(X - E)) / (2 * eps)
    return out


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def params():
    return MaterialParams(d=2, p=4, p_tilde=2, q=4, alpha_W=1.0, beta_W=0.5, kappa_P=0.01,
                          A=np.array([[1.3, 0.2], [0.0, 0.9]]))


@pytest.fixture
def grid():
    return grid_for(2, 9)


def perturbed(grid, rng, amp=0.01):
    """Identity plus a smooth interior-supported random perturbation."""
    from kvmms.decay import random_bubble_field
    return DeformationField(grid, grid.coords + amp * random_bubble_field(grid, rng, 2))


@pytest.fixture
def adm(params, grid):
    return AdmissibleSet(params, DeformationField.identity(grid), 1e6)


@pytest.fixture
def load(grid):
    x = grid.coords
    return LoadField(grid, 0.05 * np.stack([np.sin(np.pi * x[:, 0]), x[:, 0] * x[:, 1]], axis=1))


@pytest.fixture(scope="session")
def ref_cfg():
    return config.load_preset("ref_small_strain")


@pytest.fixture(scope="session")
def ref_scenario(ref_cfg):
    return ref_cfg.scenario()


# acceptance reporting: one PASS/FAIL line per criterion in the terminal summary

ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.stash[_CALL_KEY] = rep


_CALL_KEY = pytest.StashKey[object]()


@pytest.fixture
def criterion(request):
    """Yields a dict for detail strings; records the verdict of the test's criterion marker."""
    mark = request.node.get_closest_marker("criterion")
    detail = {}
    yield detail
    rep = request.node.stash.get(_CALL_KEY, None)
    ok = rep is not None and rep.passed
    line = "criterion %2d %s  %s" % (mark.args[0], "PASS" if ok else "FAIL", mark.args[1])
    if detail:
        line += "  [" + ", ".join("%s=%s" % kv for kv in detail.items()) + "]"
    request.config.stash.setdefault(ACCEPTANCE_KEY, []).append((mark.args[0], line))
    print("\n" + line)


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
