import numpy as np
import pytest

from synthconf.dgp import DgpSpec
from synthconf.panel import Panel, TreatmentPattern

_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    marker = getattr(report, "acceptance", None)
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        number, name = marker
        prev = _ACCEPTANCE.get(number, (name, True))
        _ACCEPTANCE[number] = (name, prev[1] and report.outcome == "passed")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("acceptance")
    if marker is not None:
        outcome.get_result().acceptance = (marker.args[0], marker.args[1])


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        name, ok = _ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {name}")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def fe_outcomes(pattern, tau=0.0, seed=0):
    """Two-way fixed effects ``a_i + b_t + tau W`` with random effects."""
    g = np.random.default_rng(seed)
    a = g.normal(size=pattern.n_units)
    b = g.normal(size=pattern.n_periods)
    return a[:, None] + b[None, :] + tau * pattern.treatment_matrix(), a, b


@pytest.fixture
def fe_panel():
    def make(pattern=TreatmentPattern(6, 5, 2, 3), tau=0.0, seed=0):
        Y, a, b = fe_outcomes(pattern, tau, seed)
        return Panel(Y, pattern), a, b
    return make


def make_spec(pattern, r=1, lam=0.0, gam=0.0, sigma_lambda=1.0, sigma_gamma=1.0, sigma_eps=1.0,
              tau=0.0, iota_unit=None, iota_time=None, seed=0):
    N, T = pattern.shape
    lam = np.broadcast_to(np.asarray(lam, float), (T, r)) if np.ndim(lam) < 2 else lam
    gam = np.broadcast_to(np.asarray(gam, float), (N, r)) if np.ndim(gam) < 2 else gam
    return DgpSpec(
        r=r, lambda_=lam, gamma=gam,
        sigma_lambda=sigma_lambda * np.eye(r), sigma_gamma=sigma_gamma * np.eye(r),
        iota_unit=np.zeros(N) if iota_unit is None else iota_unit,
        iota_time=np.zeros(T) if iota_time is None else iota_time,
        sigma_eps=sigma_eps, tau=tau, pattern=pattern, seed=seed,
    )


@pytest.fixture
def spec_factory():
    return make_spec
