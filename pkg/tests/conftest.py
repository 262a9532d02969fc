import math

import numpy as np
import pytest
from numpy.polynomial.hermite_e import hermegauss

from sqrtsae import AreaObservation, ModelParameters

STUDY_BETA = (1.0, 0.5, 1.5, 1.0, 0.3, 2.0)

# Inputs back-solved from the first area of the published known-parameter
# table: (X beta)^2 from the Bayes-predictor MSPE row, b from the 1-gamma row.
TABLE1_XBETA_SQ = 390.01
TABLE1_B = 6.59374


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def random_instances(rng, n):
    """(a, q, xbeta) triples spanning weak to strong shrinkage."""
    a = rng.uniform(0.01, 2.0, n)
    q = rng.uniform(0.001, 2.0, n)
    xbeta = rng.uniform(-30.0, 30.0, n)
    return a, q, xbeta


_GH_X, _GH_W = hermegauss(5)
_GH_W = _GH_W / _GH_W.sum()


def gauss_hermite_error_moments(w, corr, xbeta, a, q):
    """E[err] and E[err^2] for err = {w Z + (1-w) xhat_beta}^2 + corr - theta^2."""
    v, e, d = np.meshgrid(_GH_X, _GH_X, _GH_X, indexing="ij")
    weight = _GH_W[:, None, None] * _GH_W[None, :, None] * _GH_W[None, None, :]
    theta = xbeta + math.sqrt(a) * v
    z = theta + 0.5 * e
    xhat_beta = xbeta + math.sqrt(q) * d
    err = (w * z + (1 - w) * xhat_beta) ** 2 + corr - theta ** 2
    return float((weight * err).sum()), float((weight * err * err).sum())


def gauss_hermite_moments(w, xbeta, a, q):
    """(bias, MSPE) of the corrected predictor by exact Gauss-Hermite quadrature.

    The integrand is a degree-4 polynomial in three independent normals, so a
    5-point rule per axis is exact.
    """
    v, e, d = np.meshgrid(_GH_X, _GH_X, _GH_X, indexing="ij")
    weight = _GH_W[:, None, None] * _GH_W[None, :, None] * _GH_W[None, None, :]
    theta = xbeta + math.sqrt(a) * v
    z = theta + 0.5 * e
    xhat_beta = xbeta + math.sqrt(q) * d
    raw = (w * z + (1 - w) * xhat_beta) ** 2 - theta ** 2
    bias = float((weight * raw).sum())
    return bias, float((weight * (raw - bias) ** 2).sum())


def make_area(z=1.0, t=10, x_hat=(1.0, 2.0), sigma=None, **kw):
    p = len(x_hat)
    if sigma is None:
        sigma = np.zeros((p, p))
    return AreaObservation(area_id=kw.pop("area_id", "a"), z=z, t=t, x_hat=x_hat, sigma=sigma, **kw)


def params(a=0.2, beta=(1.0, 0.5)):
    return ModelParameters(a, beta)


# acceptance bookkeeping: every check is recorded, and the terminal summary
# prints one pass/fail line per criterion
ACCEPTANCE_CRITERIA = range(1, 12)
_acceptance: dict = {}


class AcceptanceRecorder:
    def __init__(self, number):
        self.number = number
        self.checks = []

    def check(self, name, ok, detail=""):
        entry = (name, bool(ok), detail)
        self.checks.append(entry)
        _acceptance.setdefault(self.number, []).append(entry)
        return bool(ok)

    def verify(self):
        failed = [f"{n}: {d}" for n, ok, d in self.checks if not ok]
        assert not failed, f"criterion {self.number}: " + "; ".join(failed)


@pytest.fixture
def criterion():
    return AcceptanceRecorder


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker and rep.when == "call" and rep.failed and call.excinfo is not None:
        if not call.excinfo.errisinstance(AssertionError):
            entry = (item.name, False, f"error: {call.excinfo.typename}")
            _acceptance.setdefault(marker.args[0], []).append(entry)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for k in ACCEPTANCE_CRITERIA:
        checks = _acceptance.get(k)
        if not checks:
            tr.write_line(f"criterion {k:2d}: NOT RUN")
            continue
        failed = [c for c in checks if not c[1]]
        status = "FAIL" if failed else "PASS"
        tr.write_line(f"criterion {k:2d}: {status}  " + "; ".join(f"{n} [{d}]" for n, _, d in (failed or checks)))
