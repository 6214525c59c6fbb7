import json
import math

import mpmath
import numpy as np
import pytest

from fracpucci import Domain, GridFunction
from fracpucci.barrier import (DEFAULT_SIGMAS, BarrierProfile, build_eta, certify_barrier, scan)
from fracpucci.errors import BarrierScaleFail
from fracpucci.grid import Exterior


@pytest.fixture(scope="module")
def dom():
    return Domain(2, 1 / 32, 8.0)


@pytest.fixture(scope="module")
def cert(dom):
    return certify_barrier(build_eta(2, 0.125, dom), 1.5, 1.0)


@pytest.mark.parametrize("p", [2, 3, 5.5])
def test_support_and_calibration(dom, p):
    prof = BarrierProfile(2, p, 0.125)
    eta = GridFunction(dom, prof(dom.points))
    R = 2 * math.sqrt(2)
    assert np.all(eta.values[~dom.ball(R)] == 0)
    corner = np.array([[1.5], [1.5]])
    assert prof(corner)[0] == pytest.approx(-2.0, rel=1e-13)
    assert np.all(eta.values[dom.cube(3.0)] <= -2 + 1e-12)


def test_profile_is_c11(dom):
    prof = BarrierProfile(2, 3, 0.125)
    r = np.linspace(0.01, 3.0, 30001)
    G = prof.G(r)
    dG = np.diff(G) / np.diff(r)
    # bounded difference quotients of G' (no jump in the derivative)
    assert np.max(np.abs(np.diff(dG))) < 1e-2 * np.max(np.abs(dG))
    assert np.all(np.diff(G) <= 1e-15)


def test_sup_norm_closed_form():
    prof = BarrierProfile(2, 4, 0.125)
    mp = mpmath
    with mp.workdps(30):
        p, R, rho = 4, 2 * mp.sqrt(2), mp.mpf(1) / 8
        g = lambda r: r ** -p - R ** -p + p * R ** (-p - 1) * (r - R)
        gp = lambda r: -p * r ** (-p - 1) + p * R ** (-p - 1)
        G0 = g(rho) - gp(rho) * rho / 2
        c = 2 / g(mp.mpf(1.5) * mp.sqrt(2))
        want = float(c * G0)
    assert prof.sup == pytest.approx(want, rel=1e-12)


def test_scale_fail():
    with pytest.raises(BarrierScaleFail):
        build_eta(4, 0.125, Domain(2, 1 / 8, 8.0))
    with pytest.raises(ValueError):
        build_eta(-1, 0.125)


def test_zero_barrier_is_rejected(dom):
    c = certify_barrier(GridFunction.constant(dom, 0.0), 1.5, 1.0, sigma_grid=(1.5,))
    assert c.M2 == 0 and c.violations == []
    assert not c.valid and any("Q_3" in r for r in c.reasons)


def test_certified_barrier(cert):
    assert cert.valid and cert.violations == []
    assert list(cert.sigma_grid) == list(DEFAULT_SIGMAS)
    assert math.isfinite(cert.M1) and math.isfinite(cert.M2) and cert.M2 > 0
    assert all(mo <= 0 for _, mo, _ in cert.per_sigma)


def test_xi_support_and_range(cert, dom):
    for s in (1.05, 1.99):
        xi = cert.xi(s)
        assert np.all(xi >= 0) and np.all(xi <= 1 + 1e-12)
        assert np.all(xi[~dom.ball(0.25)] == 0)


def test_doubling(cert, dom):
    eta = cert.eta
    two = GridFunction(dom, 2 * eta.values, Exterior(0.0))
    c2 = certify_barrier(two, 1.5, 1.0, sigma_grid=(1.5, 1.9))
    c1 = certify_barrier(eta, 1.5, 1.0, sigma_grid=(1.5, 1.9))
    assert c2.M1 == 2 * c1.M1
    assert c2.M2 == pytest.approx(2 * c1.M2, rel=1e-12)


def test_M2_nonincreasing_in_smoothing(dom):
    M2 = [certify_barrier(build_eta(2, s, dom), 1.5, 1.0).M2 for s in (0.0625, 0.125, 0.1875, 0.25)]
    assert all(b <= a for a, b in zip(M2, M2[1:]))


def test_scan_picks_first_certified(dom):
    res = scan(dom, 1.5, 1.0, exponents=range(2, 5))
    assert res.certificate is not None and res.certificate.profile["p"] == 2
    assert res.tried[0] == (2, "certified")


def test_scan_equal_ellipticity_fails():
    # the isotropic class (lam = Lam) admits no radial barrier in the family
    res = scan(Domain(2, 1 / 32, 8.0), 1.0, 1.0, exponents=range(2, 5))
    assert res.certificate is None
    assert any(s.startswith("scale-fail") for _, s in res.tried)


def test_certificate_json_strict(cert):
    d = json.loads(cert.to_json(), parse_constant=lambda c: pytest.fail(c))
    assert d["valid"] and d["violations"] == []
    assert d["log_M2"] == pytest.approx(math.log(cert.M2))
    assert d["profile"]["p"] == 2
