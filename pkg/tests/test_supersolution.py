import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fracpucci import ConstantLedger, Domain, GridFunction, PucciEllipticity, ln_norm, solve_dirichlet
from fracpucci.errors import SchemeDiverged, ZeroForcing
from fracpucci.supersolution import catalog, ghat, normalize, pivotal_margin, radii

ELL = PucciEllipticity(2, 1.5, 1.0, 1.5)


@pytest.fixture(scope="module")
def dom():
    return Domain(2, 1 / 16, 6.0)


@pytest.fixture(scope="module")
def unit_solution(dom):
    return solve_dirichlet(GridFunction.constant(dom, 1.0), ELL)


@pytest.fixture
def small_ledger():
    # hand-set logs keep N0 in floating range
    return ConstantLedger(2, 1.5, 1.0, log_eps0="-1.0", log_mu=0.5)


def test_zero_forcing_gives_zero(dom):
    s = solve_dirichlet(GridFunction.constant(dom, 0.0), ELL)
    assert np.all(s.u.values == 0) and s.certified


def test_unit_forcing_sign(unit_solution, dom):
    s = unit_solution
    assert s.converged and s.certified and s.exterior_ok
    u = s.u.values
    assert np.all(u[dom.ball(1.0)] <= 0)
    assert u[dom.index_of([0, 0])] == u.min() < 0


def test_negative_forcing_rejected(dom):
    with pytest.raises(ValueError):
        solve_dirichlet(GridFunction.constant(dom, -1.0), ELL)


def test_rescaled_instance():
    # u_r(x) = u(r x) solves the problem for r^sigma f(r x) on B_{1/r}
    h, r = 1 / 16, 0.5
    d1, d2 = Domain(2, h, 6.0), Domain(2, h / r, 12.0)
    g = lambda P: np.exp(-((P[0] - 0.2) ** 2 + P[1] ** 2) / 0.3)
    s1 = solve_dirichlet(GridFunction(d1, g(d1.points)), ELL)
    s2 = solve_dirichlet(GridFunction(d2, r**1.5 * g(r * d2.points)), ELL, radius=1 / r)
    m = d2.ball(1 / r)
    u1 = s1.u.interpolate((r * d2.points[:, m]).T)
    assert np.max(np.abs(u1 - s2.u.values[m])) <= 0.02 * np.max(np.abs(u1))


def test_comparison_on_pairs():
    d = Domain(2, 1 / 8, 6.0)
    rng = np.random.default_rng(3)
    for _ in range(20):
        c = rng.uniform(-0.5, 0.5, 2)
        f1 = rng.uniform(0, 1) * np.exp(-np.sum((d.points - c[:, None, None]) ** 2, axis=0) / 0.2)
        f2 = f1 + rng.uniform(0, 0.5) * (rng.random(d.shape) > 0.5)
        u1 = solve_dirichlet(GridFunction(d, f1), ELL).u.values
        u2 = solve_dirichlet(GridFunction(d, f2), ELL).u.values
        assert np.all(u2 <= u1 + 1e-9)


def test_explicit_matches_howard():
    d = Domain(2, 1 / 8, 6.0)
    f = GridFunction.constant(d, 1.0)
    a = solve_dirichlet(f, ELL)
    b = solve_dirichlet(f, ELL, method="explicit", tol=1e-9)
    assert b.converged
    assert np.max(np.abs(a.u.values - b.u.values)) < 1e-6


def test_explicit_diverges_with_large_step():
    d = Domain(2, 1 / 8, 6.0)
    with pytest.raises(SchemeDiverged, match="cfl"):
        solve_dirichlet(GridFunction.constant(d, 1.0), ELL, method="explicit", cfl=4.0)
    with pytest.raises(ValueError):
        solve_dirichlet(GridFunction.constant(d, 1.0), ELL, method="newton")


def test_disk_cache(tmp_path):
    d = Domain(2, 1 / 8, 6.0)
    f = GridFunction.constant(d, 1.0)
    a = solve_dirichlet(f, ELL, cache_dir=tmp_path)
    assert len(list(tmp_path.glob("*.npz"))) == 1
    b = solve_dirichlet(f, ELL, cache_dir=tmp_path)
    np.testing.assert_array_equal(a.u.values, b.u.values)
    assert b.certified


def test_normalize_zero_forcing(unit_solution, dom, small_ledger):
    with pytest.raises(ZeroForcing):
        normalize(unit_solution.u, GridFunction.constant(dom, 0.0), [0, 0], 0.5, small_ledger, 1, 1.5)
    with pytest.raises(ValueError):
        normalize(unit_solution.u, unit_solution.f, [0, 0], 1.0, small_ledger, 1, 1.5)


@pytest.mark.parametrize("r", [0.25, 0.5, 0.75])
@pytest.mark.parametrize("i", [1, 3])
def test_normalize_bounds(unit_solution, small_ledger, r, i):
    s = unit_solution
    x0 = [0.125, -0.25]
    nz = normalize(s.u, s.f, x0, r, small_ledger, i, 1.5)
    d = s.u.domain
    assert nz.u_r.values[d.index_of([0, 0])] == pytest.approx(0, abs=1e-14)
    L = math.exp(small_ledger.log_L(i - 1, 1.5))
    M3 = math.exp(small_ledger.log_M3)
    assert np.max(np.abs(nz.h_r.values)) <= L * (1 + 1e-12)
    assert ln_norm(nz.h_r) <= M3 * (1 + 1e-2)
    # u_r >= 0 wherever u(x0 + r x) >= u(x0)
    u0 = s.u.interpolate(np.array([d.point(d.index_of(x0))]))[0]
    flat = np.moveaxis(d.point(d.index_of(x0)).reshape(2, 1, 1) + r * d.points, 0, -1).reshape(-1, 2)
    above = s.u.interpolate(flat).reshape(d.shape) >= u0
    assert np.all(nz.u_r.values[above] >= 0)


def test_ghat_cutoff(unit_solution, dom):
    g = ghat(unit_solution.f, unit_solution.u)
    assert np.all(g.values[~dom.ball(1.0)] == 0)
    wider = ghat(unit_solution.f, unit_solution.u, margin=0.25)
    assert np.all(wider.values >= g.values)


def test_radii_example():
    out = radii(-4.0, 1.0, 1.0, sigma=1.5, log_M3=0.0, log_L=0.0, log_M1=0.0, log_k0=0.0)
    assert out.s1 == pytest.approx(1.0) and out.s2 == pytest.approx(1.0) and out.r0 == pytest.approx(1.0)


@given(st.floats(0.1, 100), st.floats(1.05, 1.99), st.floats(-5, 5), st.floats(-5, 5))
def test_radii_scaling(u, sigma, a, b):
    kw = dict(sigma=sigma, log_M3=a, log_L=b, log_M1=1.0, log_k0=0.5)
    r1 = radii(-u, 2.0, 3.0, **kw)
    r2 = radii(-2 * u, 2.0, 3.0, **kw)
    assert r2.log_s1 - r1.log_s1 == pytest.approx(math.log(2) / (sigma - 1))
    assert r1.r0 <= 1 and r1.branch in ("s1", "s2", "one")


def test_radii_rejects_nonnegative():
    with pytest.raises(ValueError):
        radii(0.0, 1.0, 1.0, log_M3=0, log_L=0, log_M1=0, log_k0=0)


@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.floats(1.05, 1.99),
       st.floats(-50, 50), st.floats(-50, 50), st.floats(0, 10), st.floats(-3, 3), st.floats(1e-6, 1))
def test_pivotal_inequality(u, gn, ginf, sigma, lM3, lL, lM1, lk0, frac):
    kw = dict(log_M3=lM3, log_L=lL, log_M1=lM1, log_k0=lk0)
    rr = radii(-u, gn, ginf, sigma=sigma, **kw)
    r = rr.r0 * frac
    if r <= 0:
        return
    assert pivotal_margin(-u, gn, ginf, r, lM3, lL, lM1, lk0, sigma) >= -1e-9


@pytest.mark.parametrize("name", ["bump", "quadratic-cap"])
def test_catalog(name, dom):
    s = catalog(name, dom, ELL)
    assert s.certified and s.u.values.min() < 0
    assert np.all(s.f.values >= 0)
    with pytest.raises(KeyError):
        catalog("nope", dom, ELL)
