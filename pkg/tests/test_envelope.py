import numpy as np
import pytest

from fracpucci import Domain, GridFunction, compute_envelope, envelope_residuals
from fracpucci.envelope import ENVELOPE_RADIUS
from conftest import gaussian
from oracles import bump


@pytest.fixture(scope="module")
def dom():
    return Domain(2, 1 / 16, 6.0)


def two_wells(d, depth=1.0):
    return (-depth * bump(d.points)
            + 0.3 * bump((d.points - np.array([0.4, 0.0]).reshape(2, 1, 1)) * 4)
            - 0.6 * gaussian(d.points, (-0.5, 0.5), 0.02))


@pytest.fixture(scope="module")
def wells(dom):
    u = GridFunction(dom, two_wells(dom))
    return u, compute_envelope(u, 1.5)


def test_nonnegative_u_gives_zero(dom):
    u = GridFunction.from_callable(dom, lambda p: gaussian(p))
    env = compute_envelope(u, 1.5)
    assert env.iterations == 1 and env.converged
    assert np.all(env.gamma.values == 0)
    summ = envelope_residuals(env)
    want = dom.measure(dom.ball(ENVELOPE_RADIUS) & (u.values == 0))
    assert summ["contact_measure"] == pytest.approx(want)


def test_indicator_of_b3_is_its_own_envelope(dom):
    u = GridFunction(dom, np.where(dom.ball(3.0), -1.0, 0.0))
    env = compute_envelope(u, 1.5)
    assert env.converged
    np.testing.assert_array_equal(env.gamma.values, u.values)


def test_howard_matches_relaxation_oracle():
    d = Domain(2, 1 / 8, 6.0)
    u = GridFunction(d, two_wells(d))
    a = compute_envelope(u, 1.5, tol=1e-8)
    b = compute_envelope(u, 1.5, tol=1e-9, method="jacobi", max_iter=300000)
    assert a.converged and b.converged
    assert np.abs(a.gamma.values - b.gamma.values).max() < 1e-6
    np.testing.assert_array_equal(a.contact_set, b.contact_set)


def test_single_well(dom):
    v = np.zeros(dom.shape)
    k = dom.index_of([0.25, -0.25])
    v[k] = -1.0
    env = compute_envelope(GridFunction(dom, v), 1.7)
    assert env.converged
    g = env.gamma.values
    assert g[k] == pytest.approx(-1.0, abs=10 * env.tol)
    near = dom.ball(0.5, dom.point(k))
    assert np.all(g[near] < 0)


def test_certificate(wells):
    u, env = wells
    d = u.domain
    g = env.gamma.values
    assert env.converged
    assert env.max_complementarity < env.tol
    assert np.all(g <= 0)
    assert np.all(g <= -np.maximum(-u.values, 0) + env.tol)
    assert np.all(g[~d.ball(ENVELOPE_RADIUS)] == 0) and env.gamma.exterior.value == 0
    assert g.min() == pytest.approx(u.values[d.ball(1.0)].min(), abs=10 * env.tol)
    E = env.scale * env.residual_Esigma
    assert np.all(E[env.contact_set] >= -env.tol)
    off = d.ball(ENVELOPE_RADIUS) & ~env.contact_set
    assert np.all(np.abs(E[off]) <= env.tol)


def test_monotone_in_u(dom, wells):
    u, env = wells
    w = GridFunction(dom, u.values + 0.2 * gaussian(dom.points, (0.1, 0.1), 0.05))
    env_w = compute_envelope(w, 1.5, tol=env.tol)
    assert np.all(env.gamma.values <= env_w.gamma.values + 2 * env.tol)


def test_unconverged_is_reported(dom):
    u = GridFunction(dom, two_wells(dom))
    env = compute_envelope(u, 1.5, max_iter=1)
    assert not env.converged and "unconverged" in env.flags
    summ = envelope_residuals(env)
    assert summ["max_complementarity"] > env.tol and summ["converged"] is False


def test_residual_summary(wells):
    _, env = wells
    s = envelope_residuals(env)
    assert s["max_complementarity"] < s["tol"]
    assert s["contact_measure"] > 0 and s["min_obstacle_gap"] >= -s["tol"]


def test_coarse_start_matches_plain_start():
    d = Domain(2, 1 / 32, 6.0)
    u = GridFunction(d, two_wells(d))
    a = compute_envelope(u, 1.6, coarse_below=1 / 24)
    b = compute_envelope(u, 1.6, coarse_below=None)
    assert a.converged and b.converged
    assert np.abs(a.gamma.values - b.gamma.values).max() < 1e-6


def test_unknown_method(dom):
    with pytest.raises(ValueError):
        compute_envelope(GridFunction(dom, two_wells(dom)), 1.5, method="sor")
