import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fracpucci import (Domain, Exterior, GridFunction, ln_norm, region_inf, sublevel_measure,
                       superlevel_measure)
from fracpucci.errors import EmptyRegion
from fracpucci.grid import argmin_in, level_measures, linf_norm


@pytest.fixture(scope="module")
def dom():
    return Domain(2, 1 / 32, 6.0)


# domain -------------------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(n=1), dict(n=4), dict(h=0.0), dict(h=0.3),
                                dict(half_extent=4.0)])
def test_domain_rejects_bad_geometry(kw):
    args = dict(n=2, h=1 / 32, half_extent=8.0)
    args.update(kw)
    with pytest.raises(ValueError):
        Domain(**args)


def test_domain_lattice_contains_origin(dom):
    c = dom.center_index
    assert dom.coords[c] == 0.0
    assert dom.N == 2 * 6 * 32 + 1
    assert dom.index_of([0.0, 0.0]) == (c, c)
    np.testing.assert_array_equal(dom.point((c, c)), [0.0, 0.0])


def test_three_dimensional_domain():
    d = Domain(3, 0.25, 6.5)
    assert d.points.shape == (3, 53, 53, 53)
    assert d.measure(d.cube(1.0)) == pytest.approx(1.0)


def test_cube_is_half_open_and_exact(dom):
    # side-1 cube holds exactly 32^2 lattice points
    assert np.count_nonzero(dom.cube(1.0)) == 32 * 32
    assert dom.measure(dom.cube(1.0)) == 1.0
    assert dom.measure(dom.cube(3.0)) == 9.0


def test_ball_is_open(dom):
    b = dom.ball(0.5)
    i = dom.index_of([0.5, 0.0])
    assert not b[i]
    assert b[dom.index_of([15 / 32, 0.0])]


# norms ---------------------------------------------------------------------

def test_ln_norm_unit_cube(dom):
    one = GridFunction.constant(dom, 1.0)
    assert ln_norm(one, dom.cube(1.0)) == pytest.approx(1.0, abs=dom.h)


def test_ln_norm_zero_and_empty(dom):
    z = GridFunction.constant(dom, 0.0)
    assert ln_norm(z, dom.cube(1.0)) == 0.0
    one = GridFunction.constant(dom, 1.0)
    assert ln_norm(one, np.zeros(dom.shape, dtype=bool)) == 0.0


@pytest.mark.parametrize("H", [1.0, 10.0, 1e3, 1e200])
def test_ln_norm_single_spike(dom, H):
    v = np.zeros(dom.shape)
    v[dom.index_of([0, 0])] = H
    f = GridFunction(dom, v)
    assert ln_norm(f) == pytest.approx(H * dom.h, rel=1e-14)


def test_linf_norm(dom):
    f = GridFunction.from_callable(dom, lambda p: p[0])
    assert linf_norm(f, dom.ball(1.0)) == pytest.approx(1 - dom.h)
    assert linf_norm(f, np.zeros(dom.shape, bool)) == 0.0


# infimum -------------------------------------------------------------------

def test_region_inf_examples(dom):
    r2 = GridFunction.from_callable(dom, lambda p: p[0] ** 2 + p[1] ** 2)
    assert region_inf(r2, dom.ball(1.0)) == 0.0
    assert region_inf(GridFunction.constant(dom, -3.0), dom.cube(1.0)) == -3.0


def test_region_inf_coarse_lattice():
    # lattice points of B_1 at h = 1/2: (-1, 0) is excluded by the open ball
    d = Domain(2, 0.5, 6.0)
    f = GridFunction.from_callable(d, lambda p: p[0])
    pts = d.points[:, d.ball(1.0)]
    assert region_inf(f, d.ball(1.0)) == pts[0].min() == -0.5


def test_region_inf_empty_raises(dom):
    with pytest.raises(EmptyRegion):
        region_inf(GridFunction.constant(dom, 1.0), np.zeros(dom.shape, bool))


def test_argmin(dom):
    f = GridFunction.from_callable(dom, lambda p: (p[0] - 0.25) ** 2 + p[1] ** 2)
    assert argmin_in(f, dom.ball(1.0)) == dom.index_of([0.25, 0.0])


# level measures ------------------------------------------------------------

def test_superlevel_examples(dom):
    q1 = dom.cube(1.0)
    assert superlevel_measure(GridFunction.constant(dom, 0.0), 2.0, q1) == 0.0
    assert superlevel_measure(GridFunction.constant(dom, 5.0), 1.0, q1) == pytest.approx(1.0)


def test_superlevel_sup_norm_exact_measure(dom):
    # |{|x|_inf > 1/4} cap Q_1| = 1 - (1/2)^2
    f = GridFunction.from_callable(dom, lambda p: np.max(np.abs(p), axis=0))
    exact = 1 - 0.5**2
    assert superlevel_measure(f, 0.25, dom.cube(1.0)) == pytest.approx(exact, abs=4 * dom.h)


def test_callable_region(dom):
    f = GridFunction.constant(dom, 1.0)
    assert ln_norm(f, lambda p: np.max(np.abs(p), axis=0) < 0.5) > 0


# properties ----------------------------------------------------------------

small = Domain(2, 0.25, 6.0)
# a seed plus an amplitude keeps hypothesis inputs small
arrays = st.builds(lambda seed, amp: amp * np.random.default_rng(seed).standard_normal(small.shape),
                   st.integers(0, 2**32 - 1), st.floats(0, 5))


@given(arrays, st.floats(-3, 3), st.floats(0.1, 10))
def test_level_measures_partition(vals, t, c):
    f = GridFunction(small, vals)
    region = small.ball(2.0)
    lo, hi = level_measures(f, t, region)
    assert lo + hi == small.measure(region)
    assert ln_norm(f * c, region) == pytest.approx(c * ln_norm(f, region), rel=1e-12)
    assert ln_norm(f * -c, region) == pytest.approx(c * ln_norm(f, region), rel=1e-12)
    assert region_inf(f + c, region) == pytest.approx(region_inf(f, region) + c, abs=1e-12)


@given(arrays, st.floats(0, 1))
def test_ln_norm_monotone(vals, shrink):
    g = GridFunction(small, vals)
    f = g.with_values(g.values * shrink)
    for region in (None, small.cube(1.0), small.ball(3.0)):
        assert ln_norm(f, region) <= ln_norm(g, region) * (1 + 1e-12)


# serialization -------------------------------------------------------------

def test_csv_round_trip_bit_exact(tmp_path):
    d = Domain(2, 0.25, 6.0)
    rng = np.random.default_rng(3)
    f = GridFunction(d, rng.standard_normal(d.shape) * 1e-7, Exterior(0.1))
    g = GridFunction.from_csv(f.to_csv())
    assert g.domain == d
    assert np.array_equal(g.values, f.values)
    assert g.exterior.value == 0.1
    path = tmp_path / "f.csv"
    f.to_csv(path)
    assert path.read_text().splitlines()[0] == "n,h,E,exterior"
    assert np.array_equal(GridFunction.from_csv(path).values, f.values)


def test_csv_round_trip_table_exterior():
    d = Domain(2, 0.5, 6.0)
    rng = np.random.default_rng(0)
    table = rng.standard_normal((d.N + 4, d.N + 4))
    f = GridFunction(d, rng.standard_normal(d.shape), Exterior(0.0, table, 2))
    g = GridFunction.from_csv(f.to_csv())
    assert np.array_equal(g.exterior.table, table)
    assert g.exterior.pad == 2


def test_npz_round_trip(tmp_path):
    d = Domain(2, 0.5, 6.0)
    f = GridFunction(d, np.arange(d.N**2, dtype=float).reshape(d.shape), Exterior(-2.0))
    f.to_npz(tmp_path / "f.npz")
    g = GridFunction.from_npz(tmp_path / "f.npz")
    assert np.array_equal(g.values, f.values) and g.exterior.value == -2.0


def test_values_must_be_finite(dom):
    v = np.zeros(dom.shape)
    v[0, 0] = math.nan
    with pytest.raises(ValueError):
        GridFunction(dom, v)


def test_interpolation_and_exterior(dom):
    f = GridFunction.from_callable(dom, lambda p: 2 * p[0] + p[1], Exterior(7.0))
    assert f([[0.1, 0.2]])[0] == pytest.approx(0.4)
    assert f([[100.0, 0.0]])[0] == 7.0


def test_arithmetic_keeps_exterior(dom):
    f = GridFunction.constant(dom, 2.0, exterior_value=1.0)
    g = (f * 3 + 1) - f
    assert g.exterior.value == 3.0
    assert np.all(g.values == 5.0)
    assert (-f).negative_part().sup_norm() == 2.0
