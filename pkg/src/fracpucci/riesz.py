"""Riesz potential ``P(x) = calA(2 - sigma) int G(y) |x - y|^(-(n - 2 + sigma)) dy`` and ring bounds.

Lattice weights are ``h^n |h k|^(-beta)`` with ``beta = n - 2 + sigma``,
Gauss-averaged over cells near the origin; the cell containing the
singularity uses the exact integral of ``|z|^(-beta)`` over the cube.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy import fft as sfft
from scipy import integrate

from . import constants
from .errors import NotNegativeAtCenter
from .grid import GridFunction
from .kernels import bbox
from .operators import check_sigma


def cube_integral(n: int, beta: float, h: float) -> float:
    """``int_{[-h/2, h/2]^n} |z|^(-beta) dz`` for ``beta < n``."""
    e = beta / 2
    if n == 2:
        val, _ = integrate.quad(lambda s: (1 + s * s) ** -e, -1, 1, epsabs=0, epsrel=1e-13)
    else:
        val, _ = integrate.dblquad(lambda t, s: (1 + s * s + t * t) ** -e, -1, 1, -1, 1,
                                   epsabs=0, epsrel=1e-12)
    q = n - beta
    return 2 * n * val * (h / 2) ** q / q


class RieszWeights:
    def __init__(self, n: int, h: float, sigma: float, average_radius: int = 3, gauss_order: int = 4):
        self.n, self.h, self.sigma = n, h, sigma
        self.beta = n - 2 + sigma
        self.average_radius = average_radius
        self.gauss_order = gauss_order
        self.center = cube_integral(n, self.beta, h)
        x, w = np.polynomial.legendre.leggauss(gauss_order)
        self._nodes = (np.stack(np.meshgrid(*([x / 2] * n), indexing="ij")).reshape(n, -1))
        self._wts = np.prod(np.stack(np.meshgrid(*([w / 2] * n), indexing="ij")).reshape(n, -1), axis=0)

    def block(self, ranges) -> np.ndarray:
        grids = np.meshgrid(*[np.asarray(r, dtype=int) for r in ranges], indexing="ij")
        k = np.stack(grids).astype(float)
        r2 = np.sum(k * k, axis=0)
        with np.errstate(divide="ignore"):
            R = self.h**self.n * (self.h**2 * r2) ** (-self.beta / 2)
        near = (r2 <= self.average_radius**2) & (r2 > 0)
        if near.any():
            kk = k[:, near]
            z = self.h * (kk[:, :, None] + self._nodes[:, None, :])
            R[near] = self.h**self.n * np.sum(np.sum(z * z, axis=0) ** (-self.beta / 2) * self._wts, axis=-1)
        R[r2 == 0] = self.center
        return R


@lru_cache(maxsize=16)
def riesz_weights(n: int, h: float, sigma: float) -> RieszWeights:
    return RieszWeights(n, h, sigma)


def _support(gamma: GridFunction) -> np.ndarray:
    if gamma.exterior.table is not None or gamma.exterior.value != 0:
        raise ValueError("the potential needs a compactly supported input (zero exterior)")
    return gamma.values != 0


def riesz(gamma: GridFunction, sigma: float, x) -> float:
    """Potential at one lattice point by a direct sum."""
    sigma = check_sigma(sigma)
    d = gamma.domain
    _support(gamma)
    p = d.index_of(x)
    rw = riesz_weights(d.n, d.h, sigma)
    ranges = [np.arange(-p[a], d.N - p[a]) for a in range(d.n)]
    R = rw.block(ranges)
    return constants.calA(2 - sigma, d.n) * float(np.sum(R * gamma.values))


def riesz_field(gamma: GridFunction, sigma: float, targets=None) -> np.ndarray:
    """Potential at target points (all points by default) by FFT convolution; NaN elsewhere."""
    from .grid import resolve_region

    sigma = check_sigma(sigma)
    d = gamma.domain
    supp = _support(gamma)
    tmask = resolve_region(d, targets)
    out = np.full(d.shape, np.nan)
    if not tmask.any():
        return out
    if not supp.any():
        out[tmask] = 0.0
        return out
    win = bbox(supp | tmask)
    shape = tuple(s.stop - s.start for s in win)
    L = tuple(sfft.next_fast_len(2 * N - 1, real=True) for N in shape)
    ranges = [np.arange(-(N - 1), N) for N in shape]
    rw = riesz_weights(d.n, d.h, sigma)
    R = rw.block(ranges)
    circ = np.zeros(L)
    circ[np.ix_(*[np.mod(r, l) for r, l in zip(ranges, L)])] = R
    conv = sfft.irfftn(sfft.rfftn(circ, s=L) * sfft.rfftn(gamma.values[win], s=L), s=L)
    sl = tuple(slice(0, N) for N in shape)
    full = np.full(d.shape, np.nan)
    full[win] = constants.calA(2 - sigma, d.n) * conv[sl]
    out[tmask] = full[tmask]
    return out


# ---------------------------------------------------------------------------
# rings
# ---------------------------------------------------------------------------

@dataclass
class Ring:
    l: int
    r: float
    measure: float
    required: float

    @property
    def passed(self) -> bool:
        return self.measure >= self.required


@dataclass
class RingDecomposition:
    x0: np.ndarray
    r0: float
    rings: list = field(default_factory=list)

    @property
    def ratio(self) -> float:
        return 4 ** (-1 / len(self.x0))


def ring_decomposition(gamma: GridFunction, x0, r0: float) -> RingDecomposition:
    """Measure ``A_l = {G <= G(x0)/2} cap (Q_{r_l}(x0) minus Q_{r_{l+1}}(x0))``.

    Rings are generated while the inner cube still contains lattice points
    other than ``x0``.
    """
    d = gamma.domain
    idx = d.index_of(x0)
    xp = d.point(idx)
    g0 = gamma.values[idx]
    low = gamma.values <= g0 / 2
    rings = []
    l = 0
    q = 4 ** (-1 / d.n)
    while True:
        r = r0 * q**l
        r_next = r * q
        if r_next < 2 * d.h:
            break
        ring = d.cube(r, xp) & ~d.cube(r_next, xp)
        rings.append(Ring(l, r, float(np.count_nonzero(ring & low)) * d.cell, r**d.n / 4))
        l += 1
    return RingDecomposition(xp, r0, rings)


@dataclass
class RingReport:
    decomposition: RingDecomposition
    sigma: float
    gamma_x0: float
    chain: float  # lower bound from the measured rings
    direct: float  # -P(x0)
    c0_bound: float  # c0 (-G(x0)) r0^(2 - sigma)
    hypothesis: bool

    @property
    def chain_ok(self) -> bool:
        return self.direct >= self.chain * (1 - 1e-12)

    @property
    def c0_ok(self) -> bool:
        return self.direct >= self.c0_bound

    @property
    def certified(self) -> bool:
        return self.chain_ok and (self.c0_ok or not self.hypothesis)

    def rows(self) -> list:
        return [(rg.l, rg.r, rg.measure, rg.required, rg.passed) for rg in self.decomposition.rings]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["l", "r_l", "|A_l|", "r_l^n/4", "pass"])
        for l, r, m, req, ok in self.rows():
            wr.writerow([l, repr(r), repr(m), repr(req), "true" if ok else "false"])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text


def verify_ring_bound(gamma: GridFunction, rings: RingDecomposition | None, sigma: float,
                      x0=None, r0: float | None = None, c0=None) -> RingReport:
    """Compare the ring chain lower bound and the ``c0`` bound with ``-P(x0)``."""
    sigma = check_sigma(sigma)
    d = gamma.domain
    if rings is None:
        rings = ring_decomposition(gamma, x0, r0)
    idx = d.index_of(rings.x0)
    g0 = float(gamma.values[idx])
    if not g0 < 0:
        raise NotNegativeAtCenter(f"envelope value at x0 is {g0}")
    beta = d.n - 2 + sigma
    A = constants.calA(2 - sigma, d.n)
    s = 0.0
    for rg in rings.rings:
        s += rg.measure * (math.sqrt(d.n) * rg.r / 2) ** (-beta)
    chain = s * (-g0 / 2) * A
    direct = -riesz(gamma, sigma, rings.x0)
    c0v = constants.c0(d.n) if c0 is None else c0
    bound = c0v * (-g0) * rings.r0 ** (2 - sigma)
    hyp = all(rg.passed for rg in rings.rings)
    return RingReport(rings, sigma, g0, chain, direct, bound, hyp)


def geometric_series_check(sigma: float, n: int = 2, terms: int | None = None) -> float:
    """Relative gap between the partial sum of ``4^(-(2-sigma) l / n)`` and its closed form."""
    q = 4 ** (-(2 - sigma) / n)
    closed = 1 / (1 - q)
    if terms is None:
        terms = int(math.ceil(math.log(1e-18) / math.log(q))) + 1
    partial = math.fsum(q**l for l in range(terms))
    return abs(partial - closed) / closed
