"""Lattice quadrature for the kernel moment ``H(x) = int delta(u,x,y) y y^T |y|^(-n-sigma-2) dy``.

Every lattice offset ``y = h k`` carries a symmetric positive semidefinite
weight matrix ``W(y)`` so that

    H(x) = sum_{y != 0} W(y) delta(u, x, y) = 2 sum_y W(y) u~(x + y) - 2 u~(x) S,

where ``u~ = u - (far-field constant)`` and ``S = sum_y W(y)`` (lattice sum
inside ``sum_radius`` plus the exact integral beyond).  The weights are

* midpoint values ``h^n y y^T |y|^(-n-sigma-2)`` for ``|y| > r0``, replaced by
  a tensor Gauss average on cells close to the origin;
* zero for lattice points with ``0 < |y| <= r0`` except on the unit stencil
  ``|k|_inf = 1``, where ``W(y) = c_y y y^T`` with ``c_y >= 0`` fitted so the
  scheme integrates ``delta = y^T M y`` exactly over ``|y| < R1`` (the
  analytic ball integral plus a smooth correction for the lattice/ball
  mismatch around ``r0``).

Nonnegative stencil weights keep every linear operator ``tr(A H)`` with
``A >= 0`` monotone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import fft as sfft
from scipy import integrate
from scipy.optimize import nnls


@dataclass(frozen=True)
class QuadratureConfig:
    r0_mult: float = 4.0
    correction_radius: float = 0.5
    average_mult: float = 8.0
    gauss_order: int = 4
    sum_radius: float = 4.0
    precond_radius: int = 1

    @classmethod
    def from_dict(cls, d: dict | None) -> "QuadratureConfig":
        if not d:
            return cls()
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def components(n: int) -> list:
    """Upper-triangular index pairs; off-diagonal pairs count twice in traces."""
    return [(i, j) for i in range(n) for j in range(i, n)]


def sphere_area(n: int) -> float:
    return 2 * math.pi ** (n / 2) / math.gamma(n / 2)


def fourth_moment(n: int) -> np.ndarray:
    """``int_{S^{n-1}} t_i t_j t_k t_l dt``."""
    d = np.eye(n)
    m4 = (np.einsum("ij,kl->ijkl", d, d) + np.einsum("ik,jl->ijkl", d, d)
          + np.einsum("il,jk->ijkl", d, d))
    return sphere_area(n) / (n * (n + 2)) * m4


def outside_cube_integral(n: int, a: float, power: float) -> float:
    """``int_{|z|_inf > a} |z|^(-n-power) dz`` for ``power > 0``."""
    e = (n + power) / 2
    if n == 2:
        val, _ = integrate.quad(lambda s: (1 + s * s) ** -e, -1, 1, epsabs=0, epsrel=1e-13)
    else:
        val, _ = integrate.dblquad(lambda t, s: (1 + s * s + t * t) ** -e, -1, 1, -1, 1,
                                   epsabs=0, epsrel=1e-12)
    return 2 * n * val * a ** (-power) / power


def _smooth_cutoff(rho, R1):
    """1 on [0, R1/2], 0 beyond R1, quintic smoothstep in between."""
    t = np.clip((np.asarray(rho) - R1 / 2) / (R1 / 2), 0.0, 1.0)
    return 1 - t**3 * (10 - 15 * t + 6 * t * t)


def half_stencil(n: int) -> np.ndarray:
    ks = []
    for k in np.ndindex(*(3,) * n):
        k = np.array(k) - 1
        nz = k[k != 0]
        if nz.size and nz[0] > 0:
            ks.append(k)
    return np.array(ks)


class KernelWeights:
    """Offset weights for one ``(n, h, sigma)`` and quadrature configuration."""

    def __init__(self, n: int, h: float, sigma: float, quad: QuadratureConfig | None = None):
        self.n, self.h, self.sigma = int(n), float(h), float(sigma)
        self.quad = quad or QuadratureConfig()
        self.comps = components(self.n)
        self.mult = np.array([1.0 if i == j else 2.0 for i, j in self.comps])
        self.r0 = self.quad.r0_mult * self.h
        self.R1 = max(self.quad.correction_radius, 4 * self.r0)
        self._build_special()
        self._build_sum()

    # -- raw kernel -----------------------------------------------------
    def _kernel(self, y):
        """Midpoint weight ``h^n y_i y_j |y|^(-n-sigma-2)`` for offsets y of shape (n, ...)."""
        r2 = np.sum(y * y, axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            base = self.h**self.n * r2 ** (-(self.n + self.sigma + 2) / 2)
            return np.stack([base * y[i] * y[j] for i, j in self.comps])

    def _gauss_cell(self, k):
        """Midpoint tensor ``y y^T`` times the cell average of ``|z|^(-n-sigma-2)``.

        Averaging only the radial factor keeps every weight of the form
        ``w(k) y y^T``, so lattice moment tensors stay fully symmetric.
        """
        g = self.quad.gauss_order
        x, w = np.polynomial.legendre.leggauss(g)
        x, w = x / 2, w / 2
        nodes = np.stack(np.meshgrid(*([x] * self.n), indexing="ij")).reshape(self.n, -1)
        wts = np.prod(np.stack(np.meshgrid(*([w] * self.n), indexing="ij")).reshape(self.n, -1), axis=0)
        z = self.h * (k.T[:, :, None] + nodes[:, None, :])  # (n, m, q)
        radial = np.sum(np.sum(z * z, axis=0) ** (-(self.n + self.sigma + 2) / 2) * wts, axis=-1)
        y = self.h * k.T
        base = self.h**self.n * radial
        return np.stack([base * y[i] * y[j] for i, j in self.comps])

    def _build_special(self):
        n, h = self.n, self.h
        reach = int(math.ceil(max(self.quad.average_mult, self.quad.r0_mult))) + 1
        rng = np.arange(-reach, reach + 1)
        k = np.stack(np.meshgrid(*([rng] * n), indexing="ij")).reshape(n, -1).T
        kr = np.sqrt(np.sum(k * k, axis=1))
        keep = (kr <= reach) & (kr > 0)
        k, kr = k[keep], kr[keep]
        W = np.zeros((len(self.comps), len(k)))
        far = kr * h > self.r0 * (1 + 1e-12)
        avg = far & (kr <= self.quad.average_mult)
        mid = far & ~avg
        W[:, mid] = self._kernel((h * k[mid]).T.astype(float))
        if avg.any():
            W[:, avg] = self._gauss_cell(k[avg].astype(float))
        self._special_k = k
        self._special_W = W
        self._special_far = far
        self.stencil_c = self._fit_stencil()
        # place stencil weights
        hs = half_stencil(n)
        for kk, c in zip(hs, self.stencil_c):
            for sgn in (1, -1):
                idx = np.where(np.all(k == sgn * kk, axis=1))[0][0]
                y = h * sgn * kk
                W[:, idx] = [c * y[i] * y[j] for i, j in self.comps]

    def _moment_target(self):
        """Fourth-moment tensor the stencil has to reproduce."""
        n, h, s = self.n, self.h, self.sigma
        m4 = fourth_moment(n)
        T = m4 * self.r0 ** (2 - s) / (2 - s)
        R1 = self.R1
        radial, _ = integrate.quad(lambda r: _smooth_cutoff(r, R1) * r ** (1 - s), self.r0, R1,
                                   epsabs=0, epsrel=1e-12, limit=200)
        exact = m4 * radial
        K = int(math.ceil(R1 / h))
        rng = np.arange(-K, K + 1)
        kk = np.stack(np.meshgrid(*([rng] * n), indexing="ij")).reshape(n, -1)
        y = h * kk
        r = np.sqrt(np.sum(y * y, axis=0))
        sel = (r > self.r0 * (1 + 1e-12)) & (r < R1)
        y, r = y[:, sel], r[sel]
        Wc = self._kernel(y)
        # overwrite with Gauss-averaged cells where applicable
        near = r / h <= self.quad.average_mult
        if near.any():
            Wc[:, near] = self._gauss_cell((y[:, near] / h).T)
        chi = _smooth_cutoff(r, R1)
        Wfull = np.zeros((n, n, y.shape[1]))
        for c, (i, j) in enumerate(self.comps):
            Wfull[i, j] = Wc[c]
            Wfull[j, i] = Wc[c]
        lattice = np.einsum("ijm,km,lm,m->ijkl", Wfull, y, y, chi)
        self.moment_correction = exact - lattice
        return T + exact - lattice

    def _fit_stencil(self):
        n, h = self.n, self.h
        T = self._moment_target()
        hs = half_stencil(n).astype(float) * h
        cols = [2 * np.einsum("i,j,k,l->ijkl", y, y, y, y).ravel() for y in hs]
        Amat = np.stack(cols, axis=1)
        c, res = nnls(Amat, T.ravel())
        if res > 1e-9 * np.linalg.norm(T):
            raise ArithmeticError(f"near-field moments are not reproducible by a "
                                  f"nonnegative stencil (residual {res:.3e})")
        self.near_target = T
        return c

    def _build_sum(self):
        n, h = self.n, self.h
        K = int(math.ceil(self.quad.sum_radius / h))
        S = np.zeros(len(self.comps))
        # slab-wise lattice sum keeps memory bounded in 3-d
        rng = np.arange(-K, K + 1)
        for k0 in rng:
            blk = self.block([np.array([k0])] + [rng] * (n - 1))
            S += blk.reshape(len(self.comps), -1).sum(axis=1)
        a = (K + 0.5) * h
        tail = outside_cube_integral(n, a, self.sigma) / n
        self.S_lattice = S.copy()
        self.S_tail = np.array([tail if i == j else 0.0 for i, j in self.comps])
        self.S = S + self.S_tail

    # -- public ---------------------------------------------------------
    def block(self, ranges) -> np.ndarray:
        """Weights on the offset block ``ranges[0] x ranges[1] x ...`` (integer offsets)."""
        ranges = [np.asarray(r, dtype=int) for r in ranges]
        grids = np.meshgrid(*ranges, indexing="ij")
        y = self.h * np.stack(grids).astype(float)
        W = self._kernel(y)
        r2 = sum(g.astype(float) ** 2 for g in grids)
        W[:, r2 == 0] = 0.0
        # overwrite special offsets that fall inside the block
        k = self._special_k
        inside = np.ones(len(k), dtype=bool)
        for a, r in enumerate(ranges):
            if r.size == 0:
                return W
            inside &= (k[:, a] >= r[0]) & (k[:, a] <= r[-1])
        contiguous = all(r.size == r[-1] - r[0] + 1 for r in ranges)
        if not contiguous:
            lookups = []
            for a, r in enumerate(ranges):
                pos = {int(v): i for i, v in enumerate(r)}
                lookups.append(pos)
            for m in np.where(inside)[0]:
                idx = []
                ok = True
                for a in range(self.n):
                    p = lookups[a].get(int(k[m, a]))
                    if p is None:
                        ok = False
                        break
                    idx.append(p)
                if ok:
                    W[(slice(None),) + tuple(idx)] = self._special_W[:, m]
            return W
        idx = tuple(k[inside, a] - ranges[a][0] for a in range(self.n))
        W[(slice(None),) + idx] = self._special_W[:, inside]
        return W

    def full(self, K: int) -> np.ndarray:
        rng = np.arange(-K, K + 1)
        return self.block([rng] * self.n)

    def matrix(self, vec) -> np.ndarray:
        """Expand upper-triangular component values to a symmetric (n, n, ...) array."""
        vec = np.asarray(vec)
        out = np.empty((self.n, self.n) + vec.shape[1:])
        for c, (i, j) in enumerate(self.comps):
            out[i, j] = vec[c]
            out[j, i] = vec[c]
        return out

    @property
    def S_matrix(self) -> np.ndarray:
        return self.matrix(self.S)

    def stencil_offsets(self, radius: int):
        """Nonzero integer offsets with ``|k|_inf <= radius`` and their weights."""
        rng = np.arange(-radius, radius + 1)
        W = self.block([rng] * self.n)
        ks, ws = [], []
        for k in np.ndindex(*W.shape[1:]):
            kk = np.array(k) - radius
            if np.any(kk != 0):
                ks.append(kk)
                ws.append(W[(slice(None),) + k])
        return np.array(ks), np.array(ws)


@lru_cache(maxsize=32)
def kernel_weights(n: int, h: float, sigma: float, quad: QuadratureConfig | None = None) -> KernelWeights:
    return KernelWeights(n, h, sigma, quad or QuadratureConfig())


class ConvolutionEngine:
    """Circular FFT correlation with the offset weights on a fixed window shape.

    The FFT length per axis is at least ``2N - 1`` so the circular product
    reproduces the linear sum over offsets ``-(N-1) .. N-1`` exactly.
    """

    def __init__(self, weights: KernelWeights, shape: tuple):
        self.weights = weights
        self.shape = tuple(int(s) for s in shape)
        self.n = weights.n
        self.L = tuple(sfft.next_fast_len(2 * N - 1, real=True) for N in self.shape)
        ranges = [np.arange(-(N - 1), N) for N in self.shape]
        W = weights.block(ranges)
        circ = np.zeros((W.shape[0],) + self.L)
        pos = [np.mod(r, L) for r, L in zip(ranges, self.L)]
        circ[(slice(None),) + np.ix_(*pos)] = W
        self.W_hat = sfft.rfftn(circ, s=self.L, axes=tuple(range(1, self.n + 1)))
        self.S = weights.S

    def correlate(self, ut: np.ndarray) -> np.ndarray:
        """``sum_y W(y) ut(x + y)`` for every x in the window, per component."""
        axes = tuple(range(self.n))
        uh = sfft.rfftn(ut, s=self.L, axes=axes)
        out = np.empty((self.W_hat.shape[0],) + self.shape)
        sl = tuple(slice(0, N) for N in self.shape)
        for c in range(self.W_hat.shape[0]):
            out[c] = sfft.irfftn(self.W_hat[c] * uh, s=self.L, axes=axes)[sl]
        return out

    def moments(self, ut: np.ndarray) -> np.ndarray:
        """Upper-triangular components of H on the window."""
        conv = self.correlate(ut)
        return 2 * conv - 2 * ut[None] * self.S.reshape((-1,) + (1,) * self.n)

    def apply(self, ut: np.ndarray, coef: np.ndarray) -> np.ndarray:
        """``sum_c coef_c H_c[ut]``; coef already contains the off-diagonal factor 2."""
        return np.sum(coef * self.moments(ut), axis=0)


_ENGINES: dict = {}


def engine_for(weights: KernelWeights, shape: tuple) -> ConvolutionEngine:
    key = (id(weights), tuple(shape))
    eng = _ENGINES.get(key)
    if eng is None or eng.weights is not weights:
        if len(_ENGINES) > 24:
            _ENGINES.clear()
        eng = ConvolutionEngine(weights, shape)
        _ENGINES[key] = eng
    return eng


def bbox(mask: np.ndarray, margin: int = 0) -> tuple:
    """Bounding-box slices of the True entries of ``mask``."""
    idx = np.nonzero(mask)
    if idx[0].size == 0:
        raise ValueError("empty mask")
    out = []
    for a, ix in enumerate(idx):
        lo = max(int(ix.min()) - margin, 0)
        hi = min(int(ix.max()) + 1 + margin, mask.shape[a])
        out.append(slice(lo, hi))
    return tuple(out)
