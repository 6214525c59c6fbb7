"""Pucci extremal operators, the fractional hessian and its first eigenvalue.

Everything is computed from the kernel moment matrix ``H(x)`` (see
:mod:`fracpucci.kernels`):

* ``M^-u(x) = (2 - sigma) * min{tr(A H) : lam <= tr A, 0 <= A <= Lam I}``
  and ``M^+`` with ``max``;
* ``D^sigma u(x) = c_D(n, sigma) * H(x)`` with
  ``c_D = (n + sigma - 2)(n + sigma)/2 * calA(2 - sigma)``;
* ``E_sigma u(x)`` is the least eigenvalue of ``D^sigma u(x)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import constants
from .errors import InfeasibleEllipticity, NotTouching, SigmaDomain
from .grid import Domain, GridFunction, resolve_region
from .kernels import QuadratureConfig, bbox, components, engine_for, kernel_weights, sphere_area


@dataclass(frozen=True)
class PucciEllipticity:
    """Ellipticity class ``{A : lam <= tr A, 0 <= A <= Lam I}`` and the order sigma."""

    n: int = 2
    lam: float = 1.0
    Lam: float = 1.0
    sigma: float = 1.5

    def __post_init__(self):
        if not (self.lam > 0 and self.Lam > 0 and self.lam <= self.n * self.Lam):
            raise InfeasibleEllipticity(
                f"need 0 < lam <= n*Lam, got lam={self.lam}, Lam={self.Lam}, n={self.n}")
        check_sigma(self.sigma)

    def with_sigma(self, sigma: float) -> "PucciEllipticity":
        return PucciEllipticity(self.n, self.lam, self.Lam, sigma)


def check_sigma(sigma: float) -> float:
    if not 1 < sigma < 2:
        raise SigmaDomain(f"sigma must lie in (1, 2), got {sigma}")
    return float(sigma)


def hessian_scale(n: int, sigma: float) -> float:
    """``c_D`` with ``D^sigma = c_D * H``."""
    return (n + sigma - 2) * (n + sigma) / 2 * constants.calA(2 - sigma, n)


# ---------------------------------------------------------------------------
# closed-form matrix optimization
# ---------------------------------------------------------------------------

def pucci_weights(eigs, lam: float, Lam: float, mode: str = "min") -> np.ndarray:
    """Optimal diagonal weights ``a`` for ascending eigenvalues ``eigs`` (last axis).

    ``min``: every negative eigenvalue gets ``Lam``; leftover trace mass
    ``lam - Lam * #neg`` goes greedily to the smallest nonnegative ones.
    ``max`` is the mirror image.
    """
    eigs = np.asarray(eigs, dtype=float)
    n = eigs.shape[-1]
    if lam > n * Lam * (1 + 1e-15):
        raise InfeasibleEllipticity(f"lam={lam} exceeds n*Lam={n * Lam}")
    if mode == "max":
        return pucci_weights(-eigs[..., ::-1], lam, Lam, "min")[..., ::-1]
    if mode != "min":
        raise ValueError(f"mode must be 'min' or 'max', got {mode!r}")
    a = np.where(eigs < 0, float(Lam), 0.0)
    rem = lam - a.sum(axis=-1)
    for k in range(n):
        add = np.where(eigs[..., k] >= 0, np.clip(rem, 0.0, Lam), 0.0)
        a[..., k] += add
        rem = rem - add
    return a


def pucci_extremal_eigs(h_eigs, ell, mode: str = "min"):
    """``min`` (or ``max``) of ``sum a_i h_i`` over ``0 <= a_i <= Lam, sum a_i >= lam``.

    ``ell`` is a :class:`PucciEllipticity` or a ``(lam, Lam)`` pair.  No
    ``(2 - sigma)`` factor is applied here.
    """
    lam, Lam = (ell.lam, ell.Lam) if hasattr(ell, "lam") else ell
    h = np.sort(np.asarray(h_eigs, dtype=float), axis=-1)
    a = pucci_weights(h, lam, Lam, mode)
    return np.sum(a * h, axis=-1)


def sym_eig(Hc: np.ndarray, n: int):
    """Ascending eigenvalues and eigenvectors of symmetric matrices.

    ``Hc`` holds upper-triangular components with shape ``(ncomp, ...)``.
    Returns ``eigs`` of shape ``(..., n)`` and ``vecs`` of shape
    ``(..., n, n)`` whose columns are eigenvectors.  The 2x2 case is closed
    form; 3x3 uses LAPACK.
    """
    if n == 2:
        a, b, c = Hc[0], Hc[1], Hc[2]
        m = (a + c) / 2
        d = np.hypot((a - c) / 2, b)
        th = 0.5 * np.arctan2(2 * b, a - c)
        cs, sn = np.cos(th), np.sin(th)
        eigs = np.stack([m - d, m + d], axis=-1)
        vecs = np.empty(a.shape + (2, 2))
        vecs[..., 0, 0], vecs[..., 1, 0] = -sn, cs
        vecs[..., 0, 1], vecs[..., 1, 1] = cs, sn
        return eigs, vecs
    H = np.empty(Hc.shape[1:] + (n, n))
    for c, (i, j) in enumerate(components(n)):
        H[..., i, j] = Hc[c]
        H[..., j, i] = Hc[c]
    return np.linalg.eigh(H)


def policy_components(vecs: np.ndarray, a: np.ndarray, n: int) -> np.ndarray:
    """Upper-triangular components of ``V diag(a) V^T``, with the trace factor 2 off-diagonal."""
    out = []
    for i, j in components(n):
        v = np.sum(vecs[..., i, :] * vecs[..., j, :] * a, axis=-1)
        out.append(v if i == j else 2 * v)
    return np.stack(out)


def direction_components(tau: np.ndarray, n: int) -> np.ndarray:
    """Trace coefficients of ``tau tau^T`` for unit vectors ``tau`` of shape ``(..., n)``."""
    out = []
    for i, j in components(n):
        v = tau[..., i] * tau[..., j]
        out.append(v if i == j else 2 * v)
    return np.stack(out)


# ---------------------------------------------------------------------------
# second differences and moments
# ---------------------------------------------------------------------------

def second_difference(u: GridFunction, x, y) -> float:
    """``u(x + y) + u(x - y) - 2 u(x)`` with multilinear interpolation off the lattice."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    vals = u.interpolate(np.stack([x + y, x - y, x]))
    return float(vals[0] + vals[1] - 2 * vals[2])


def centered(u: GridFunction):
    """``u - (far-field constant)`` on the box padded by the exterior table.

    Returns ``(array, pad)``; the array vanishes wherever the exterior
    constant applies, so lattice sums over it are exact.
    """
    pad = u.exterior.pad if u.exterior.table is not None else 0
    return u.extended(pad) - u.exterior.value, pad


@dataclass
class KernelMoment:
    """Kernel moment ``H`` at one point with quadrature diagnostics."""

    H: np.ndarray
    x: np.ndarray
    near_field_radius: float
    tail_estimate: float
    nonclassical: bool = False

    @property
    def flags(self) -> list:
        return ["nonclassical-point"] if self.nonclassical else []


def _quad(quad) -> QuadratureConfig:
    if quad is None:
        return QuadratureConfig()
    if isinstance(quad, dict):
        return QuadratureConfig.from_dict(quad)
    return quad


def _nonclassical(arr: np.ndarray, p: tuple, h: float) -> bool:
    """Flag points where axis/diagonal second differences do not settle under refinement."""
    n = arr.ndim
    dirs = [np.eye(n, dtype=int)[i] for i in range(n)]
    if n == 2:
        dirs += [np.array([1, 1]), np.array([1, -1])]
    scale = max(float(np.max(np.abs(arr))), 1e-300)
    for e in dirs:
        vals = []
        for m in (1, 2):
            a = tuple(np.add(p, m * e))
            b = tuple(np.subtract(p, m * e))
            if min(min(a), min(b)) < 0 or any(a[i] >= arr.shape[i] or b[i] >= arr.shape[i]
                                               for i in range(n)):
                return False
            vals.append((arr[a] + arr[b] - 2 * arr[p]) / (m * m * h * h * float(e @ e)))
        big = max(abs(vals[0]), abs(vals[1]))
        if big > 1e-6 * scale / h and abs(vals[0] - vals[1]) > 0.25 * big:
            return True
    return False


def kernel_moment(u: GridFunction, x, sigma: float, quad=None) -> KernelMoment:
    """``H(x)`` by a direct lattice sum (independent of the FFT path)."""
    sigma = check_sigma(sigma)
    d = u.domain
    w = kernel_weights(d.n, d.h, sigma, _quad(quad))
    arr, pad = centered(u)
    p = tuple(i + pad for i in d.index_of(x))
    ranges = [np.arange(-p[a], arr.shape[a] - p[a]) for a in range(d.n)]
    W = w.block(ranges)
    Hc = 2 * np.tensordot(W, arr, axes=(list(range(1, d.n + 1)), list(range(d.n))))
    Hc = Hc - 2 * arr[p] * w.S
    H = w.matrix(Hc)
    xp = d.point(d.index_of(x))
    dist = d.half_extent + pad * d.h - float(np.max(np.abs(xp)))
    sup = float(np.max(np.abs(arr))) if arr.size else 0.0
    tail = 4 * sup * sphere_area(d.n) * dist ** (-sigma) / sigma
    return KernelMoment(H=H, x=xp, near_field_radius=w.r0, tail_estimate=tail,
                        nonclassical=_nonclassical(arr, p, d.h))


@dataclass
class MomentField:
    """Upper-triangular components of ``H`` over a target set."""

    Hc: np.ndarray  # (ncomp, *domain.shape); NaN outside targets
    targets: np.ndarray
    n: int

    def matrix_at(self, index) -> np.ndarray:
        out = np.empty((self.n, self.n))
        for c, (i, j) in enumerate(components(self.n)):
            out[i, j] = out[j, i] = self.Hc[(c,) + tuple(index)]
        return out


def moment_field(u: GridFunction, sigma: float, targets=None, quad=None) -> MomentField:
    """``H`` at every target point through one FFT correlation on the support window."""
    sigma = check_sigma(sigma)
    d = u.domain
    tmask = resolve_region(d, targets)
    w = kernel_weights(d.n, d.h, sigma, _quad(quad))
    arr, pad = centered(u)
    tpad = np.zeros(arr.shape, dtype=bool)
    inner = tuple(slice(pad, pad + s) for s in d.shape)
    tpad[inner] = tmask
    ncomp = len(w.comps)
    out = np.full((ncomp,) + d.shape, np.nan)
    if not tmask.any():
        return MomentField(out, tmask, d.n)
    win = bbox(tpad | (arr != 0))
    eng = engine_for(w, tuple(s.stop - s.start for s in win))
    Hw = eng.moments(arr[win])
    full = np.full((ncomp,) + arr.shape, np.nan)
    full[(slice(None),) + win] = Hw
    out = full[(slice(None),) + inner]
    out[:, ~tmask] = np.nan
    return MomentField(out, tmask, d.n)


# ---------------------------------------------------------------------------
# operators
# ---------------------------------------------------------------------------

def _ell_for(ell: PucciEllipticity, n: int):
    if ell.n != n:
        raise ValueError(f"ellipticity is for n={ell.n}, function lives in n={n}")


def m_extremal(u: GridFunction, x, ell: PucciEllipticity, mode: str = "min", quad=None) -> float:
    """``M^-u(x)`` (mode ``min``) or ``M^+u(x)`` (mode ``max``) at one point."""
    _ell_for(ell, u.domain.n)
    km = kernel_moment(u, x, ell.sigma, quad)
    eigs = np.linalg.eigvalsh(km.H)
    return float((2 - ell.sigma) * pucci_extremal_eigs(eigs, ell, mode))


def m_extremal_field(u: GridFunction, ell: PucciEllipticity, mode: str = "min",
                     targets=None, quad=None) -> np.ndarray:
    """Pucci operator at every target point (NaN elsewhere)."""
    _ell_for(ell, u.domain.n)
    mf = moment_field(u, ell.sigma, targets, quad)
    eigs, _ = sym_eig(np.nan_to_num(mf.Hc), u.domain.n)
    val = (2 - ell.sigma) * pucci_extremal_eigs(eigs, ell, mode)
    val[~mf.targets] = np.nan
    return val


def fractional_hessian(v: GridFunction, x, sigma: float, quad=None) -> np.ndarray:
    km = kernel_moment(v, x, sigma, quad)
    return hessian_scale(v.domain.n, sigma) * km.H


def first_eigenvalue(v: GridFunction, x, sigma: float, quad=None) -> float:
    """``E_sigma v(x)``: least eigenvalue of the fractional hessian."""
    return float(np.linalg.eigvalsh(fractional_hessian(v, x, sigma, quad))[0])


def first_eigenvalue_field(v: GridFunction, sigma: float, targets=None, quad=None) -> np.ndarray:
    mf = moment_field(v, sigma, targets, quad)
    eigs, _ = sym_eig(np.nan_to_num(mf.Hc), v.domain.n)
    val = hessian_scale(v.domain.n, sigma) * eigs[..., 0]
    val[~mf.targets] = np.nan
    return val


def evaluate_with_test(u: GridFunction, phi, x, radius: float, ell: PucciEllipticity,
                       mode: str = "min", quad=None, touch_tol: float = 1e-12) -> float:
    """Evaluate the operator on ``v = phi`` in ``B_radius(x)``, ``u`` elsewhere.

    ``phi`` (callable on coordinates of shape ``(n, ...)``) must touch ``u``
    from below at ``x``: ``phi(x) = u(x)`` and ``phi <= u`` on the ball.
    """
    d = u.domain
    idx = d.index_of(x)
    ball = d.ball(radius, d.point(idx))
    pv = np.asarray(phi(d.points), dtype=float)
    scale = max(1.0, u.sup_norm())
    if abs(pv[idx] - u.values[idx]) > touch_tol * scale:
        raise NotTouching(f"phi(x) = {pv[idx]!r} differs from u(x) = {u.values[idx]!r}")
    if np.any(pv[ball] > u.values[ball] + touch_tol * scale):
        raise NotTouching("phi exceeds u inside the test neighbourhood")
    v = u.with_values(np.where(ball, pv, u.values))
    return m_extremal(v, d.point(idx), ell, mode, quad)


def default_domain(n: int = 2, h: float = 1 / 32, half_extent: float | None = None) -> Domain:
    """Box large enough for ``B_3`` and the barrier support ``B_{2 sqrt n}``."""
    if half_extent is None:
        need = 3 + 2 * math.sqrt(n)
        half_extent = 8.0 if n == 2 else math.ceil(need / h) * h
    return Domain(n, h, half_extent)
