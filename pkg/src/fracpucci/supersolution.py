"""Discrete supersolutions of ``M^-u <= f`` in ``B_1`` with ``u = 0`` outside.

:func:`solve_dirichlet` solves ``M^-u = f`` in ``B_1`` with zero exterior
data.  The default method is policy (Howard) iteration: freeze the optimal
matrix field ``A_k`` of the current iterate, solve the linear nonlocal
problem with GMRES, repeat.  The explicit pseudo-time scheme is available
as ``method="explicit"``.
"""
from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import constants
from .errors import SchemeDiverged, ZeroForcing
from .grid import Domain, Exterior, GridFunction, ln_norm
from .kernels import QuadratureConfig, bbox, engine_for, kernel_weights
from .linsolve import PolicySystem
from .operators import (PucciEllipticity, _quad, m_extremal_field, policy_components,
                        pucci_weights, sym_eig)

log = logging.getLogger(__name__)


@dataclass
class Supersolution:
    u: GridFunction
    f: GridFunction
    sigma: float
    ell: PucciEllipticity
    residual: np.ndarray  # (M^-u - f)^+ on B_1, 0 elsewhere
    exterior_ok: bool
    iterations: int = 0
    method: str = "howard"
    converged: bool = True
    tol: float = 0.0
    flags: list = field(default_factory=list)

    @property
    def max_residual(self) -> float:
        return float(np.max(self.residual))

    @property
    def certified(self) -> bool:
        return self.exterior_ok and self.max_residual <= self.tol


def _check_f(f: GridFunction):
    if np.any(f.values < 0):
        raise ValueError("forcing must be nonnegative")


def _certify(u, f, ell, ball, quad):
    Mu = m_extremal_field(u, ell, "min", ball, quad)
    res = np.zeros(u.domain.shape)
    res[ball] = np.maximum(Mu[ball] - f.values[ball], 0.0)
    full = np.zeros(u.domain.shape)
    full[ball] = np.abs(Mu[ball] - f.values[ball])
    outside = ~ball
    ext_ok = bool(np.all(u.values[outside] >= 0)) and u.exterior.value >= 0
    return res, full, ext_ok


def solve_dirichlet(f: GridFunction, ell: PucciEllipticity, tol: float | None = None,
                    method: str = "howard", cfl: float = 0.9, max_iter: int | None = None,
                    quad=None, radius: float = 1.0, cache_dir=None) -> Supersolution:
    """Solve ``M^-u = f`` in ``B_radius`` (default ``B_1``), ``u = 0`` outside.

    Parameters
    ----------
    f : GridFunction
        Nonnegative forcing; only its values on ``B_1`` matter.
    ell : PucciEllipticity
        Ellipticity and order.
    tol : float, optional
        Target for ``max |M^-u - f|`` on ``B_1``; default ``1e-8 * max(1, |f|_inf)``.
    method : {"howard", "explicit"}
    cfl : float
        Explicit step as a fraction of the stability limit.
    radius : float
        Radius of the solve ball; other radii serve rescaling checks.
    cache_dir : path-like, optional
        Directory of ``.npz`` files keyed by a hash of (f, sigma, h, method, cfl, tol).
    """
    _check_f(f)
    d = f.domain
    q = _quad(quad)
    sigma = ell.sigma
    scale = max(1.0, float(np.max(np.abs(f.values))))
    tol = 1e-8 * scale if tol is None else float(tol)
    ball = d.ball(radius)
    cached = _cache_path(cache_dir, f, ell, method, cfl, tol, radius)
    if cached is not None and cached.exists():
        with np.load(cached) as z:
            u = GridFunction(d, z["u"])
            it, conv = int(z["it"]), bool(z["conv"])
        res, absres, ext_ok = _certify(u, f, ell, ball, q)
        return Supersolution(u, f, sigma, ell, res, ext_ok, it, method,
                             conv and float(absres.max()) <= tol, tol, [] if conv else ["unconverged"])
    if not np.any(f.values[ball] > 0):
        u = GridFunction(d, np.zeros(d.shape))
        res, _, ext_ok = _certify(u, f, ell, ball, q)
        return Supersolution(u, f, sigma, ell, res, ext_ok, 0, method, True, tol)
    if method == "howard":
        vals, it, conv = _howard(f, ell, ball, tol, max_iter or 60, q)
    elif method == "explicit":
        vals, it, conv = _explicit(f, ell, ball, tol, cfl, max_iter or 200000, q)
    else:
        raise ValueError(f"unknown method {method!r}")
    u = GridFunction(d, vals)
    if cached is not None:
        cached.parent.mkdir(parents=True, exist_ok=True)
        np.savez(cached, u=vals, it=it, conv=conv)
    res, absres, ext_ok = _certify(u, f, ell, ball, q)
    flags = [] if conv else ["unconverged"]
    return Supersolution(u, f, sigma, ell, res, ext_ok, it, method,
                         conv and float(absres.max()) <= tol, tol, flags)


def _cache_path(cache_dir, f, ell, method, cfl, tol, radius):
    if cache_dir is None:
        return None
    d = f.domain
    key = hashlib.sha256(np.ascontiguousarray(f.values).tobytes())
    key.update(repr((d.n, d.h, d.half_extent, ell.lam, ell.Lam, ell.sigma, method, cfl, tol, radius)).encode())
    return Path(cache_dir) / f"u-{key.hexdigest()[:24]}.npz"


def _howard(f, ell, ball, tol, max_iter, quad):
    d = f.domain
    w = kernel_weights(d.n, d.h, ell.sigma, quad)
    win = bbox(ball)
    unknown = ball[win]
    fw = f.values[win]
    eng = engine_for(w, unknown.shape)
    z = np.zeros(unknown.shape)
    conv = False
    it = 0
    for it in range(1, max_iter + 1):
        Hc = eng.moments(z)
        eigs, vecs = sym_eig(Hc, d.n)
        a = pucci_weights(eigs, ell.lam, ell.Lam, "min")
        F = (2 - ell.sigma) * np.sum(a * eigs, axis=-1) - fw
        err = float(np.max(np.abs(F[unknown])))
        log.debug("howard iteration %d residual %.3e", it, err)
        if err <= tol:
            conv = True
            break
        coef = (2 - ell.sigma) * policy_components(vecs, a, d.n)
        system = PolicySystem(eng, coef, unknown, quad.precond_radius)
        z, _ = system.solve(fw, np.zeros(unknown.shape), z0=z, atol=0.1 * tol)
    vals = np.zeros(d.shape)
    vals[win] = np.where(unknown, z, 0.0)
    return vals, it, conv


def _explicit(f, ell, ball, tol, cfl, max_iter, quad):
    d = f.domain
    w = kernel_weights(d.n, d.h, ell.sigma, quad)
    win = bbox(ball)
    unknown = ball[win]
    fw = f.values[win]
    eng = engine_for(w, unknown.shape)
    smax = float(np.max(np.linalg.eigvalsh(w.S_matrix)))
    tau = cfl / (2 * (2 - ell.sigma) * smax * d.n * ell.Lam)
    bound = 1e3 * max(1.0, float(np.max(np.abs(fw))))
    z = np.zeros(unknown.shape)
    for it in range(1, max_iter + 1):
        Hc = eng.moments(z)
        eigs, _ = sym_eig(Hc, d.n)
        F = (2 - ell.sigma) * np.sum(pucci_weights(eigs, ell.lam, ell.Lam, "min") * eigs, axis=-1) - fw
        F[~unknown] = 0.0
        if float(np.max(np.abs(F))) <= tol:
            break
        z = z + tau * F
        if float(np.max(np.abs(z))) > bound:
            raise SchemeDiverged(f"iterate exceeded {bound:.3g}; reduce cfl (now {cfl})")
    else:
        vals = np.zeros(d.shape)
        vals[win] = z
        return vals, max_iter, False
    vals = np.zeros(d.shape)
    vals[win] = z
    return vals, it, True


# ---------------------------------------------------------------------------
# normalization and radii
# ---------------------------------------------------------------------------

@dataclass
class Normalized:
    u_r: GridFunction
    h_r: GridFunction
    N0: float
    ginf: float
    gn: float


def ghat(f: GridFunction, u: GridFunction, margin: float = 0.0) -> GridFunction:
    """``f^+`` on ``{u <= 0} cap B_1``, optionally widened by ``margin`` lattice cells."""
    from scipy import ndimage

    d = f.domain
    mask = (u.values <= 0) & d.ball(1.0)
    cells = int(round(margin / d.h))
    if cells > 0:
        mask = ndimage.binary_dilation(mask, iterations=cells)
    return f.with_values(np.where(mask, np.maximum(f.values, 0.0), 0.0), Exterior(0.0))


def normalize(u: GridFunction, f: GridFunction, x0, r: float, ledger, i: int,
              sigma: float, margin: float = 0.0) -> Normalized:
    """Blow up around ``x0`` at scale ``r`` and divide by ``N0``.

    ``N0 = r^sigma / L_{i-1} * |g|_inf + r^(sigma-1) / M3 * |g|_n`` where
    ``g`` is the cut-off forcing.  Returns ``u_r(x) = (u(x0 + r x) - u(x0)) / N0``
    and ``h_r(x) = r^sigma g(x0 + r x) / N0`` sampled on the same lattice.
    """
    if not 0 < r < 1:
        raise ValueError("r must lie in (0, 1)")
    g = ghat(f, u, margin)
    ginf = float(np.max(np.abs(g.values)))
    gn = ln_norm(g)
    if ginf == 0:
        raise ZeroForcing("forcing vanishes on the sublevel set")
    logL = ledger.log_L(max(i - 1, 0), sigma)
    log_terms = [sigma * math.log(r) - logL + math.log(ginf),
                 (sigma - 1) * math.log(r) - ledger.log_M3 + math.log(gn)]
    logN0 = float(np.logaddexp(*log_terms))
    N0 = math.exp(logN0) if logN0 < 700 else math.inf
    d = u.domain
    x0 = d.point(d.index_of(x0))
    pts = (x0.reshape((d.n,) + (1,) * d.n) + r * d.points)
    flat = np.moveaxis(pts, 0, -1).reshape(-1, d.n)
    uv = u.interpolate(flat).reshape(d.shape)
    gv = g.interpolate(flat).reshape(d.shape)
    u0 = float(u.interpolate(x0[None])[0])
    scale_u = math.exp(-logN0)
    ur = GridFunction(d, (uv - u0) * scale_u, Exterior((u.exterior.value - u0) * scale_u))
    hr = GridFunction(d, r**sigma * gv * scale_u, Exterior(0.0))
    return Normalized(ur, hr, N0, ginf, gn)


@dataclass
class Radii:
    log_s1: float
    log_s2: float
    log_r0: float
    branch: str

    @property
    def s1(self):
        return math.exp(self.log_s1) if self.log_s1 < 700 else math.inf

    @property
    def s2(self):
        return math.exp(self.log_s2) if self.log_s2 < 700 else math.inf

    @property
    def r0(self):
        return math.exp(self.log_r0)


def radii(u_at_x0: float, g_n: float, g_inf: float, ledger=None, i: int = 1, sigma: float = 1.5,
          *, log_M3: float | None = None, log_L: float | None = None,
          log_M1: float | None = None, log_k0: float | None = None) -> Radii:
    """``s1``, ``s2`` and ``r0 = min(s1, s2, 1)`` in log space.

    ``s1 = (-u(x0) M3 / (4 M1^k0 |g|_n))^(1/(sigma-1))`` and
    ``s2 = (-u(x0) L_{i-1} / (4 M1^k0 |g|_inf))^(1/sigma)``.  Explicit log
    arguments override the ledger.
    """
    if not u_at_x0 < 0:
        raise ValueError("u(x0) must be negative")
    if ledger is not None:
        log_M3 = ledger.log_M3 if log_M3 is None else log_M3
        log_L = ledger.log_L(max(i - 1, 0), sigma) if log_L is None else log_L
        log_M1 = math.log(ledger.M1) if log_M1 is None else log_M1
        log_k0 = ledger.log_k0 if log_k0 is None else log_k0
    k0_log_M1 = math.exp(log_k0) * log_M1 if log_k0 < 700 else math.inf
    base = math.log(-u_at_x0) - math.log(4) - k0_log_M1
    ls1 = (base + log_M3 - math.log(g_n)) / (sigma - 1)
    ls2 = (base + log_L - math.log(g_inf)) / sigma
    cands = {"s1": ls1, "s2": ls2, "one": 0.0}
    branch = min(cands, key=lambda k: cands[k])
    return Radii(ls1, ls2, cands[branch], branch)


def pivotal_margin(u_at_x0, g_n, g_inf, r, log_M3, log_L, log_M1, log_k0, sigma) -> float:
    """``log(-u(x0)/2) - log(M1^k0 N0(r))``; nonnegative means the bound holds."""
    k0_log_M1 = math.exp(log_k0) * log_M1
    logN0 = float(np.logaddexp(sigma * math.log(r) - log_L + math.log(g_inf),
                               (sigma - 1) * math.log(r) - log_M3 + math.log(g_n)))
    return math.log(-u_at_x0 / 2) - (k0_log_M1 + logN0)


# ---------------------------------------------------------------------------
# analytic catalog
# ---------------------------------------------------------------------------

def _bump(points, center, radius):
    r2 = np.sum((points - np.reshape(center, (-1,) + (1,) * (points.ndim - 1))) ** 2, axis=0) / radius**2
    out = np.zeros(r2.shape)
    inside = r2 < 1
    out[inside] = np.exp(1 - 1 / (1 - r2[inside]))
    return out


def catalog(name: str, domain: Domain, ell: PucciEllipticity, depth: float = 1.0):
    """Radial supersolution with a known sign pattern: ``u = -depth * bump``.

    ``f`` is set to ``max(M^-u, 0)`` on ``B_1`` so ``M^-u <= f`` holds exactly
    at the discrete level and ``u = 0`` outside ``B_1``.
    """
    if name == "bump":
        vals = -depth * _bump(domain.points, np.zeros(domain.n), 1.0)
    elif name == "quadratic-cap":
        r2 = np.sum(domain.points**2, axis=0)
        vals = np.where(r2 < 1, -depth * (1 - r2) ** 3, 0.0)
    else:
        raise KeyError(f"unknown catalog entry {name!r}")
    u = GridFunction(domain, vals)
    ball = domain.ball(1.0)
    Mu = m_extremal_field(u, ell, "min", ball)
    fv = np.zeros(domain.shape)
    fv[ball] = np.maximum(Mu[ball], 0.0)
    f = GridFunction(domain, fv)
    res = np.zeros(domain.shape)
    return Supersolution(u, f, ell.sigma, ell, res, True, 0, "catalog", True, 0.0)
