"""Independent reference computations used by the tests.

None of these reuse the lattice quadrature of the package: they integrate
in polar coordinates with scipy, enumerate LP grids by brute force or
evaluate closed forms in high precision.
"""
from __future__ import annotations

import math

import mpmath
import numpy as np
from scipy import integrate


# smooth bump exp(1 - 1/(1 - |x|^2)) on B_1 ----------------------------------

def bump(points):
    r2 = np.sum(np.asarray(points, dtype=float) ** 2, axis=0)
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        v = np.exp(1.0 - 1.0 / (1.0 - r2))
    return np.where(r2 < 1.0, v, 0.0)


def bump_scalar(x):
    r2 = float(x[0] ** 2 + x[1] ** 2)
    return math.exp(1.0 - 1.0 / (1.0 - r2)) if r2 < 1.0 else 0.0


def bump_hessian(x):
    """Exact hessian of the 2-d bump at ``x`` (|x| < 1)."""
    x = np.asarray(x, dtype=float)
    r2 = float(x @ x)
    s = 1.0 - r2
    g = math.exp(1.0 - 1.0 / s)
    # u = exp(phi(r2)), phi = 1 - 1/s, phi' = -1/s^2, phi'' = -2/s^3
    p1 = -1.0 / s**2
    p2 = -2.0 / s**3
    return g * ((4 * p1**2 + 4 * p2) * np.outer(x, x) + 2 * p1 * np.eye(2))


def polar_moment(u, x, sigma, splits=(0.25, 0.5, 1.0, 2.0, 3.0)):
    """``H(x)`` for a 2-d callable ``u`` by adaptive polar quadrature.

    Uses ``int_R2 = 2 int_{theta in [0, pi)} int_{rho > 0}``, which the
    symmetry of the second difference allows.
    """
    x = np.asarray(x, dtype=float)
    ux = u(x)
    H = np.zeros((2, 2))
    edges = (0.0,) + tuple(splits) + (np.inf,)
    for i, j in ((0, 0), (0, 1), (1, 1)):
        def f(rho, th, i=i, j=j):
            t = (math.cos(th), math.sin(th))
            y = (rho * t[0], rho * t[1])
            d = u((x[0] + y[0], x[1] + y[1])) + u((x[0] - y[0], x[1] - y[1])) - 2 * ux
            return d * rho ** (-1 - sigma) * t[i] * t[j]
        v = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            v += integrate.dblquad(f, 0, math.pi, a, b, epsrel=1e-9, epsabs=1e-11)[0]
        H[i, j] = H[j, i] = 2 * v
    return H


def angular_limit(D2, m: int = 720):
    """``int_{S^1} theta theta^T (theta^T D2 theta) dtheta`` by the periodic trapezoid rule."""
    th = 2 * math.pi * np.arange(m) / m
    t = np.stack([np.cos(th), np.sin(th)], axis=1)
    q = np.einsum("ki,ij,kj->k", t, D2, t)
    return (2 * math.pi / m) * np.einsum("k,ki,kj->ij", q, t, t)


# brute-force LP for the Pucci optimization ----------------------------------

def lp_grid(h, lam, Lam, mode="min", m=200):
    """Optimum of ``sum a_i h_i`` over a uniform ``m^n`` grid of ``[0, Lam]^n``
    with ``sum a >= lam`` (the feasible diagonal matrices)."""
    h = np.asarray(h, dtype=float)
    n = h.size
    g = np.linspace(0.0, Lam, m + 1)
    mesh = np.stack(np.meshgrid(*([g] * n), indexing="ij")).reshape(n, -1)
    ok = mesh.sum(axis=0) >= lam - 1e-12
    vals = h @ mesh[:, ok]
    return float(vals.min() if mode == "min" else vals.max())


def lp_matrix_sample(H, lam, Lam, mode="min", samples=4000, rng=None):
    """Random feasible non-diagonal ``A`` for the 2x2 case; returns the best ``tr(A H)``."""
    rng = np.random.default_rng(0) if rng is None else rng
    best = math.inf if mode == "min" else -math.inf
    for _ in range(samples):
        th = rng.uniform(0, math.pi)
        R = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
        a = rng.uniform(0, Lam, 2)
        if a.sum() < lam:
            continue
        A = R @ np.diag(a) @ R.T
        v = float(np.trace(A @ H))
        best = min(best, v) if mode == "min" else max(best, v)
    return best


# Riesz potential of a disc indicator -----------------------------------------

def riesz_disc_center(sigma, rho, n=2):
    """``P(0)`` for ``Gamma = -chi_{B_rho}`` by a 1-d radial integral in mpmath."""
    a = 2 - sigma
    A = mpmath.pi ** (a - mpmath.mpf(n) / 2) * mpmath.gamma((n - a) / 2) / mpmath.gamma(a / 2)
    area = 2 * mpmath.pi ** (mpmath.mpf(n) / 2) / mpmath.gamma(mpmath.mpf(n) / 2)
    # r = e^t removes the endpoint singularity r^(a-1), which is severe as a -> 0
    radial = mpmath.quad(lambda t: mpmath.exp(a * t), [-mpmath.inf, mpmath.log(rho)])
    return float(-A * area * radial)


# eps0 conditions, evaluated independently ------------------------------------

def eps0_conditions_hold(log_eps, C0, c0, Cbar, M1, M2, n, sigmas, factor=1.0):
    """Evaluate the four freezing conditions at ``eps = factor * exp(log_eps)`` in mpmath.

    The factor is applied inside the 60-digit context: ``log_eps`` can be of
    size 1e18, where a 5% change is invisible in double precision.
    """
    mp = mpmath
    with mp.workdps(60):
        eps = mp.exp(mp.mpf(log_eps) + mp.log(factor))
        mu = (64 * mp.mpf(M2) * mp.sqrt(n)) ** (-n)
        K = mp.mpf(Cbar) / mp.mpf(c0)
        for s in sigmas:
            s = mp.mpf(float(s))
            # (e1) C0 M2^{(2 - sigma)/2} <= eps^{-sigma/(2n)}
            if mp.log(C0) + (1 - s / 2) * mp.log(M2) + s / (2 * n) * mp.log(eps) > 0:
                return False
            # (e3) (256 sqrt(n) eps^{-1/n})^eps (K)^{sigma - 1} M1^{1 + log2/mu} eps^{1/n} <= 1
            lhs3 = (eps * (mp.log(256) + mp.log(n) / 2 - mp.log(eps) / n)
                    + (s - 1) * mp.log(K) + (1 + mp.log(2) / mu) * mp.log(M1) + mp.log(eps) / n)
            if lhs3 > 0:
                return False
            # (e4) K eps^{1/n} <= 1
            if mp.log(K) + mp.log(eps) / n > 0:
                return False
            # (e5) 2^eps K^{sigma/2} M1^{1/2 + log2/mu} eps^{sigma/(2n)} <= 1/2
            lhs5 = (eps * mp.log(2) + s / 2 * mp.log(K) + (mp.mpf(1) / 2 + mp.log(2) / mu) * mp.log(M1)
                    + s / (2 * n) * mp.log(eps) + mp.log(2))
            if lhs5 > 0:
                return False
        return True
