"""Radial barrier ``eta`` and its lattice certificate.

Profile: with ``R = 2 sqrt(n)`` and inner radius ``rho``,

    G(r) = r^-p - R^-p + p R^(-p-1) (r - R)          rho <= r < R
    G(r) = G(rho) + G'(rho) (r^2 - rho^2) / (2 rho)   r < rho
    G(r) = 0                                          r >= R

``G`` is C^{1,1}, decreasing and vanishes to first order at ``R``.  The
barrier is ``eta = -c G`` with ``c = 2 / G(1.5 sqrt(n))`` so that
``eta <= -2`` on ``Q_3``.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BarrierScaleFail
from .grid import Domain, Exterior, GridFunction
from .operators import PucciEllipticity, m_extremal_field

log = logging.getLogger(__name__)

DEFAULT_SIGMAS = (1.05, 1.25, 1.5, 1.75, 1.9, 1.99)
SOURCE_RADIUS = 0.25


@dataclass(frozen=True)
class BarrierProfile:
    n: int
    p: float
    smoothing: float = 0.125

    @property
    def R(self) -> float:
        return 2 * math.sqrt(self.n)

    def _g(self, r):
        p, R = self.p, self.R
        return r ** (-p) - R ** (-p) + p * R ** (-p - 1) * (r - R)

    def _gp(self, r):
        p, R = self.p, self.R
        return -p * r ** (-p - 1) + p * R ** (-p - 1)

    def G(self, r):
        r = np.asarray(r, dtype=float)
        rho = self.smoothing
        with np.errstate(divide="ignore"):
            mid = self._g(np.maximum(r, rho))
        cap = self._g(rho) + self._gp(rho) * (r**2 - rho**2) / (2 * rho)
        return np.where(r >= self.R, 0.0, np.where(r < rho, cap, mid))

    @property
    def c(self) -> float:
        return 2.0 / float(self.G(1.5 * math.sqrt(self.n)))

    @property
    def sup(self) -> float:
        """``|eta|_inf = c G(0)``."""
        return self.c * float(self.G(0.0))

    def __call__(self, points):
        r = np.sqrt(np.sum(np.asarray(points) ** 2, axis=0))
        return -self.c * self.G(r)

    def to_dict(self) -> dict:
        return {"n": self.n, "p": self.p, "smoothing": self.smoothing, "R": self.R,
                "c": self.c, "sup": self.sup}


def build_eta(p: float, smoothing: float = 0.125, domain: Domain | None = None,
              n: int = 2, h: float = 1 / 32, max_sup: float = 1e6) -> GridFunction:
    """Sample the barrier on the lattice.

    Raises
    ------
    BarrierScaleFail
        If ``|eta|_inf`` would exceed ``max_sup``.
    """
    if not p > 0:
        raise ValueError("exponent must be positive")
    if not 0 < smoothing < 2 * math.sqrt(n if domain is None else domain.n):
        raise ValueError("smoothing radius out of range")
    domain = domain or Domain(n, h, 8.0)
    prof = BarrierProfile(domain.n, float(p), float(smoothing))
    if prof.sup > max_sup:
        raise BarrierScaleFail(f"p={p}: |eta|_inf = {prof.sup:.4g} exceeds {max_sup:.4g}")
    eta = GridFunction(domain, prof(domain.points), Exterior(0.0))
    eta.profile = prof
    return eta


@dataclass
class BarrierCertificate:
    eta: GridFunction
    M1: float
    M2: float
    sigma_grid: list
    violations: list  # (x, sigma, value)
    profile: dict | None = None
    lam: float = 1.0
    Lam: float = 1.0
    tol: float = 0.0
    q3_ok: bool = True
    support_ok: bool = True
    reasons: list = field(default_factory=list)
    per_sigma: list = field(default_factory=list)  # (sigma, max outside, max inside)

    @property
    def valid(self) -> bool:
        return not self.violations and self.q3_ok and self.support_ok and math.isfinite(self.M2)

    def xi(self, sigma: float) -> np.ndarray:
        """``(M^+ eta)^+ / M2`` at one sigma of the grid."""
        ell = PucciEllipticity(self.eta.domain.n, self.lam, self.Lam, sigma)
        d = self.eta.domain
        M = m_extremal_field(self.eta, ell, "max", d.ball(2 * math.sqrt(d.n) + 1))
        out = np.nan_to_num(np.maximum(M, 0.0))
        return out / self.M2 if self.M2 > 0 else out

    def to_dict(self) -> dict:
        return {
            "profile": self.profile,
            "lambda": self.lam,
            "Lambda": self.Lam,
            "h": self.eta.domain.h,
            "n": self.eta.domain.n,
            "M1": self.M1,
            "log_M1": math.log(self.M1) if self.M1 > 0 else None,
            "M2": self.M2,
            "log_M2": math.log(self.M2) if self.M2 > 0 else None,
            "sigma_grid": list(self.sigma_grid),
            "tol": self.tol,
            "valid": self.valid,
            "q3_ok": self.q3_ok,
            "support_ok": self.support_ok,
            "reasons": list(self.reasons),
            "per_sigma": [{"sigma": s, "max_outside": a, "max_inside": b} for s, a, b in self.per_sigma],
            "violations": [{"x": list(map(float, x)), "sigma": s, "value": v}
                           for x, s, v in self.violations],
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def certify_barrier(eta: GridFunction, lam: float = 1.5, Lam: float = 1.0,
                    sigma_grid=DEFAULT_SIGMAS, tol: float = 0.0, quad=None,
                    max_violations: int = 50) -> BarrierCertificate:
    """Evaluate ``M^+ eta`` on ``B_{2 sqrt(n) + 1}`` for every sigma of the grid."""
    d = eta.domain
    R = 2 * math.sqrt(d.n)
    targets = d.ball(R + 1)
    inner = d.ball(SOURCE_RADIUS)
    outer = targets & ~inner
    M1 = eta.sup_norm()
    M2 = 0.0
    violations, per_sigma, reasons = [], [], []
    for s in sigma_grid:
        ell = PucciEllipticity(d.n, lam, Lam, s)
        M = m_extremal_field(eta, ell, "max", targets, quad)
        mo = float(np.max(M[outer]))
        mi = float(np.max(M[inner])) if inner.any() else 0.0
        per_sigma.append((float(s), mo, mi))
        M2 = max(M2, max(mi, 0.0))
        bad = np.argwhere(outer & (M > tol))
        for k in bad[:max(0, max_violations - len(violations))]:
            violations.append((d.point(k), float(s), float(M[tuple(k)])))
        if bad.size:
            reasons.append(f"sigma={s}: {len(bad)} points with M+eta > tol outside B_1/4")
        log.debug("sigma %.3f: max outside %.4g, max inside %.4g", s, mo, mi)
    q3 = d.cube(3.0)
    q3_ok = bool(np.all(eta.values[q3] <= -2 + 1e-12))
    if not q3_ok:
        reasons.append("eta <= -2 fails on Q_3")
    support_ok = bool(np.all(eta.values[~d.ball(R)] == 0)) and eta.exterior.value == 0
    if not support_ok:
        reasons.append("eta is not supported in B_{2 sqrt n}")
    prof = getattr(eta, "profile", None)
    return BarrierCertificate(eta, M1, M2, list(sigma_grid), violations,
                              prof.to_dict() if prof is not None else None, lam, Lam, tol,
                              q3_ok, support_ok, reasons, per_sigma)


@dataclass
class ScanResult:
    certificate: BarrierCertificate | None
    tried: list  # (p, status)


def scan(domain: Domain, lam: float = 1.5, Lam: float = 1.0, exponents=range(2, 13),
         smoothing: float = 0.125, sigma_grid=DEFAULT_SIGMAS, tol: float = 0.0,
         max_sup: float = 1e6, quad=None) -> ScanResult:
    """Return the first certified candidate over the exponent scan."""
    tried = []
    for p in exponents:
        try:
            eta = build_eta(p, smoothing, domain, max_sup=max_sup)
        except BarrierScaleFail as exc:
            tried.append((p, f"scale-fail: {exc}"))
            continue
        cert = certify_barrier(eta, lam, Lam, sigma_grid, tol, quad)
        tried.append((p, "certified" if cert.valid else "; ".join(cert.reasons)))
        if cert.valid:
            return ScanResult(cert, tried)
    return ScanResult(None, tried)
