"""Scalar constants: gamma, the Riesz normaliser, c0, mu, eps0 and friends.

Every quantity that can overflow a double (``mu**-1``, ``L_i``, ``eps0``,
``M1**k0``) is carried as a natural logarithm.  The eps0 search runs in
mpmath so that a logarithm of size ``1e28`` still resolves a 1% change
in ``eps0``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional

import mpmath
import numpy as np

from .errors import AlphaDomain, GammaDomain, InfeasibleEllipticity, SigmaDomain

LOG2 = math.log(2.0)


def gamma(x: float) -> float:
    """Euler's gamma function for ``x > 0``."""
    x = float(x)
    if not x > 0:
        raise GammaDomain(f"gamma is only evaluated for x > 0, got {x}")
    return math.gamma(x)


def _check_alpha(alpha, n):
    if n < 2:
        raise AlphaDomain("dimension must be >= 2")
    if not (0 < alpha < min(2, n)):
        raise AlphaDomain(f"alpha must lie in (0, {min(2, n)}), got {alpha}")


def log_calA(alpha: float, n: int) -> float:
    _check_alpha(alpha, n)
    return ((alpha - n / 2) * math.log(math.pi) + math.lgamma((n - alpha) / 2)
            - math.lgamma(alpha / 2))


def calA(alpha: float, n: int) -> float:
    """Riesz normaliser ``pi^(alpha - n/2) Gamma((n - alpha)/2) / Gamma(alpha/2)``."""
    return math.exp(log_calA(alpha, n))


def calA_over_alpha(alpha: float, n: int) -> float:
    """``calA(alpha) / alpha``, finite down to ``alpha = 0``.

    Uses ``Gamma(alpha/2) = Gamma(1 + alpha/2) / (alpha/2)``.
    """
    if alpha == 0:
        return math.pi ** (-n / 2) * math.gamma(n / 2) / 2
    _check_alpha(alpha, n)
    return (math.pi ** (alpha - n / 2) * math.gamma((n - alpha) / 2)
            / (2 * math.gamma(1 + alpha / 2)))


def c0_profile(sigma, n: int):
    """The function whose infimum over sigma in (0, 2) defines ``c0(n)``.

    ``(sqrt(n)/2)^(-n+2-sigma) calA(2-sigma) / (8 (1 - 4^(-(2-sigma)/n)))``,
    evaluated through ``calA(e)/e`` and ``e / (1 - 4^(-e/n))`` so that
    ``sigma = 2`` returns the limit.  Accepts scalars or arrays.
    """
    sig = np.atleast_1d(np.asarray(sigma, dtype=float))
    out = np.empty_like(sig)
    c = 2 * LOG2 / n
    for i, s in enumerate(sig):
        e = 2.0 - s
        ratio = 1.0 / c if e == 0 else e / -math.expm1(-e * c)
        out[i] = (math.sqrt(n) / 2) ** (-n + e) * calA_over_alpha(e, n) * ratio / 8
    return out if np.ndim(sigma) else float(out[0])


def c0_endpoint(n: int) -> float:
    """Limit of :func:`c0_profile` as sigma -> 2."""
    return (math.sqrt(n) / 2) ** (-n) * math.pi ** (-n / 2) * math.gamma(n / 2) * n / (32 * LOG2)


def c0(n: int, step: float = 1e-4) -> float:
    """Certified lower bound of :func:`c0_profile` over sigma in (0, 2].

    The profile is sampled on a grid of the given step (plus the sigma -> 2
    limit); on each grid interval the bound is the smaller endpoint minus
    half the local first and second differences.
    """
    m = int(round(2.0 / step))
    sig = np.linspace(0.0, 2.0, m + 1)[1:]  # sigma = 0 is excluded, sigma = 2 is the limit
    F = c0_profile(sig, n)
    d1 = np.abs(np.diff(F))
    d2 = np.zeros_like(d1)
    d2[1:] = np.abs(np.diff(F, 2))
    lower = np.minimum(F[:-1], F[1:]) - 0.5 * (d1 + d2)
    return float(min(lower.min(), F[-1]))


def log_mu(M2: float, n: int) -> float:
    """``log((64 M2 sqrt(n))^-n)``."""
    return -n * (math.log(64) + math.log(M2) + 0.5 * math.log(n))


def log_M3(log_eps0: float, n: int) -> float:
    """``log(eps0^(1/n) / (64 sqrt(n)))``."""
    return log_eps0 / n - math.log(64) - 0.5 * math.log(n)


# ---------------------------------------------------------------------------
# eps0 feasibility

CONDITIONS = ("e1", "e3", "e4", "e5")


def _condition_terms(C0, c0_, Cbar, M1, M2, n):
    """Each condition as ``lhs - rhs = a + b*sigma`` with a, b functions of log(eps)."""
    mp = mpmath
    lC0, lM1, lM2 = mp.log(C0), mp.log(M1), mp.log(M2)
    K = mp.log(Cbar) - mp.log(c0_)
    inv_mu = mp.exp(n * (mp.log(64) + lM2 + mp.log(n) / 2))
    l2 = mp.log(2)
    l256 = mp.log(256) + mp.log(n) / 2

    def e1(ell):
        return lC0 + lM2, -lM2 / 2 + ell / (2 * n)

    def e3(ell):
        eps = mp.exp(ell)
        return eps * (l256 - ell / n) - K + (1 + l2 * inv_mu) * lM1 + ell / n, K

    def e4(ell):
        return K + ell / n, mp.mpf(0)

    def e5(ell):
        eps = mp.exp(ell)
        return eps * l2 + (mp.mpf(1) / 2 + l2 * inv_mu) * lM1 + l2, K / 2 + ell / (2 * n)

    return {"e1": e1, "e3": e3, "e4": e4, "e5": e5}


def sigma_grid(lo: float, hi: float, per_unit: int = 2048) -> np.ndarray:
    """Closed grid on ``[lo, hi]``; the open endpoints enter as limits."""
    m = max(2, int(math.ceil((hi - lo) * per_unit)) + 1)
    return np.linspace(lo, hi, m)


def condition_margins(log_eps, C0, c0_, Cbar, M1, M2, n, sigmas) -> dict:
    """Worst ``lhs - rhs`` over ``sigmas`` for each condition (<= 0 means it holds)."""
    terms = _condition_terms(C0, c0_, Cbar, M1, M2, n)
    ell = mpmath.mpf(log_eps)
    out = {}
    for name, fn in terms.items():
        a, b = fn(ell)
        vals = [a + b * mpmath.mpf(float(s)) for s in sigmas]
        k = max(range(len(vals)), key=lambda i: vals[i])
        out[name] = (vals[k], float(sigmas[k]))
    return out


@dataclass
class Eps0Result:
    log_eps0: mpmath.mpf
    cap: float
    subnormal: bool
    binding: str
    binding_sigma: float
    sigma_range: tuple
    margins: dict = field(default_factory=dict)
    log_eps0_restricted: Optional[mpmath.mpf] = None

    @property
    def eps0(self) -> float:
        """Linear value; 0.0 when it underflows a double."""
        return float(mpmath.exp(self.log_eps0)) if not self.subnormal else 0.0


def _worst_at_endpoints(ell, terms, lo, hi):
    worst, name_w, sig_w = None, None, None
    for name, fn in terms.items():
        a, b = fn(ell)
        for s in (lo, hi):
            v = a + b * s
            if worst is None or v > worst:
                worst, name_w, sig_w = v, name, s
    return worst, name_w, sig_w


def _largest_feasible(terms, lo_of, hi, cap, rel=0.01):
    """Largest log(eps) <= log(cap) with every condition <= 0 on [lo_of(eps), hi].

    Conditions are affine in sigma, so the endpoint check equals the grid
    maximum.  Each is increasing in log(eps), so bisection is valid.
    """
    mp = mpmath

    def feasible(ell):
        return _worst_at_endpoints(ell, terms, mp.mpf(lo_of(ell)), mp.mpf(hi))[0] <= 0

    top = mp.log(cap)
    if feasible(top):
        return top
    hi_ = top
    lo = min(mp.mpf(-1), top - 1)
    while not feasible(lo):
        hi_ = lo
        lo *= 2
        if lo < -mp.mpf(10) ** 200:
            raise ArithmeticError("no feasible eps0 found even in log space")
    tol = mp.log(1 + rel)
    while hi_ - lo > tol:
        mid = (lo + hi_) / 2
        if feasible(mid):
            lo = mid
        else:
            hi_ = mid
    return lo


def solve_eps0(C0: float, c0_: float, Cbar: float, M1: float, M2: float, n: int,
               cap: float = 0.5, per_unit: int = 2048) -> Eps0Result:
    """Largest eps0 <= cap satisfying the four freezing conditions.

    Conditions are required for sigma in (1, 2) (checked on the closed
    grid, which is conservative).  The answer for the narrower range
    ``[2 - eps0, 2)`` is also computed and stored for comparison.
    """
    for name, v in (("C0", C0), ("c0", c0_), ("Cbar", Cbar), ("M1", M1), ("M2", M2)):
        if not v > 0:
            raise ValueError(f"{name} must be positive")
    lM = abs(math.log(M2)) + abs(math.log(M1)) + 1
    digits = 40 + int(n * math.log10(64 * M2 * math.sqrt(n)) + math.log10(lM) + 2)
    with mpmath.workdps(max(digits, 40)):
        terms = _condition_terms(C0, c0_, Cbar, M1, M2, n)
        ell = _largest_feasible(terms, lambda e: 1.0, 2.0, cap)
        ell_r = _largest_feasible(terms, lambda e: 2 - float(min(mpmath.exp(e), 1)), 2.0, cap)
        grid = sigma_grid(1.0, 2.0, per_unit)
        margins = condition_margins(ell, C0, c0_, Cbar, M1, M2, n, grid)
        binding = max(margins, key=lambda k: margins[k][0])
        return Eps0Result(
            log_eps0=+ell, cap=cap,
            subnormal=bool(ell < mpmath.log(mpmath.mpf("1e-300"))),
            binding=binding, binding_sigma=margins[binding][1],
            sigma_range=(1.0, 2.0), margins=margins, log_eps0_restricted=+ell_r,
        )


def verify_eps0(log_eps0, C0, c0_, Cbar, M1, M2, n, per_unit: int = 20480,
                lo: float = 1.0, hi: float = 2.0) -> dict:
    """Re-check every condition on a (finer) sigma grid; returns margins and a verdict."""
    lM = abs(math.log(M2)) + abs(math.log(M1)) + 1
    digits = 40 + int(n * math.log10(64 * M2 * math.sqrt(n)) + math.log10(lM) + 2)
    with mpmath.workdps(max(digits, 40)):
        m = condition_margins(log_eps0, C0, c0_, Cbar, M1, M2, n, sigma_grid(lo, hi, per_unit))
        return {"ok": all(v <= 0 for v, _ in m.values()),
                "margins": {k: (float(v), s) for k, (v, s) in m.items()}}


# ---------------------------------------------------------------------------
# iteration schedule

def k0_of(mu_eps: float) -> int:
    """Smallest k with ``(1 - mu_eps)^k <= 1/2``."""
    if not (0 < mu_eps < 1):
        raise ValueError(f"mu*eps0 must lie in (0, 1), got {mu_eps}")
    step = -math.log1p(-mu_eps)
    k = max(1, math.ceil(LOG2 / step))
    # settle rounding at the boundary by direct evaluation
    while k > 1 and (k - 1) * step >= LOG2:
        k -= 1
    while k * step < LOG2:
        k += 1
    return int(k)


def log_k0(log_mu_eps: float) -> float:
    """``log k0`` when ``mu*eps0`` is too small to hold in a double."""
    if log_mu_eps > math.log(1e-8):
        return math.log(k0_of(math.exp(log_mu_eps)))
    # -log(1 - x) = x (1 + x/2 + ...); the ceiling is below resolution here
    return math.log(LOG2) - log_mu_eps


def schedule(i: int, sigma: float, eps0: float | None, C0: float, n: int = 2,
             log_eps0: float | None = None) -> tuple:
    """``(C_i, L_i)`` with ``C_i = 2^-i C0`` and ``L_i = (C_i eps0^(sigma/2n))^(-2/(2-sigma))``.

    ``L_i`` is returned as a float (``inf`` on overflow); use
    :func:`log_schedule` for the logarithm.
    """
    _, lL = log_schedule(i, sigma, eps0, C0, n, log_eps0)
    Li = math.exp(lL) if lL < 709 else math.inf
    return C0 * 2.0 ** (-i), Li


def log_schedule(i: int, sigma: float, eps0: float | None, C0: float, n: int = 2,
                 log_eps0: float | None = None) -> tuple:
    if i < 0:
        raise ValueError("i must be nonnegative")
    if not (1 < sigma < 2):
        raise SigmaDomain(f"sigma must lie in (1, 2), got {sigma}")
    if log_eps0 is None:
        if not (0 < eps0 < 1):
            raise ValueError("eps0 must lie in (0, 1)")
        log_eps0 = math.log(eps0)
    lC = math.log(C0) - i * LOG2
    lL = -2.0 / (2 - sigma) * (lC + sigma / (2 * n) * float(log_eps0))
    return lC, lL


# ---------------------------------------------------------------------------
# ledger

@dataclass
class ConstantLedger:
    n: int
    lam: float
    Lam: float
    C0: float = 10.0
    Cbar: float = 10.0
    R: float = 10.0
    M1: float = 10.0
    M2: float = 10.0
    provenance: dict = field(default_factory=lambda: {
        "C0": "assumed", "Cbar": "assumed", "R": "assumed", "M1": "assumed", "M2": "assumed"})
    c0: float = 0.0
    log_mu: float = 0.0
    log_eps0: str = "0"
    eps0_subnormal: bool = False
    eps0_binding: str = ""
    log_eps0_restricted: str = "0"

    def __post_init__(self):
        if not (0 < self.lam <= self.n * self.Lam):
            raise InfeasibleEllipticity(
                f"need 0 < lambda <= n*Lambda, got lambda={self.lam}, Lambda={self.Lam}")

    @classmethod
    def build(cls, n: int, lam: float, Lam: float, M1: float, M2: float,
              C0: float = 10.0, Cbar: float = 10.0, R: float = 10.0,
              provenance: dict | None = None, cap: float = 0.5) -> "ConstantLedger":
        prov = {"C0": "assumed", "Cbar": "assumed", "R": "assumed",
                "M1": "assumed", "M2": "assumed"}
        prov.update(provenance or {})
        c0_ = c0(n)
        res = solve_eps0(C0, c0_, Cbar, M1, M2, n, cap=cap)
        with mpmath.workdps(60):
            le = mpmath.nstr(res.log_eps0, 50)
            ler = mpmath.nstr(res.log_eps0_restricted, 50)
        return cls(n=n, lam=lam, Lam=Lam, C0=C0, Cbar=Cbar, R=R, M1=M1, M2=M2,
                   provenance=prov, c0=c0_, log_mu=log_mu(M2, n), log_eps0=le,
                   eps0_subnormal=res.subnormal, eps0_binding=res.binding,
                   log_eps0_restricted=ler)

    # derived quantities, all logarithmic
    @property
    def log_eps0_f(self) -> float:
        return float(self.log_eps0)

    @property
    def eps0(self) -> float:
        return math.exp(self.log_eps0_f) if self.log_eps0_f > -745 else 0.0

    @property
    def mu(self) -> float:
        return math.exp(self.log_mu)

    @property
    def log_M3(self) -> float:
        return log_M3(self.log_eps0_f, self.n)

    @property
    def log_Chat(self) -> float:
        return -self.log_eps0_f / self.n

    @property
    def log_k0(self) -> float:
        return log_k0(self.log_mu + self.log_eps0_f)

    def C(self, i: int) -> float:
        return self.C0 * 2.0 ** (-i)

    def log_L(self, i: int, sigma: float) -> float:
        return log_schedule(i, sigma, None, self.C0, self.n, log_eps0=self.log_eps0_f)[1]

    def to_dict(self) -> dict:
        def both(name, logv):
            # linear value is null when it overflows; the log field is authoritative
            lin = math.exp(logv) if -745 < logv < 709 else (0.0 if logv <= -745 else None)
            return {f"{name}": lin, f"log_{name}": logv}

        d = asdict(self)
        d["provenance"] = dict(self.provenance)
        derived = {}
        for name in ("C0", "Cbar", "R", "M1", "M2", "c0"):
            derived.update(both(name, math.log(getattr(self, name))))
        derived.update(both("mu", self.log_mu))
        derived.update(both("eps0", self.log_eps0_f))
        derived.update(both("M3", self.log_M3))
        derived.update(both("Chat", self.log_Chat))
        derived.update(both("k0", self.log_k0))
        derived.update(both("calA_0", math.log(calA_over_alpha(0.0, self.n))))
        d["derived"] = derived
        d["provenance"].update({"c0": "certified", "mu": "closed-form", "eps0": "certified",
                                "M3": "closed-form", "Chat": "closed-form", "k0": "closed-form"})
        return d

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True, default=str, allow_nan=False)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_json(cls, source) -> "ConstantLedger":
        if isinstance(source, dict):
            d = dict(source)
        else:
            text = source if source.lstrip().startswith("{") else open(source).read()
            d = json.loads(text)
        d.pop("derived", None)
        prov = {k: v for k, v in d.get("provenance", {}).items()
                if k in ("C0", "Cbar", "R", "M1", "M2")}
        d["provenance"] = prov
        return cls(**d)
