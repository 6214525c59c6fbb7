"""ABP experiments: instance battery, sigma sweeps, measure decay and the potential constant.

One record per ``(instance, sigma, h)``: solve ``M^-u = f`` in ``B_1``,
compute the envelope and the potential, and compare ``-inf u`` with the
forcing norms.  CSV output is deterministic for a fixed configuration.
"""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .constants import ConstantLedger
from .envelope import EnvelopeResult, compute_envelope, envelope_residuals
from .grid import Domain, Exterior, GridFunction, linf_norm, ln_norm
from .operators import PucciEllipticity
from .riesz import riesz_field
from .supersolution import Supersolution, _bump, normalize, solve_dirichlet

log = logging.getLogger(__name__)

CSV_COLUMNS = ["instance", "sigma", "h", "inf_u", "ln_sub", "ln_contact", "linf", "gs_bound",
               "main_bound", "ratio", "p_inf", "flags"]

SPIKE_HEIGHTS = (1, 10, 100, 1000)
DEFAULT_BATTERY = ("const", "gaussian", "bump", "spike-1", "spike-10", "spike-100", "spike-1000",
                   "checkerboard")


# ---------------------------------------------------------------------------
# battery
# ---------------------------------------------------------------------------

def forcing(name: str, domain: Domain) -> GridFunction:
    """Nonnegative forcing by name; values outside ``B_1`` are set to 0.

    ``const``: 1.  ``gaussian``: ``exp(-|x|^2 / 0.18)``.  ``bump``: smooth
    bump of radius 0.35 centred at (0.4, 0.2, ...).  ``spike-H``: height H on
    the lattice point at the origin.  ``spike-bg-H``: 1 plus the spike.
    ``checkerboard``: 1 on alternate squares of side 1/4.
    """
    pts = domain.points
    r2 = np.sum(pts**2, axis=0)
    if name == "const":
        v = np.ones(domain.shape)
    elif name == "gaussian":
        v = np.exp(-r2 / 0.18)
    elif name == "bump":
        c = np.zeros(domain.n)
        c[0], c[1] = 0.4, 0.2
        v = _bump(pts, c, 0.35)
    elif name.startswith("spike-bg-") or name.startswith("spike-"):
        height = float(name.rsplit("-", 1)[1])
        v = np.ones(domain.shape) if name.startswith("spike-bg-") else np.zeros(domain.shape)
        v[(domain.center_index,) * domain.n] += height
    elif name == "checkerboard":
        cells = np.floor(4 * pts).astype(int).sum(axis=0)
        v = (cells % 2 == 0).astype(float)
    else:
        raise KeyError(f"unknown battery instance {name!r}")
    v = np.where(domain.ball(1.0), v, 0.0)
    return GridFunction(domain, v, Exterior(0.0))


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------

@dataclass
class ExperimentRecord:
    instance: str
    sigma: float
    h: float
    inf_u: float
    ln_sub: float
    ln_contact: float
    linf: float
    linf_contact: float
    gs_bound: float
    log_main_bound: float
    ratio: float
    p_inf: float
    flags: list = field(default_factory=list)
    envelope: dict | None = None
    p_inf_by_radius: dict | None = None

    @property
    def main_bound(self) -> float:
        return math.exp(self.log_main_bound) if self.log_main_bound < 700 else math.inf

    @property
    def minus_inf_u(self) -> float:
        return -self.inf_u

    def row(self) -> list:
        return [self.instance, repr(float(self.sigma)), repr(float(self.h)), repr(self.inf_u),
                repr(self.ln_sub), repr(self.ln_contact), repr(self.linf), repr(self.gs_bound),
                repr(self.main_bound), repr(self.ratio), repr(self.p_inf), ";".join(self.flags)]


def abp_ratio(s: Supersolution, env: EnvelopeResult | None, ledger: ConstantLedger | None = None,
              instance: str = "instance", p_radii=(1.0, 2.0, 3.0, 4.0),
              p_radius: float = 1.0) -> ExperimentRecord:
    """All ABP quantities for one solved instance."""
    d = s.u.domain
    ledger = ledger or ConstantLedger.build(d.n, s.ell.lam, s.ell.Lam, 10.0, 10.0)
    ball = d.ball(1.0)
    fplus = s.f.positive_part()
    u = s.u.values
    sub = ball & (u <= 0)
    inf_u = float(u[ball].min())
    ln_sub = ln_norm(fplus, sub)
    linf = linf_norm(fplus, sub)
    flags = list(s.flags)
    if not s.certified:
        flags.append("supersolution-uncertified")
    if env is not None:
        contact = ball & (u <= 0) & (np.abs(u - env.gamma.values) <= 10 * env.tol)
        ln_c = ln_norm(fplus, contact)
        linf_c = linf_norm(fplus, contact)
        if not env.converged:
            flags.append("envelope-unconverged")
        if inf_u < 0 and abs(float(env.gamma.values.min()) - inf_u) > 10 * env.tol:
            flags.append("envelope-inf-mismatch")
        P = riesz_field(env.gamma, s.sigma, d.ball(max(p_radii) + 1e-9))
        p_by_r = {repr(float(R)): float(np.min(P[d.ball(R)])) for R in p_radii}
        p_inf = float(np.min(P[d.ball(p_radius)]))
        env_summary = envelope_residuals(env)
    else:
        ln_c = linf_c = p_inf = math.nan
        p_by_r = None
        env_summary = None
    gs = ledger.C0 * linf_c ** ((2 - s.sigma) / 2) * ln_c ** (s.sigma / 2) if env is not None else math.nan
    log_chat = ledger.log_Chat
    log_main = log_chat + math.log(ln_sub) if ln_sub > 0 else -math.inf
    if ln_sub > 0:
        ratio = -inf_u / ln_sub
    else:
        ratio = 0.0
        if inf_u < 0:
            flags.append("comparison-violation")
    return ExperimentRecord(instance, s.sigma, d.h, inf_u, ln_sub, ln_c, linf, linf_c, gs,
                            log_main, ratio, p_inf, flags, env_summary, p_by_r)


def run_instance(name: str, sigma: float, h: float, ell: PucciEllipticity | None = None,
                 ledger: ConstantLedger | None = None, n: int = 2, tol: float | None = None,
                 envelope: bool = True, quad=None, half_extent: float = 8.0,
                 shrink: float | None = None):
    """Solve, envelope and measure one battery instance."""
    ell = (ell or default_ellipticity(n)).with_sigma(sigma)
    d = Domain(n, h, half_extent)
    f = forcing(name, d)
    s = solve_dirichlet(f, ell, tol=tol, quad=quad)
    if shrink is not None:
        s = shrink_reduce(s, shrink)
    env = compute_envelope(s.u, sigma, quad=quad) if envelope else None
    return s, env, abp_ratio(s, env, ledger, name)


def default_ellipticity(n: int = 2, sigma: float = 1.5) -> PucciEllipticity:
    """``Lam = 1`` and ``lam = n - 1/2``: the class where the radial barrier certifies."""
    return PucciEllipticity(n, n - 0.5, 1.0, sigma)


def shrink_reduce(s: Supersolution, eta: float) -> Supersolution:
    """Shrink to ``B_{1-eta}`` and lift by the exterior infimum.

    ``u_eta(x) = u((1 - eta) x) - min(0, inf_{|x| >= 1} u((1 - eta) x))`` and
    ``f_eta(x) = (1 - eta)^sigma f((1 - eta) x)``, which keeps
    ``M^- u_eta <= f_eta`` by the scaling of the operator.
    """
    if not 0 < eta < 1:
        raise ValueError("eta must lie in (0, 1)")
    d = s.u.domain
    q = 1 - eta
    flat = np.moveaxis(q * d.points, 0, -1).reshape(-1, d.n)
    uv = s.u.interpolate(flat).reshape(d.shape)
    fv = s.f.interpolate(flat).reshape(d.shape)
    outside = ~d.ball(1.0)
    lift = min(0.0, float(uv[outside].min()), s.u.exterior.value)
    u = GridFunction(d, uv - lift, Exterior(s.u.exterior.value - lift))
    f = GridFunction(d, q**s.sigma * fv, Exterior(0.0))
    return Supersolution(u, f, s.sigma, s.ell, s.residual, bool(np.all(u.values[outside] >= 0)),
                         s.iterations, s.method + f"+shrink({eta})", s.converged, s.tol,
                         s.flags + [f"shrink-eta={eta}"])


# ---------------------------------------------------------------------------
# sweep
# ---------------------------------------------------------------------------

DEFAULT_CONFIG = {
    "n": 2,
    "battery": list(DEFAULT_BATTERY),
    "eps": [0.1, 0.05, 0.01],
    "h": [1 / 32],
    "lambda": None,
    "Lambda": 1.0,
    "tol": None,
    "envelope": True,
    "p_radius": 1.0,
    "seed": 0,
    "ledger": None,
    "quad": None,
}


def load_config(source=None, **overrides) -> dict:
    cfg = dict(DEFAULT_CONFIG)
    if source is not None:
        if isinstance(source, dict):
            cfg.update(source)
        else:
            with open(source) as fh:
                cfg.update(json.load(fh))
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    return cfg


def _ledger_from(cfg, n, lam, Lam):
    led = cfg.get("ledger")
    if isinstance(led, ConstantLedger):
        return led
    if isinstance(led, str):
        with open(led) as fh:
            return ConstantLedger.from_json(fh.read())
    if isinstance(led, dict):
        return ConstantLedger.from_json(json.dumps(led))
    return ConstantLedger.build(n, lam, Lam, 10.0, 10.0)


def sweep_sigma(config=None, path=None, records_out: list | None = None) -> str:
    """Run the battery over ``sigma = 2 - eps`` and mesh widths; return the CSV text.

    Iteration order is battery, then sigma (in config order), then h.  A
    failing instance yields a row with NaN values and an ``error:`` flag.
    """
    cfg = load_config(config)
    n = int(cfg["n"])
    Lam = float(cfg["Lambda"])
    lam = float(cfg["lambda"]) if cfg.get("lambda") is not None else (n - 0.5) * Lam
    sigmas = cfg.get("sigmas") or [2 - e for e in cfg["eps"]]
    ledger = _ledger_from(cfg, n, lam, Lam)
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(CSV_COLUMNS)
    for name in cfg["battery"]:
        for sigma in sigmas:
            for h in cfg["h"]:
                try:
                    ell = PucciEllipticity(n, lam, Lam, float(sigma))
                    _, _, rec = run_instance(name, float(sigma), float(h), ell, ledger, n,
                                             cfg.get("tol"), bool(cfg.get("envelope", True)),
                                             cfg.get("quad"), float(cfg.get("half_extent", 8.0)),
                                             shrink=cfg.get("shrink"))
                except Exception as exc:  # recorded per row, sweep continues
                    log.warning("instance %s sigma=%s h=%s failed: %s", name, sigma, h, exc)
                    nan = math.nan
                    rec = ExperimentRecord(name, float(sigma), float(h), nan, nan, nan, nan, nan, nan,
                                           nan, nan, nan, [f"error:{type(exc).__name__}"])
                if records_out is not None:
                    records_out.append(rec)
                wr.writerow(rec.row())
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def read_sweep_csv(text: str) -> list:
    rows = list(csv.DictReader(io.StringIO(text)))
    for r in rows:
        for k in CSV_COLUMNS[1:-1]:
            r[k] = float(r[k])
    return rows


# ---------------------------------------------------------------------------
# decay profile
# ---------------------------------------------------------------------------

@dataclass
class DecayPoint:
    k: int
    measure: float
    log_bound: float
    # log(-log bound); stays informative when log_bound rounds to 0
    loglog_deficit: float = -math.inf

    @property
    def bound(self) -> float:
        return math.exp(self.log_bound)

    @property
    def ok(self) -> bool:
        if self.measure == 0 or self.k == 0:
            return self.measure <= 1
        if self.measure >= 1:
            return False
        return math.log(-math.log(self.measure)) >= self.loglog_deficit - 1e-12


@dataclass
class DecayProfile:
    points: list
    log_mu_eps: float
    hypotheses: dict
    flags: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(p.ok for p in self.points)


def decay_profile(v: GridFunction, ledger: ConstantLedger, h_r: GridFunction | None = None,
                  i: int = 1, sigma: float = 1.9, kmax: int | None = None) -> DecayProfile:
    """``|{v > M1^k} cap Q_1|`` against ``(1 - mu eps0)^k`` in log space."""
    d = v.domain
    q1 = d.cube(1.0)
    log_mu_eps = ledger.log_mu + ledger.log_eps0_f
    mu_eps = math.exp(log_mu_eps)
    log1m = math.log1p(-mu_eps)
    # log(-log(1 - mu eps)); first order when mu eps underflows
    loglog1m = math.log(-log1m) if log1m < 0 else log_mu_eps
    log_M1 = math.log(ledger.M1)
    vmax = float(np.max(v.values[q1]))
    if kmax is None:
        kmax = 1 if vmax <= 1 else int(math.ceil(math.log(vmax) / log_M1)) + 1
    pts = []
    for k in range(kmax + 1):
        thr = math.exp(k * log_M1) if k * log_M1 < 700 else math.inf
        m = float(np.count_nonzero(q1 & (v.values > thr))) * d.cell
        deficit = math.log(k) + loglog1m if k > 0 else -math.inf
        pts.append(DecayPoint(k, m, k * log1m, deficit))
    hyp = {
        "v_nonnegative": bool(np.all(v.values >= 0)) and v.exterior.value >= 0,
        "inf_Q3_le_1": bool(float(np.min(v.values[d.cube(3.0)])) <= 1),
    }
    if h_r is not None:
        hyp["hinf_le_L"] = bool(math.log(max(h_r.sup_norm(), 1e-300)) <= ledger.log_L(max(i - 1, 0), sigma) + 1e-12)
        hn = ln_norm(h_r)
        hyp["hn_le_M3"] = bool(hn == 0 or math.log(hn) <= ledger.log_M3 + 1e-12)
    flags = [] if all(hyp.values()) else ["hypotheses-not-met"]
    return DecayProfile(pts, log_mu_eps, hyp, flags)


def normalized_instance(s: Supersolution, ledger: ConstantLedger, r: float = 0.5, i: int = 1):
    """Blow-up of a solved instance at its minimum, ready for :func:`decay_profile`."""
    d = s.u.domain
    ball = d.ball(1.0)
    vals = np.where(ball, s.u.values, np.inf)
    x0 = d.point(np.unravel_index(int(np.argmin(vals)), d.shape))
    return normalize(s.u, s.f, x0, r, ledger, i, s.sigma)


# ---------------------------------------------------------------------------
# potential constant
# ---------------------------------------------------------------------------

def pre1_empirical(records: list, radii=(1.0, 2.0, 3.0, 4.0)) -> dict:
    """``max`` over records of ``(-inf_{B_R} P) / |f|_{L^n(contact)}`` per radius."""
    out = {}
    flags = []
    for R in radii:
        key = repr(float(R))
        best = 0.0
        for rec in records:
            if rec.p_inf_by_radius is None:
                continue
            p = rec.p_inf_by_radius[key]
            if rec.ln_contact > 0:
                best = max(best, -p / rec.ln_contact)
            elif p < 0:
                flags.append(f"{rec.instance}@{rec.sigma}: zero contact norm with P < 0")
        out[float(R)] = best
    return {"Cbar": out, "flags": sorted(set(flags))}


def fit_C0(records: list) -> float:
    """Smallest ``C0`` with ``-inf u <= C0 * gs-factor`` over the records."""
    best = 0.0
    for rec in records:
        if rec.ln_contact > 0 and rec.linf_contact > 0:
            factor = rec.linf_contact ** ((2 - rec.sigma) / 2) * rec.ln_contact ** (rec.sigma / 2)
            best = max(best, -rec.inf_u / factor)
    return best


def record_dict(rec: ExperimentRecord) -> dict:
    d = asdict(rec)
    d["main_bound"] = rec.main_bound
    return d
