"""Command line entry point.

Every subcommand writes its artifacts into ``--out`` and exits with 0 on
success, 2 when a certificate fails and 1 on errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import barrier, dyadic, harness, plotting
from .constants import ConstantLedger, c0
from .envelope import compute_envelope, envelope_residuals
from .grid import Domain, GridFunction
from .operators import PucciEllipticity
from .riesz import ring_decomposition, verify_ring_bound
from .supersolution import solve_dirichlet

log = logging.getLogger("fracpucci")

OK, ERROR, CERT_FAIL = 0, 1, 2


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(_finite(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")


def _finite(o):
    """JSON-safe copy: numpy scalars unwrapped, non-finite floats as strings."""
    if isinstance(o, dict):
        return {str(k): _finite(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_finite(v) for v in o]
    if isinstance(o, np.ndarray):
        return _finite(o.tolist())
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        o = o.item()
    if isinstance(o, float) and not math.isfinite(o):
        return repr(o)
    return o


def _settings(args) -> dict:
    cfg = harness.load_config(args.config)
    if args.sigma is not None:
        cfg["sigma"] = args.sigma
    if args.h is not None:
        cfg["h"] = [args.h]
    if args.tol is not None:
        cfg["tol"] = args.tol
    return cfg


def _ell(cfg, sigma) -> PucciEllipticity:
    n = int(cfg["n"])
    Lam = float(cfg["Lambda"])
    lam = float(cfg["lambda"]) if cfg.get("lambda") is not None else (n - 0.5) * Lam
    return PucciEllipticity(n, lam, Lam, sigma)


def _sigma(cfg) -> float:
    s = cfg.get("sigma")
    return float(s) if s is not None else 2 - float(cfg["eps"][0])


def _h(cfg) -> float:
    return float(cfg["h"][0])


def _instance(cfg, sigma):
    d = Domain(int(cfg["n"]), _h(cfg), float(cfg.get("half_extent", 8.0)))
    if cfg.get("u_csv"):
        u = GridFunction.from_csv(cfg["u_csv"])
        return u, None
    f = harness.forcing(cfg.get("instance", "const"), d)
    s = solve_dirichlet(f, _ell(cfg, sigma), tol=cfg.get("tol"), quad=cfg.get("quad"))
    return s.u, s


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_constants(args, cfg, out: Path) -> int:
    n = int(cfg["n"])
    Lam = float(cfg["Lambda"])
    lam = float(cfg["lambda"]) if cfg.get("lambda") is not None else (n - 0.5) * Lam
    prov = {}
    M1, M2 = cfg.get("M1"), cfg.get("M2")
    if cfg.get("barrier_certificate"):
        cert = json.loads(Path(cfg["barrier_certificate"]).read_text())
        M1, M2 = cert["M1"], cert["M2"]
        prov["M1"] = prov["M2"] = "certified"
    if M1 is None or M2 is None:
        M1, M2 = 10.0, 10.0
        prov["M1"] = prov["M2"] = "assumed"
    for k in ("C0", "Cbar", "R"):
        if k in cfg:
            prov[k] = cfg.get(f"{k}_provenance", "empirical")
    led = ConstantLedger.build(n, lam, Lam, float(M1), float(M2),
                               C0=float(cfg.get("C0", 10.0)), Cbar=float(cfg.get("Cbar", 10.0)),
                               R=float(cfg.get("R", 10.0)), provenance=prov)
    led.to_json(out / "ledger.json")
    print(f"ledger written: log eps0 = {led.log_eps0_f:.6g}, c0 = {led.c0:.6g}")
    return OK


def cmd_barrier(args, cfg, out: Path) -> int:
    n = int(cfg["n"])
    Lam = float(cfg["Lambda"])
    lam = float(cfg["lambda"]) if cfg.get("lambda") is not None else (n - 0.5) * Lam
    d = Domain(n, _h(cfg), float(cfg.get("half_extent", 8.0)))
    sig = cfg.get("sigma_grid", barrier.DEFAULT_SIGMAS)
    res = barrier.scan(d, lam, Lam, cfg.get("exponents", range(2, 13)),
                       float(cfg.get("smoothing", 0.125)), sig, float(cfg.get("barrier_tol", 0.0)),
                       quad=cfg.get("quad"))
    _dump(out / "barrier_scan.json", {"tried": [{"p": p, "status": s} for p, s in res.tried]})
    if res.certificate is None:
        print("no certified barrier in the scan")
        return CERT_FAIL
    res.certificate.to_json(out / "barrier_certificate.json")
    print(f"certified: p={res.certificate.profile['p']}, M1={res.certificate.M1:.6g}, "
          f"M2={res.certificate.M2:.6g}")
    return OK


def cmd_solve(args, cfg, out: Path) -> int:
    sigma = _sigma(cfg)
    d = Domain(int(cfg["n"]), _h(cfg), float(cfg.get("half_extent", 8.0)))
    f = harness.forcing(cfg.get("instance", "const"), d)
    s = solve_dirichlet(f, _ell(cfg, sigma), tol=cfg.get("tol"), method=cfg.get("method", "howard"),
                        cfl=float(cfg.get("cfl", 0.9)), quad=cfg.get("quad"))
    s.u.to_csv(out / "u.csv")
    f.to_csv(out / "f.csv")
    _dump(out / "solve.json", {"sigma": sigma, "h": d.h, "iterations": s.iterations,
                               "max_residual": s.max_residual, "tol": s.tol,
                               "exterior_ok": s.exterior_ok, "certified": s.certified,
                               "inf_u": float(s.u.values.min()), "flags": s.flags})
    if d.n == 2:
        E = d.half_extent
        plotting.field_plot(s.u.values, (-E, E, -E, E), out / "u.svg", "u")
    return OK if s.certified else CERT_FAIL


def cmd_envelope(args, cfg, out: Path) -> int:
    sigma = _sigma(cfg)
    u, _ = _instance(cfg, sigma)
    env = compute_envelope(u, sigma, tol=cfg.get("envelope_tol"), quad=cfg.get("quad"))
    env.gamma.to_csv(out / "gamma.csv")
    summary = envelope_residuals(env)
    _dump(out / "envelope.json", summary)
    np.savez_compressed(out / "envelope_residuals.npz", Esigma=env.residual_Esigma,
                        obstacle=env.residual_obstacle, complementarity=env.complementarity,
                        contact=env.contact_set)
    if u.domain.n == 2:
        E = u.domain.half_extent
        plotting.field_plot(env.gamma.values, (-E, E, -E, E), out / "gamma.svg", "envelope")
    return OK if env.converged else CERT_FAIL


def cmd_riesz(args, cfg, out: Path) -> int:
    sigma = _sigma(cfg)
    u, _ = _instance(cfg, sigma)
    env = compute_envelope(u, sigma, quad=cfg.get("quad"))
    g = env.gamma
    d = g.domain
    if g.values.min() >= 0:
        print("envelope vanishes; nothing to check")
        return CERT_FAIL
    x0 = d.point(np.unravel_index(int(np.argmin(g.values)), d.shape))
    r0 = float(cfg.get("r0", 0.5))
    report = verify_ring_bound(g, ring_decomposition(g, x0, r0), sigma, c0=c0(d.n))
    report.to_csv(out / "rings.csv")
    _dump(out / "riesz.json", {"x0": x0.tolist(), "r0": r0, "gamma_x0": report.gamma_x0,
                               "minus_P_x0": report.direct, "chain": report.chain,
                               "c0_bound": report.c0_bound, "hypothesis": report.hypothesis,
                               "chain_ok": report.chain_ok, "c0_ok": report.c0_ok})
    return OK if report.certified else CERT_FAIL


def cmd_czd(args, cfg, out: Path) -> int:
    rng = np.random.default_rng(int(cfg.get("seed", 0)))
    trials = int(cfg.get("trials", 1000))
    max_gen = int(cfg.get("max_gen", 6))
    n = int(cfg["n"])
    bad = []
    counts = {"both_hypotheses": 0, "conclusion_true": 0}
    for t in range(trials):
        delta = float(rng.uniform(0.05, 0.95))
        A, B = dyadic.random_instance(rng, n, max_gen, delta)
        rep = dyadic.cz_verify(A, B, delta, max_gen)
        if rep.hypothesis_a and rep.hypothesis_b:
            counts["both_hypotheses"] += 1
            counts["conclusion_true"] += bool(rep.conclusion)
        if rep.counterexample:
            bad.append({"trial": t, "delta": delta, "A": dyadic.to_bitmap_text(A),
                        "B": dyadic.to_bitmap_text(B)})
    _dump(out / "czd.json", {"trials": trials, "max_gen": max_gen, **counts, "counterexamples": bad})
    return OK if not bad else CERT_FAIL


def cmd_sweep(args, cfg, out: Path) -> int:
    if cfg.get("sigma") is not None:
        cfg["sigmas"] = [float(cfg["sigma"])]
    records = []
    text = harness.sweep_sigma(cfg, out / "sweep.csv", records)
    rows = harness.read_sweep_csv(text)
    plotting.ratio_vs_sigma(rows, out / "ratio_vs_sigma.svg")
    summary = {"pre1": harness.pre1_empirical(records), "C0_fit": harness.fit_C0(records),
               "rows": len(rows)}
    _dump(out / "sweep_summary.json", summary)
    failed = any(f.startswith("error:") or f.endswith("unconverged") or f == "comparison-violation"
                 for r in records for f in r.flags)
    return CERT_FAIL if failed else OK


def cmd_decay(args, cfg, out: Path) -> int:
    sigma = _sigma(cfg)
    d = Domain(int(cfg["n"]), _h(cfg), float(cfg.get("half_extent", 8.0)))
    f = harness.forcing(cfg.get("instance", "const"), d)
    s = solve_dirichlet(f, _ell(cfg, sigma), tol=cfg.get("tol"), quad=cfg.get("quad"))
    if cfg.get("ledger"):
        led = harness._ledger_from(cfg, d.n, s.ell.lam, s.ell.Lam)
    else:
        led = ConstantLedger.build(d.n, s.ell.lam, s.ell.Lam, float(cfg.get("M1", 10.0)),
                                   float(cfg.get("M2", 10.0)))
    i = int(cfg.get("i", 1))
    nz = harness.normalized_instance(s, led, float(cfg.get("r", 0.5)), i)
    prof = harness.decay_profile(nz.u_r, led, nz.h_r, i, sigma)
    with open(out / "decay.csv", "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["k", "measure", "log_bound", "loglog_deficit", "pass"])
        for p in prof.points:
            wr.writerow([p.k, repr(p.measure), repr(p.log_bound), repr(p.loglog_deficit),
                         "true" if p.ok else "false"])
    _dump(out / "decay.json", {"hypotheses": prof.hypotheses, "flags": prof.flags,
                               "log_mu_eps0": prof.log_mu_eps, "N0": nz.N0})
    plotting.decay_plot(prof, out / "decay.svg")
    return OK if prof.ok else CERT_FAIL


COMMANDS = {
    "constants": cmd_constants,
    "barrier": cmd_barrier,
    "solve": cmd_solve,
    "envelope": cmd_envelope,
    "riesz": cmd_riesz,
    "czd-check": cmd_czd,
    "sweep": cmd_sweep,
    "decay": cmd_decay,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fracpucci", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="JSON experiment configuration")
        sp.add_argument("--out", default=".", help="output directory")
        sp.add_argument("--sigma", type=float)
        sp.add_argument("--h", type=float)
        sp.add_argument("--tol", type=float)
        sp.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _settings(args)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, cfg, out)
    except Exception as exc:  # any failure maps to exit code 1
        log.error("%s: %s", type(exc).__name__, exc)
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return ERROR


if __name__ == "__main__":
    sys.exit(main())
