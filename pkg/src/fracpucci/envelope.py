"""Fractional convex envelope: ``min{E_sigma G, -u^- - G} = 0`` in ``B_3``, ``G = 0`` outside.

The obstacle problem is solved by policy iteration.  At each point the
current iterate picks either the obstacle branch (``G = psi``) or the
direction ``tau`` realizing ``E_sigma G`` and the next iterate solves the
resulting linear system exactly.  Residuals are certified afterwards on the
full lattice.  A projected Jacobi relaxation is kept for cross-checks.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .grid import Exterior, GridFunction
from .kernels import bbox, engine_for, kernel_weights
from .linsolve import PolicySystem
from .operators import _quad, check_sigma, direction_components, hessian_scale, sym_eig

log = logging.getLogger(__name__)

ENVELOPE_RADIUS = 3.0


@dataclass
class EnvelopeResult:
    gamma: GridFunction
    contact_set: np.ndarray
    residual_Esigma: np.ndarray  # E_sigma G on B_3, 0 elsewhere
    residual_obstacle: np.ndarray  # -u^- - G on B_3, 0 elsewhere
    complementarity: np.ndarray  # min(scale * E_sigma G, -u^- - G) on B_3
    iterations: int
    converged: bool
    tol: float
    scale: float
    sigma: float
    flags: list = field(default_factory=list)

    @property
    def max_complementarity(self) -> float:
        return float(np.max(np.abs(self.complementarity)))


def _branch_values(eng, z, psi_w, cD, scale, n):
    Hc = eng.moments(z)
    eigs, vecs = sym_eig(Hc, n)
    E = cD * eigs[..., 0]
    return E, vecs[..., :, 0], psi_w - z


def compute_envelope(u: GridFunction, sigma: float, ell=None, tol: float | None = None,
                     max_iter: int | None = None, method: str = "howard", quad=None,
                     omega: float = 1.0, inexact: float = 1e-3, initial=None,
                     coarse_below: float | None = 1 / 48) -> EnvelopeResult:
    """Envelope of ``-u^-`` with zero data outside ``B_3``.

    Parameters
    ----------
    u : GridFunction
    sigma : float
        Order in (1, 2).
    ell : ignored
        Accepted for call-compatibility; the envelope does not depend on it.
    tol : float, optional
        Complementarity tolerance in units of ``u``; default ``1e-8 * |u^-|_inf``.
    method : {"howard", "jacobi"}
    initial : ndarray, optional
        Starting iterate on the full lattice (clipped to the obstacle).
    coarse_below : float or None
        For mesh widths below this value the Howard start is the envelope on
        the sublattice of width ``2h``, interpolated back.
    """
    sigma = check_sigma(sigma)
    d = u.domain
    q = _quad(quad)
    psi_full = -np.maximum(-u.values, 0.0)
    umax = float(np.max(-psi_full)) if psi_full.size else 0.0
    tol = 1e-8 * max(umax, 1e-300) if tol is None else float(tol)
    region = d.ball(ENVELOPE_RADIUS)
    flags = []
    if np.any(psi_full[~region] < 0):
        flags.append("obstacle-outside-B3-ignored")
    win = bbox(region)
    unknown = region[win]
    psi_w = np.where(unknown, psi_full[win], 0.0)
    w = kernel_weights(d.n, d.h, sigma, q)
    eng = engine_for(w, unknown.shape)
    cD = hessian_scale(d.n, sigma)
    smax = float(np.max(np.linalg.eigvalsh(w.S_matrix)))
    scale = 1.0 / (2 * cD * smax)
    if initial is None and method == "howard" and coarse_below is not None and d.h < coarse_below:
        initial = _coarse_start(u, sigma, tol, q, coarse_below)
    z = psi_w.copy() if initial is None else np.where(unknown, np.minimum(initial[win], psi_w), 0.0)
    conv = False
    it = 0
    if umax == 0:
        z = np.zeros(unknown.shape)
        conv, it = True, 1
    elif method == "howard":
        max_iter = max_iter or 100
        prev = None
        for it in range(1, max_iter + 1):
            E, tau, ob = _branch_values(eng, z, psi_w, cD, scale, d.n)
            comp = np.minimum(scale * E, ob)
            err = float(np.max(np.abs(comp[unknown])))
            log.debug("envelope iteration %d residual %.3e", it, err)
            if err <= tol:
                conv = True
                break
            e_rows = unknown & (ob > scale * E)
            key = e_rows.tobytes()
            if key == prev:
                # same policy as before: only the linear solve accuracy is left
                atol = 0.01 * tol
            else:
                # inexact policy step: accuracy tracks the current residual
                atol = max(0.1 * tol, inexact * err)
            prev = key
            if not e_rows.any():
                z = np.where(unknown, psi_w, 0.0)
                continue
            coef = direction_components(tau, d.n)
            system = PolicySystem(eng, coef, e_rows, q.precond_radius)
            data = np.where(unknown, psi_w, 0.0)
            z, _ = system.solve(np.zeros(unknown.shape), data, z0=z, atol=atol / (scale * cD))
    elif method == "jacobi":
        max_iter = max_iter or 100000
        for it in range(1, max_iter + 1):
            E, _, ob = _branch_values(eng, z, psi_w, cD, scale, d.n)
            comp = np.minimum(scale * E, ob)
            if float(np.max(np.abs(comp[unknown]))) <= tol:
                conv = True
                break
            z = np.where(unknown, np.minimum(psi_w, z + omega * scale * E), 0.0)
    else:
        raise ValueError(f"unknown method {method!r}")
    gvals = np.zeros(d.shape)
    gvals[win] = np.where(unknown, z, 0.0)
    gamma = GridFunction(d, gvals, Exterior(0.0))
    if not conv:
        flags.append("unconverged")
    return _certify(gamma, u.values, region, sigma, q, it, conv, tol, scale, cD, flags)


def _coarse_start(u, sigma, tol, quad, coarse_below):
    """Envelope on the sublattice of width 2h, multilinearly interpolated to ``u``'s lattice."""
    from scipy import ndimage

    from .grid import Domain

    d = u.domain
    dc = Domain(d.n, 2 * d.h, d.half_extent)
    sub = tuple(slice(None, None, 2) for _ in range(d.n))
    uc = GridFunction(dc, u.values[sub], u.exterior if u.exterior.table is None else None)
    coarse = compute_envelope(uc, sigma, tol=tol, quad=quad, coarse_below=coarse_below)
    idx = np.indices(d.shape, dtype=float) / 2
    return ndimage.map_coordinates(coarse.gamma.values, idx, order=1, mode="nearest")


def _certify(gamma, uvals, region, sigma, quad, it, conv, tol, scale, cD, flags):
    d = gamma.domain
    psi_full = -np.maximum(-uvals, 0.0)
    w = kernel_weights(d.n, d.h, sigma, quad)
    win = bbox(region)
    eng = engine_for(w, tuple(s.stop - s.start for s in win))
    Hc = eng.moments(gamma.values[win])
    eigs, _ = sym_eig(Hc, d.n)
    E = np.zeros(d.shape)
    E[win] = cD * eigs[..., 0]
    E[~region] = 0.0
    ob = np.where(region, psi_full - gamma.values, 0.0)
    comp = np.where(region, np.minimum(scale * E, ob), 0.0)
    # {u = G} within tolerance; equals {-u^- - G <= 10 tol} wherever u <= 0
    contact = region & (uvals - gamma.values <= 10 * tol)
    if conv and float(np.max(np.abs(comp))) > tol:
        conv = False
        flags = flags + ["unconverged"]
    return EnvelopeResult(gamma, contact, E, ob, comp, it, conv, tol, scale, sigma, flags)


def envelope_residuals(res: EnvelopeResult) -> dict:
    """Scalar summary of an envelope certificate."""
    d = res.gamma.domain
    region = d.ball(ENVELOPE_RADIUS)
    comp = np.abs(res.complementarity[region])
    return {
        "max_complementarity": float(comp.max()) if comp.size else 0.0,
        "mean_complementarity": float(comp.mean()) if comp.size else 0.0,
        "min_obstacle_gap": float(res.residual_obstacle[region].min()) if comp.size else 0.0,
        "min_Esigma_on_contact": float(res.residual_Esigma[res.contact_set].min())
        if res.contact_set.any() else 0.0,
        "contact_measure": float(np.count_nonzero(res.contact_set)) * d.cell,
        "iterations": int(res.iterations),
        "converged": bool(res.converged),
        "tol": float(res.tol),
        "flags": list(res.flags),
    }
