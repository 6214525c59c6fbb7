"""Linear nonlocal systems ``sum_c coef_c(x) H_c[z](x) = rhs(x)`` on an unknown set.

Both policy-iteration solvers (Dirichlet problem, obstacle problem) reduce
each step to such a system.  Rows are scaled by the diagonal weight
``2 sum_c coef_c S_c``, the matrix-free operator is applied by FFT and GMRES
is preconditioned by algebraic multigrid (or an exact factorization) of
the local stencil part.
"""
from __future__ import annotations

import logging

import numpy as np
import pyamg
from scipy import sparse
from scipy.sparse import linalg as spla

from .kernels import ConvolutionEngine, KernelWeights

log = logging.getLogger(__name__)


class PolicySystem:
    """One linear system on a window.

    Parameters
    ----------
    engine : ConvolutionEngine
        Engine for the window shape.
    coef : ndarray, shape (ncomp, *window)
        Trace coefficients per point (off-diagonal entries already doubled).
    unknown : ndarray of bool, shape window
        Rows/columns that are solved for; all other points are data.
    """

    def __init__(self, engine: ConvolutionEngine, coef: np.ndarray, unknown: np.ndarray,
                 precond_radius: int = 1, precond: str = "amg"):
        self.engine = engine
        self.weights: KernelWeights = engine.weights
        self.coef = coef
        self.unknown = unknown
        self.idx = np.flatnonzero(unknown)
        S = self.weights.S.reshape((-1,) + (1,) * unknown.ndim)
        self.diag = (2 * np.sum(coef * S, axis=0)).ravel()[self.idx]
        if np.any(self.diag <= 0):
            raise ValueError("policy has a row with no diagonal weight")
        self.precond_radius = precond_radius
        self.precond = precond
        self._prec = None

    @property
    def size(self) -> int:
        return self.idx.size

    def apply_full(self, arr: np.ndarray) -> np.ndarray:
        return self.engine.apply(arr, self.coef)

    def _embed(self, z):
        arr = np.zeros(self.unknown.shape)
        arr.ravel()[self.idx] = z
        return arr

    def matvec(self, z):
        return self.apply_full(self._embed(z)).ravel()[self.idx] / self.diag

    def local_matrix(self):
        """Row-scaled local stencil part of the operator (diagonal -1)."""
        shape = self.unknown.shape
        ks, ws = self.weights.stencil_offsets(self.precond_radius)
        pos = -np.ones(int(np.prod(shape)), dtype=np.int64)
        pos[self.idx] = np.arange(self.size)
        pts = np.array(np.unravel_index(self.idx, shape))
        rows, cols, vals = [np.arange(self.size)], [np.arange(self.size)], [-np.ones(self.size)]
        coef_u = self.coef.reshape(self.coef.shape[0], -1)[:, self.idx]
        for k, w in zip(ks, ws):
            nb = pts + k[:, None]
            ok = np.all((nb >= 0) & (nb < np.array(shape)[:, None]), axis=0)
            flat = np.ravel_multi_index(tuple(np.where(ok, nb, 0)), shape)
            col = np.where(ok, pos[flat], -1)
            sel = col >= 0
            v = 2 * np.sum(coef_u[:, sel] * w[:, None], axis=0) / self.diag[sel]
            rows.append(np.flatnonzero(sel))
            cols.append(col[sel])
            vals.append(v)
        return sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                 shape=(self.size, self.size))

    def _preconditioner(self):
        if self._prec is not None:
            return self._prec
        P = self.local_matrix()
        if self.precond == "lu" or self.size < 2000:
            lu = spla.splu(P.tocsc())
            solve = lu.solve
        elif self.precond == "amg":
            # pyamg draws from the global legacy RNG (spectral radius estimate); pin it
            state = np.random.get_state()
            np.random.seed(0)
            try:
                ml = pyamg.smoothed_aggregation_solver(-P, symmetry="nonsymmetric", max_coarse=500)
            finally:
                np.random.set_state(state)
            cyc = ml.aspreconditioner(cycle="V")
            solve = lambda v: -cyc.matvec(v)  # noqa: E731
        else:
            raise ValueError(f"unknown preconditioner {self.precond!r}")
        self._prec = spla.LinearOperator((self.size, self.size), matvec=solve, dtype=float)
        return self._prec

    def solve(self, rhs: np.ndarray, data: np.ndarray, z0=None, atol: float = 1e-10,
              maxiter: int = 400, outer: int = 8):
        """Solve for the unknowns given data values elsewhere.

        ``rhs`` and ``data`` have the window shape.  Returns the full window
        array (data outside the unknown set) and the final max-norm residual
        of the unscaled equations.
        """
        base = np.where(self.unknown, 0.0, data)
        b = (rhs.ravel()[self.idx] - self.apply_full(base).ravel()[self.idx]) / self.diag
        M = self._preconditioner()
        A = spla.LinearOperator((self.size, self.size), matvec=self.matvec, dtype=float)
        z = np.zeros(self.size) if z0 is None else np.asarray(z0, dtype=float).ravel()[self.idx]
        dmax = float(self.diag.max())
        res = np.inf
        for _ in range(outer):
            r = b - A.matvec(z)
            res = float(np.max(np.abs(r * self.diag))) if r.size else 0.0
            if res <= atol:
                break
            dz, info = spla.gmres(A, r, rtol=1e-13, atol=0.25 * atol / dmax, restart=60,
                                  maxiter=maxiter, M=M)
            z = z + dz
            if info < 0:
                raise RuntimeError(f"GMRES breakdown (info={info})")
        else:
            r = b - A.matvec(z)
            res = float(np.max(np.abs(r * self.diag))) if r.size else 0.0
        out = base.copy()
        out.ravel()[self.idx] = z
        return out, res
