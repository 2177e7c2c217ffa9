"""Sparse solvers for stationary distributions of finite CTMCs.

The singular balance system Q^T nu = 0, sum(nu) = 1 is replaced by the
nonsingular reduced system built from D = [ones | columns of Q except the
reference state]. Two routes solve it:

  gmres_solve:     D^T nu = e_1 by restarted GMRES.
  cg_normal_solve: D D^T nu = D e_1 = ones by conjugate gradients with a
                   Jacobi preconditioner; D D^T is never formed, each matvec
                   applies D twice.

Both return the raw iterate plus a SolveReport; normalization, sign checks
and residual acceptance are the caller's job.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SolverFailure(RuntimeError):
    """A stationary solve did not produce an acceptable distribution."""


@dataclass
class SolveReport:
    method: str
    n: int
    iterations: int
    residual: float
    converged: bool
    elapsed_s: float


def coo_to_csr(n_rows: int, n_cols: int, rows, cols, vals) -> sp.csr_matrix:
    """Build a CSR matrix from triplets, summing duplicate entries."""
    m = sp.coo_matrix((vals, (rows, cols)), shape=(n_rows, n_cols))
    return m.tocsr()


def build_reduced_matrix(Q: sp.spmatrix, ref_state: int = 0) -> sp.csr_matrix:
    """D = [ones | columns of Q for every state except ref_state].

    Q is the (n, n) generator with rows summing to zero. The returned D is
    (n, n) and nonsingular when the chain is irreducible.
    """
    n = Q.shape[0]
    if Q.shape[0] != Q.shape[1]:
        raise ValueError("generator must be square")
    csc = Q.tocsc()
    keep = [c for c in range(n) if c != ref_state]
    ones = sp.csc_matrix(np.ones((n, 1)))
    return sp.hstack([ones, csc[:, keep]], format="csr")


def gmres_solve(
    D: sp.spmatrix,
    tol: float = 1e-10,
    max_iter: int | None = None,
    restart: int = 50,
) -> tuple[np.ndarray, SolveReport]:
    """Solve D^T nu = e_1 with restarted GMRES.

    max_iter is the total inner-iteration budget (default 10 n).
    """
    n = D.shape[0]
    if max_iter is None:
        max_iter = 10 * n
    A = D.T.tocsr()
    b = np.zeros(n)
    b[0] = 1.0
    count = [0]

    def cb(_):
        count[0] += 1

    t0 = time.perf_counter()
    nu, info = spla.gmres(
        A,
        b,
        rtol=tol,
        atol=0.0,
        restart=min(restart, n),
        maxiter=max(1, int(np.ceil(max_iter / max(1, restart)))),
        callback=cb,
        callback_type="pr_norm",
    )
    elapsed = time.perf_counter() - t0
    residual = float(np.linalg.norm(A @ nu - b))
    report = SolveReport(
        method="gmres",
        n=n,
        iterations=count[0],
        residual=residual,
        converged=(info == 0 and residual <= tol * np.linalg.norm(b) * 10.0),
        elapsed_s=elapsed,
    )
    return nu, report


def cg_normal_solve(
    D: sp.spmatrix,
    tol: float = 1e-10,
    max_iter: int | None = None,
) -> tuple[np.ndarray, SolveReport]:
    """Solve the normal equations D D^T nu = ones by preconditioned CG.

    The Jacobi preconditioner uses diag(D D^T) = squared row norms of D.
    """
    n = D.shape[0]
    if max_iter is None:
        max_iter = 10 * n
    Dc = D.tocsr()
    DT = Dc.T.tocsr()

    def matvec(v):
        return Dc @ (DT @ v)

    A = spla.LinearOperator((n, n), matvec=matvec, dtype=float)
    diag = np.asarray(Dc.multiply(Dc).sum(axis=1)).ravel()
    diag[diag <= 0.0] = 1.0
    M = spla.LinearOperator((n, n), matvec=lambda v: v / diag, dtype=float)
    b = np.ones(n)
    count = [0]

    def cb(_):
        count[0] += 1

    t0 = time.perf_counter()
    nu, info = spla.cg(A, b, rtol=tol, atol=0.0, maxiter=max_iter, M=M, callback=cb)
    elapsed = time.perf_counter() - t0
    residual = float(np.linalg.norm(matvec(nu) - b))
    report = SolveReport(
        method="cg_normal",
        n=n,
        iterations=count[0],
        residual=residual,
        converged=(info == 0 and residual <= tol * np.linalg.norm(b) * 10.0),
        elapsed_s=elapsed,
    )
    return nu, report
