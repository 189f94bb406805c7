"""Dense strictly convex QP by the Goldfarb-Idnani dual active-set method.

    minimise   1/2 x^T G x + a^T x
    subject to C x >= b   (first ``meq`` rows as equalities)

The method starts from the unconstrained minimiser and adds the most
violated constraint each outer step, dropping constraints whose multipliers
would turn negative. Every iterate is dual feasible, so a capped run still
returns a point that satisfies the constraints added so far.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._jit import njit

OPTIMAL, INFEASIBLE, MAX_ITER = 0, 1, 2
STATUS = {OPTIMAL: "optimal", INFEASIBLE: "infeasible", MAX_ITER: "max_iter"}


@njit
def _solve_active(Ginv, N):
    """Ginv N and the inverse of N^T Ginv N for the current active set."""
    GN = Ginv @ N
    M = N.T @ GN
    Minv = np.linalg.inv(M)
    return GN, Minv


@njit
def _gi(G, a, C, b, meq, max_iter, tol):
    n = G.shape[0]
    m = C.shape[0]
    L = np.linalg.cholesky(G)
    Linv = np.linalg.inv(L)
    Ginv = Linv.T @ Linv
    x = -(Ginv @ a)
    active = np.empty(n, dtype=np.int64)
    u = np.zeros(n)
    q = 0
    status = OPTIMAL
    it = 0
    is_active = np.zeros(m, dtype=np.bool_)
    while True:
        # choose a constraint to add: equalities first, then the most violated
        p = -1
        if q < meq:
            for i in range(meq):
                if not is_active[i]:
                    p = i
                    break
        if p < 0:
            worst = -tol
            for i in range(meq, m):
                if is_active[i]:
                    continue
                s = C[i] @ x - b[i]
                if s < worst:
                    worst = s
                    p = i
        if p < 0:
            break
        if it >= max_iter:
            status = MAX_ITER
            break
        it += 1
        np_ = C[p]
        uplus = np.zeros(q + 1)
        uplus[:q] = u[:q]
        is_eq = p < meq
        while True:
            if q > 0:
                N = np.empty((n, q))
                for k in range(q):
                    N[:, k] = C[active[k]]
                GN, Minv = _solve_active(Ginv, N)
                r = Minv @ (GN.T @ np_)
                z = Ginv @ np_ - GN @ r
            else:
                r = np.zeros(0)
                z = Ginv @ np_
            if q >= n:
                # a full active set spans the space: no primal step exists
                z = np.zeros(n)
            # partial step limited by inequality multipliers reaching zero
            t1 = np.inf
            kdrop = -1
            for k in range(q):
                if active[k] >= meq and r[k] > tol:
                    tk = uplus[k] / r[k]
                    if tk < t1:
                        t1 = tk
                        kdrop = k
            zn = z @ np_
            s = np_ @ x - b[p]
            t2 = np.inf
            # zn relative to the unprojected norm measures dependence on the active set
            dependent = abs(zn) <= 1e-10 * max(np_ @ (Ginv @ np_), 1e-300)
            if not dependent:
                t2 = -s / zn
            t = min(t1, t2)
            if t == np.inf or (is_eq and dependent and kdrop < 0):
                status = INFEASIBLE
                break
            if t2 == np.inf:
                # dependent direction: only the dual step, then drop
                for k in range(q):
                    uplus[k] -= t * r[k]
                uplus[q] += t
                is_active[active[kdrop]] = False
                for k in range(kdrop, q - 1):
                    active[k] = active[k + 1]
                    uplus[k] = uplus[k + 1]
                uplus[q - 1] = uplus[q]
                q -= 1
                uplus = uplus[:q + 1].copy()
                continue
            x = x + t * z
            for k in range(q):
                uplus[k] -= t * r[k]
            uplus[q] += t
            if t == t2:
                active[q] = p
                is_active[p] = True
                u[:q + 1] = uplus
                q += 1
                break
            is_active[active[kdrop]] = False
            for k in range(kdrop, q - 1):
                active[k] = active[k + 1]
                uplus[k] = uplus[k + 1]
            uplus[q - 1] = uplus[q]
            q -= 1
            uplus = uplus[:q + 1].copy()
        if status != OPTIMAL:
            break
    lam = np.zeros(m)
    for k in range(q):
        lam[active[k]] = u[k]
    return x, lam, status, it


@dataclass(frozen=True)
class QPResult:
    x: np.ndarray
    multipliers: np.ndarray
    status: str
    iterations: int

    @property
    def ok(self) -> bool:
        return self.status == "optimal"


def solve_qp(G, a, C=None, b=None, meq: int = 0, max_iter: int = 200,
             tol: float = 1e-10) -> QPResult:
    """Solve the QP above. ``G`` must be symmetric positive definite."""
    G = np.ascontiguousarray(G, dtype=float)
    a = np.ascontiguousarray(a, dtype=float)
    n = G.shape[0]
    if C is None:
        C = np.zeros((0, n))
        b = np.zeros(0)
    C = np.ascontiguousarray(np.atleast_2d(C), dtype=float).reshape(-1, n)
    b = np.ascontiguousarray(b, dtype=float).reshape(-1)
    if not (np.all(np.isfinite(G)) and np.all(np.isfinite(a))
            and np.all(np.isfinite(C)) and np.all(np.isfinite(b))):
        raise ValueError("QP data must be finite")
    try:
        x, lam, status, it = _gi(G, a, C, b, meq, max_iter, tol)
    except np.linalg.LinAlgError:
        return QPResult(np.full(n, np.nan), np.zeros(C.shape[0]), "singular", 0)
    return QPResult(x, lam, STATUS[int(status)], int(it))
