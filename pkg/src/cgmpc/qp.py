"""Dense strictly convex QP solver, dual active-set (Goldfarb-Idnani style).

    minimize    0.5 d'G d + a'd
    subject to  C_eq d  = b_eq
                C_in d <= b_in

Starts from the unconstrained minimizer and adds violated constraints one at
a time, taking combined primal-dual steps; dual blocking drops working
constraints. Equalities are forced into the working set first and never
leave. G must be positive definite (the SQP driver guarantees this via
damped BFGS). Infeasibility is detected when a violated constraint admits
neither a primal nor a dual step.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve


class QpNumericalError(RuntimeError):
    pass


@dataclass
class QpResult:
    status: str            # "optimal" | "infeasible"
    d: np.ndarray
    lam: np.ndarray        # equality multipliers
    mu: np.ndarray         # inequality multipliers, >= 0, zero off the working set
    working_set: list      # active inequality rows
    pivots: int


def solve_qp(G, a, C_eq=None, b_eq=None, C_in=None, b_in=None, tol=1e-10,
             max_pivots=None):
    G = np.asarray(G, dtype=float)
    a = np.asarray(a, dtype=float)
    n = a.size
    C_eq = np.zeros((0, n)) if C_eq is None else np.asarray(C_eq, dtype=float)
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float)
    C_in = np.zeros((0, n)) if C_in is None else np.asarray(C_in, dtype=float)
    b_in = np.zeros(0) if b_in is None else np.asarray(b_in, dtype=float)
    n_eq, m = C_eq.shape[0], C_in.shape[0]
    if max_pivots is None:
        max_pivots = 50 * (n + m + 10)

    try:
        chol = cho_factor(G, lower=True)
    except np.linalg.LinAlgError as exc:
        raise QpNumericalError("QP Hessian not positive definite") from exc

    d = cho_solve(chol, -a)
    # working set bookkeeping; equality rows use ids < n_eq and never drop
    ids = []
    normals = np.zeros((n, 0))     # constraint gradients as columns
    gn = np.zeros((n, 0))          # G^{-1} columns for the working set
    S = np.zeros((0, 0))           # normals' G^{-1} normals
    u = np.zeros(0)                # working multipliers
    eq_sign = {}                   # equality id -> +-1 (flip used to force it)
    pivots = 0

    def add_column(cvec):
        nonlocal normals, gn, S
        gcol = cho_solve(chol, cvec)
        cross = normals.T @ gcol
        diag = float(cvec @ gcol)
        k = S.shape[0]
        S_new = np.empty((k + 1, k + 1))
        S_new[:k, :k] = S
        S_new[:k, k] = cross
        S_new[k, :k] = cross
        S_new[k, k] = diag
        S = S_new
        normals = np.concatenate([normals, cvec[:, None]], axis=1)
        gn = np.concatenate([gn, gcol[:, None]], axis=1)

    def drop_column(j):
        nonlocal normals, gn, S, u, ids
        keep = [i for i in range(len(ids)) if i != j]
        normals = normals[:, keep]
        gn = gn[:, keep]
        S = S[np.ix_(keep, keep)]
        u = u[keep]
        ids = [ids[i] for i in keep]

    def step_directions(cvec):
        """Primal direction z and working-multiplier rates r for a new normal."""
        gcol = cho_solve(chol, cvec)
        if len(ids) == 0:
            return gcol, np.zeros(0)
        rhs = normals.T @ gcol
        try:
            r = np.linalg.solve(S, rhs)
        except np.linalg.LinAlgError:
            r = np.linalg.lstsq(S, rhs, rcond=None)[0]
        return gcol - gn @ r, r

    def enforce(idx, cvec, bval, is_eq):
        """Drive constraint cvec'd <= bval (or = for equalities) to equality
        and add it to the working set."""
        nonlocal d, u, pivots
        while True:
            pivots += 1
            if pivots > max_pivots:
                raise QpNumericalError("QP pivot limit exceeded")
            viol = float(cvec @ d - bval)
            if viol <= tol:
                if is_eq:
                    # equalities join the working set even when already
                    # satisfied, so later pivots keep them pinned
                    z, _ = step_directions(cvec)
                    if float(cvec @ z) <= 1e-14:
                        return True  # dependent, consistent row
                    ids.append(idx)
                    u = np.append(u, 0.0)
                    add_column(cvec)
                return True
            z, r = step_directions(cvec)
            czz = float(cvec @ z)
            # dual blocking only by inequality members
            t1 = np.inf
            blocker = -1
            for j, cid in enumerate(ids):
                if cid < n_eq or r[j] <= 1e-14:
                    continue
                ratio = u[j] / r[j]
                if ratio < t1:
                    t1, blocker = ratio, j
            t2 = viol / czz if czz > 1e-14 else np.inf
            t = min(t1, t2)
            if not np.isfinite(t):
                return False  # no primal or dual step: infeasible
            if t > 0:
                d = d - t * z
                u = u - t * r
            if t2 <= t1:
                ids.append(idx)
                u = np.append(u, t)
                add_column(cvec)
                return True
            drop_column(blocker)

    # phase 1: force equalities into the working set
    for e in range(n_eq):
        viol = float(C_eq[e] @ d - b_eq[e])
        sign = 1.0 if viol > 0 else -1.0
        eq_sign[e] = sign
        if not enforce(e, sign * C_eq[e], sign * b_eq[e], True):
            return QpResult("infeasible", d, np.zeros(n_eq), np.zeros(m), [],
                            pivots)

    # phase 2: inequalities
    while True:
        viol = C_in @ d - b_in if m else np.zeros(0)
        for cid in ids:
            if cid >= n_eq:
                viol[cid - n_eq] = 0.0  # working rows are exact
        p = int(np.argmax(viol)) if m else -1
        if p < 0 or viol[p] <= tol:
            break
        if not enforce(p + n_eq, C_in[p], b_in[p], False):
            return QpResult("infeasible", d, np.zeros(n_eq), np.zeros(m), [],
                            pivots)

    lam = np.zeros(n_eq)
    mu = np.zeros(m)
    for j, cid in enumerate(ids):
        if cid < n_eq:
            lam[cid] = eq_sign[cid] * u[j]
        else:
            mu[cid - n_eq] = u[j]
    ws = sorted(cid - n_eq for cid in ids if cid >= n_eq)
    return QpResult("optimal", d, lam, mu, ws, pivots)
