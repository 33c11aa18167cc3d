"""Damped-BFGS SQP with an l1 merit line search and active-set QP subproblems.

Solves the parametric NLPs to certified KKT points: on success the returned
point satisfies stationarity, feasibility, nonnegative inequality
multipliers and complementarity at the configured tolerances. A Gauss-Newton
restoration phase handles infeasible QP linearizations and declares
infeasibility when constraint violation is locally stationary but large.
"""

import enum
from dataclasses import dataclass, field

import numpy as np

from .dynamics import DomainError
from .qp import QpNumericalError, solve_qp


class Flag(enum.Enum):
    SUCCEEDED = "succeeded"
    INFEASIBLE = "infeasible"
    MAX_ITER = "max_iter"
    NUMERICAL_FAILURE = "numerical_failure"


@dataclass(frozen=True)
class SolverConfig:
    tol_kkt: float = 1e-6
    tol_feas: float = 1e-8
    tol_act: float = 1e-6
    tol_mu: float = 1e-6
    tol_comp: float = 1e-6
    max_iter: int = 200

    def as_dict(self):
        return {
            "tol_kkt": self.tol_kkt, "tol_feas": self.tol_feas,
            "tol_act": self.tol_act, "tol_mu": self.tol_mu,
            "tol_comp": self.tol_comp, "max_iter": self.max_iter,
        }


@dataclass
class KktPoint:
    w_star: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    active_set: np.ndarray
    J_star: float
    kkt_residual: float


@dataclass
class SolveStatus:
    flag: Flag
    iterations: int
    kkt_residual: float = np.inf
    feas_residual: float = np.inf
    comp_residual: float = np.inf
    message: str = ""
    B: np.ndarray = None  # final BFGS matrix, reusable as a warm start


def detect_active_set(g_values, mu, tol_act=1e-6, tol_mu=1e-6):
    """Active set by value-or-multiplier rule.

    i is active iff |g_i| <= tol_act or mu_i >= tol_mu. Rows that are active
    by value but carry a vanishing multiplier violate strict complementarity
    and are reported separately.
    """
    g_values = np.atleast_1d(np.asarray(g_values, dtype=float))
    mu = np.atleast_1d(np.asarray(mu, dtype=float))
    if g_values.shape != mu.shape:
        raise ValueError("g and mu must have equal length")
    near = np.abs(g_values) <= tol_act
    strong = mu >= tol_mu
    active = np.flatnonzero(near | strong)
    sc_violations = np.flatnonzero(near & ~strong)
    return active, sc_violations


def _stationarity(ev, lam, mu):
    r = ev.grad.copy()
    if ev.jac_c.shape[0]:
        r += ev.jac_c.T @ lam
    if ev.jac_g.shape[0]:
        r += ev.jac_g.T @ mu
    return r


def kkt_residual(s, problem, tol_act=1e-6, tol_mu=1e-6):
    """Max-norm of the KKT system [grad_w L; c; g_active] at s = (w, lam, mu)."""
    w, lam, mu = s
    w = np.asarray(w, dtype=float)
    lam = np.atleast_1d(np.asarray(lam, dtype=float)) if np.size(lam) else np.zeros(0)
    mu = np.atleast_1d(np.asarray(mu, dtype=float)) if np.size(mu) else np.zeros(0)
    ev = problem.fused(w, order=1)
    parts = [np.abs(_stationarity(ev, lam, mu))]
    if ev.c.size:
        parts.append(np.abs(ev.c))
    if ev.g.size:
        active, _ = detect_active_set(ev.g, mu, tol_act, tol_mu)
        if active.size:
            parts.append(np.abs(ev.g[active]))
    return float(np.max(np.concatenate(parts)))


def _violation_inf(ev):
    v = 0.0
    if ev.c.size:
        v = float(np.max(np.abs(ev.c)))
    if ev.g.size:
        v = max(v, float(np.max(ev.g, initial=0.0)))
    return v


def _violation_l1(ev):
    v = 0.0
    if ev.c.size:
        v += float(np.sum(np.abs(ev.c)))
    if ev.g.size:
        v += float(np.sum(np.maximum(ev.g, 0.0)))
    return v


def _restore(problem, w, cfg, max_rounds=60):
    """Gauss-Newton descent on 0.5(|c|^2 + |g+|^2).

    Returns (w, feasible_enough, stationary). `stationary` with a large
    violation is the infeasibility certificate.
    """
    w = w.copy()
    for _ in range(max_rounds):
        try:
            ev = problem.fused(w, order=1)
        except DomainError:
            return w, False, False
        viol = _violation_inf(ev)
        if viol <= cfg.tol_feas:
            return w, True, False
        res = []
        jac = []
        if ev.c.size:
            res.append(ev.c)
            jac.append(ev.jac_c)
        if ev.g.size:
            bad = ev.g > 0.0
            if np.any(bad):
                res.append(ev.g[bad])
                jac.append(ev.jac_g[bad])
        if not res:
            return w, True, False
        r = np.concatenate(res)
        J = np.concatenate(jac, axis=0)
        grad = J.T @ r
        if np.linalg.norm(grad, np.inf) <= 1e-13 * (1.0 + float(r @ r)):
            return w, viol <= cfg.tol_feas, True
        H = J.T @ J + 1e-10 * np.eye(w.size)
        try:
            d = np.linalg.solve(H, -grad)
        except np.linalg.LinAlgError:
            d = -grad
        v0 = 0.5 * float(r @ r)
        alpha, accepted = 1.0, False
        while alpha >= 1e-12:
            try:
                ev_t = problem.fused(w + alpha * d, order=0)
            except DomainError:
                alpha *= 0.5
                continue
            c2 = float(ev_t.c @ ev_t.c) if ev_t.c.size else 0.0
            gp = np.maximum(ev_t.g, 0.0) if ev_t.g.size else np.zeros(0)
            v_t = 0.5 * (c2 + float(gp @ gp))
            if v_t <= v0 * (1.0 - 1e-4 * alpha) + 1e-300:
                w = w + alpha * d
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            return w, viol <= cfg.tol_feas, True
    return w, False, False


def solve(problem, w0, cfg=None, warm_B=None):
    """Solve to a KKT point; returns (KktPoint, SolveStatus).

    `warm_B` lets callers chain the BFGS Hessian approximation across
    neighbouring problems (grid rows, receding-horizon steps).
    """
    cfg = cfg or SolverConfig()
    w = np.asarray(w0, dtype=float).copy()
    if not np.all(np.isfinite(w)):
        raise ValueError("initial guess contains non-finite entries")
    n = problem.n_w
    B = np.asarray(warm_B, dtype=float).copy() if warm_B is not None else np.eye(n)

    def failed_point():
        return KktPoint(w.copy(), np.zeros(problem.n_eq),
                        np.zeros(problem.n_ineq), np.zeros(0, dtype=int),
                        np.nan, np.inf)

    try:
        ev = problem.fused(w, order=1)
    except DomainError as exc:
        return failed_point(), SolveStatus(Flag.NUMERICAL_FAILURE, 0,
                                           message=str(exc))

    nu = 1.0
    restorations = 0
    for it in range(1, cfg.max_iter + 1):
        try:
            res = solve_qp(B, ev.grad, ev.jac_c, -ev.c, ev.jac_g, -ev.g)
        except QpNumericalError as exc:
            return failed_point(), SolveStatus(Flag.NUMERICAL_FAILURE, it, message=str(exc))

        if res.status == "infeasible":
            restorations += 1
            w_new, feasible, stationary = _restore(problem, w, cfg)
            viol = np.inf
            try:
                ev = problem.fused(w_new, order=1)
                viol = _violation_inf(ev)
            except DomainError:
                pass
            w = w_new
            B = np.eye(n)
            if stationary and viol > cfg.tol_feas * 1e3:
                return failed_point(), SolveStatus(
                    Flag.INFEASIBLE, it, feas_residual=viol,
                    message="restoration stationary at infeasible point")
            if restorations > 4 or not np.isfinite(viol):
                return failed_point(), SolveStatus(
                    Flag.NUMERICAL_FAILURE, it, feas_residual=viol,
                    message="restoration did not recover a usable iterate")
            continue

        d, lam, mu = res.d, res.lam, res.mu

        stat = np.linalg.norm(_stationarity(ev, lam, mu), np.inf)
        active, _ = detect_active_set(ev.g, mu, cfg.tol_act, cfg.tol_mu) \
            if ev.g.size else (np.zeros(0, dtype=int), None)
        psi = stat
        if ev.c.size:
            psi = max(psi, float(np.max(np.abs(ev.c))))
        if ev.g.size and active.size:
            psi = max(psi, float(np.max(np.abs(ev.g[active]))))
        feas = _violation_inf(ev)
        comp = float(np.max(np.abs(mu * ev.g))) if ev.g.size else 0.0
        if psi <= cfg.tol_kkt and feas <= cfg.tol_feas and comp <= cfg.tol_comp:
            point = KktPoint(w.copy(), lam, mu, active, ev.J, psi)
            status = SolveStatus(Flag.SUCCEEDED, it - 1, psi, feas, comp)
            status.B = B
            return point, status

        # l1 merit line search
        mult = max(
            float(np.max(np.abs(lam), initial=0.0)),
            float(np.max(mu, initial=0.0)),
        )
        nu = max(nu, 2.0 * mult + 0.1)
        viol0 = _violation_l1(ev)
        phi0 = ev.J + nu * viol0
        D = float(ev.grad @ d) - nu * viol0
        alpha, w_new, accepted = 1.0, w, False
        while alpha >= 1e-12:
            cand = w + alpha * d
            try:
                ev_t = problem.fused(cand, order=0)
            except DomainError:
                alpha *= 0.5
                continue
            if ev_t.J + nu * _violation_l1(ev_t) <= phi0 + 1e-4 * alpha * D:
                w_new, accepted = cand, True
                break
            alpha *= 0.5
        if not accepted:
            restorations += 1
            w_rest, feasible, stationary = _restore(problem, w, cfg)
            if stationary and not feasible:
                viol = _violation_inf(problem.fused(w_rest, order=0))
                if viol > cfg.tol_feas * 1e3:
                    return failed_point(), SolveStatus(
                        Flag.INFEASIBLE, it, feas_residual=viol,
                        message="line search stalled; restoration stationary")
            if np.allclose(w_rest, w) or restorations > 4:
                return failed_point(), SolveStatus(
                    Flag.NUMERICAL_FAILURE, it, psi, feas, comp,
                    message="merit line search stalled")
            w = w_rest
            ev = problem.fused(w, order=1)
            B = np.eye(n)
            continue

        try:
            ev_new = problem.fused(w_new, order=1)
        except DomainError as exc:
            return failed_point(), SolveStatus(Flag.NUMERICAL_FAILURE, it, message=str(exc))

        # damped BFGS on the Lagrangian gradient
        s = w_new - w
        y = _stationarity(ev_new, lam, mu) - _stationarity(ev, lam, mu)
        Bs = B @ s
        sBs = float(s @ Bs)
        sy = float(s @ y)
        if sBs > 0.0:
            if sy < 0.2 * sBs:
                theta = 0.8 * sBs / (sBs - sy)
                y = theta * y + (1.0 - theta) * Bs
                sy = float(s @ y)
            if sy > 1e-14 * sBs:
                B = B + np.outer(y, y) / sy - np.outer(Bs, Bs) / sBs
        w, ev = w_new, ev_new

    psi = np.inf
    return failed_point(), SolveStatus(Flag.MAX_ITER, cfg.max_iter,
                              feas_residual=_violation_inf(ev),
                              message="iteration limit reached")
