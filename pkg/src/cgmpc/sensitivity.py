"""Lagrangian values, the policy-quality indicator, and curvature extraction.

The indicator for a candidate first input u is the Lagrangian gap
dL(u, p) = L([u, wbar*], lam*, mu*, p) - L(w*, lam*, mu*, p), which is zero
at the optimum and locally nonnegative. Around u* it is modelled by the
quadratic form du' L_uu du, so L_uu here is the quadratic Taylor
coefficient: half the reduced Hessian of L with respect to the first input.
That normalization makes the model exact on quadratic problems and gives
the cubic remainder bound (M_H/6)|du|^3 its standard form; the cost-guided
loss is invariant to it because gamma rescales by the same factor.

Curvature reduction has two modes. DIRECT takes the first-input block of
the Lagrangian Hessian with the tail plan frozen, matching what the
indicator actually varies. IFT eliminates constraint-coupled tail variables
through the implicit function theorem on the active constraints.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .nlp_solver import detect_active_set
from . import ocp

MODE_DIRECT = "direct"
MODE_IFT = "ift"


@dataclass
class SensitivityRecord:
    L_uu: np.ndarray          # n_u x n_u quadratic-model coefficient
    active_set: np.ndarray
    hessian_norm: float       # spectral norm of L_uu
    mode: str
    sc_violations: np.ndarray = None


@dataclass
class BoundEstimate:
    """Sampled stand-ins for the existential constants in the loss bounds."""

    M_Hs: float               # sup of sampled Hessian-Lipschitz constants
    M_Js: float               # sup of sampled gradient-Lipschitz constants
    epsilon: float            # max fitting error; filled by the certificate
    rho: float                # largest tested radius with stable active sets


def lagrangian(w, lam, mu, problem):
    """L = J + lam'c + mu'g evaluated at w."""
    ev = problem.fused(np.asarray(w, dtype=float), order=0)
    L = ev.J
    if ev.c.size and np.size(lam):
        L += float(np.atleast_1d(lam) @ ev.c)
    if ev.g.size and np.size(mu):
        L += float(np.atleast_1d(mu) @ ev.g)
    return L


def grad_lagrangian(w, lam, mu, problem):
    ev = problem.fused(np.asarray(w, dtype=float), order=1)
    r = ev.grad.copy()
    if ev.jac_c.shape[0] and np.size(lam):
        r += ev.jac_c.T @ np.atleast_1d(lam)
    if ev.jac_g.shape[0] and np.size(mu):
        r += ev.jac_g.T @ np.atleast_1d(mu)
    return r


def _compose(u, sample):
    u = np.atleast_1d(np.asarray(u, dtype=float))
    return np.concatenate([u, sample.w_bar_star])


def delta_lagrangian(u, sample, problem, radius=None):
    """Lagrangian gap of first input u against the sample's optimum.

    The tail plan and multipliers stay at their optimal values. Callers are
    responsible for staying inside the active-set stability radius; a known
    radius can be passed to get a warning on violations.
    """
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if radius is not None and np.linalg.norm(u - sample.u_star) > radius:
        warnings.warn("perturbation exceeds the active-set stability radius",
                      RuntimeWarning)
    w_pert = _compose(u, sample)
    w_star = _compose(sample.u_star, sample)
    base = lagrangian(w_star, sample.lam, sample.mu, problem)
    return lagrangian(w_pert, sample.lam, sample.mu, problem) - base


def _greedy_pivot_columns(M, count):
    """Indices of `count` well-conditioned columns of M (modified
    Gram-Schmidt with column pivoting). Returns None when M is rank
    deficient at the needed count."""
    M = M.copy()
    n = M.shape[1]
    chosen = []
    for _ in range(count):
        norms = np.linalg.norm(M, axis=0)
        j = int(np.argmax(norms))
        if norms[j] <= 1e-10:
            return None
        chosen.append(j)
        q = M[:, j] / norms[j]
        M -= np.outer(q, q @ M)
        M[:, chosen] = 0.0
    return np.array(sorted(chosen))


def reduced_hessian(kkt, problem, mode=MODE_DIRECT, fd_step=1e-5):
    """Quadratic-model coefficient L_uu(p) at a solved KKT point."""
    w = np.asarray(kkt.w_star, dtype=float)
    lam, mu = kkt.lam, kkt.mu
    n_u, n_w = problem.n_u, problem.n_w
    ev = problem.fused(w, order=1)

    g0 = grad_lagrangian(w, lam, mu, problem)
    if np.linalg.norm(g0, np.inf) > 1e-5:
        raise ValueError("point is not stationary enough for curvature "
                         f"extraction (|grad L| = {np.linalg.norm(g0, np.inf):.2e})")

    if ev.g.size:
        active, sc = detect_active_set(ev.g, mu)
    else:
        active, sc = np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    if sc.size:
        warnings.warn(f"strict complementarity violated on rows {sc.tolist()}",
                      RuntimeWarning)

    used_mode = mode
    Z = None
    if mode == MODE_IFT:
        rows = []
        if ev.jac_c.shape[0]:
            rows.append(ev.jac_c)
        if active.size:
            rows.append(ev.jac_g[active])
        if rows:
            Jh = np.concatenate(rows, axis=0)
            n_h = min(Jh.shape[0], n_w - n_u)
            cols = _greedy_pivot_columns(Jh[:, n_u:], n_h) if n_h else np.zeros(0, dtype=int)
            if cols is None:
                warnings.warn("singular constraint block; falling back to "
                              "direct reduction", RuntimeWarning)
                used_mode = MODE_DIRECT
            else:
                Jh_c = Jh[:, n_u + cols]
                T = (-np.linalg.lstsq(Jh_c, Jh[:, :n_u], rcond=None)[0]
                     if n_h else np.zeros((0, n_u)))
                Z = np.zeros((n_w, n_u))
                Z[:n_u] = np.eye(n_u)
                Z[n_u + cols] = T
        else:
            used_mode = MODE_IFT  # no active constraints: reduces to direct block

    if Z is None:
        Z = np.zeros((n_w, n_u))
        Z[:n_u] = np.eye(n_u)

    H = np.empty((n_u, n_u))
    for j in range(n_u):
        dw = fd_step * Z[:, j]
        gp = grad_lagrangian(w + dw, lam, mu, problem)
        gm = grad_lagrangian(w - dw, lam, mu, problem)
        H[:, j] = Z.T @ ((gp - gm) / (2.0 * fd_step))
    H = 0.5 * (H + H.T)
    L_uu = 0.5 * H  # quadratic Taylor coefficient

    eigs = np.linalg.eigvalsh(L_uu)
    norm = float(np.max(np.abs(eigs))) if n_u else 0.0
    if eigs.size and eigs[0] < -1e-8 * max(1.0, norm):
        warnings.warn("reduced curvature is not positive semidefinite "
                      f"(min eig {eigs[0]:.2e})", RuntimeWarning)
    return SensitivityRecord(L_uu=L_uu, active_set=active, hessian_norm=norm,
                             mode=used_mode, sc_violations=sc)


def gamma(records):
    """sup over samples of the curvature spectral norm."""
    records = list(records)
    if not records:
        raise ValueError("gamma of an empty record list is undefined")
    return float(max(r.hessian_norm for r in records))


def _first_input_grad_fn(sample, problem):
    """phi'(u) evaluator at points u (M, n_u); exact via problem jacobians.

    Uses the batched rollout path when the problem is a scalar-input
    shooting instance, otherwise falls back to per-point evaluations.
    """
    spec = problem.meta.get("spec")
    n_u = problem.n_u
    if spec is not None and problem.n_eq == 0 and spec.model.n_u == 1:
        def make(points):
            M = points.shape[0]
            batch = ocp.FirstInputBatch(
                spec,
                np.tile(sample.x, (M, 1)),
                np.tile(sample.w_bar_star, (M, 1)),
                np.tile(sample.mu, (M, 1)),
            )
            _, dL = batch(points[:, 0])
            return dL[:, None]
        return make

    def make(points):
        out = np.empty((points.shape[0], n_u))
        for i, u in enumerate(points):
            w_pert = _compose(u, sample)
            out[i] = grad_lagrangian(w_pert, sample.lam, sample.mu,
                                     problem)[:n_u]
        return out
    return make


def _activity_pattern(u, sample, problem, tol_act):
    w_pert = _compose(u, sample)
    g = problem.fused(w_pert, order=0).g
    return frozenset(np.flatnonzero(g > -tol_act).tolist())


def estimate_bounds(dataset, problems, radius, pairs=50, seed=0, tol_act=1e-6):
    """Sampled Lipschitz constants of the first-input Lagrangian.

    For each sample, `pairs` point pairs are drawn in the radius ball around
    u*; M_J(p) is the sup of gradient-difference ratios (floored by the
    exactly known curvature 2|L_uu| at the optimum) and M_H(p) the sup of
    Hessian-difference ratios, with Hessians from central differences of the
    exact gradient. rho is the largest tested radius at which no sampled
    point changed the constraint activity pattern.
    """
    rng = np.random.default_rng(seed)
    M_Hs, M_Js = 0.0, 0.0
    rho = radius
    samples = dataset.samples if hasattr(dataset, "samples") else dataset
    for sample, problem in zip(samples, problems):
        n_u = problem.n_u
        u0 = np.atleast_1d(sample.u_star)
        P = 2 * pairs
        dirs = rng.normal(size=(P, n_u))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        radii = rng.uniform(0.0, radius, size=P)
        pts = u0 + dirs * radii[:, None]
        delta = 1e-3 * max(radius, 1e-6)

        grad_at = _first_input_grad_fn(sample, problem)
        stacked = [pts]
        for j in range(n_u):
            e = np.zeros(n_u)
            e[j] = delta
            stacked.append(pts + e)
            stacked.append(pts - e)
        all_grads = grad_at(np.concatenate(stacked, axis=0))
        gr = all_grads[:P]
        hess = np.empty((P, n_u, n_u))
        for j in range(n_u):
            gp = all_grads[(1 + 2 * j) * P:(2 + 2 * j) * P]
            gm = all_grads[(2 + 2 * j) * P:(3 + 2 * j) * P]
            hess[:, :, j] = (gp - gm) / (2.0 * delta)
        hess = 0.5 * (hess + np.transpose(hess, (0, 2, 1)))

        a, b = pts[0::2], pts[1::2]
        gaps = np.linalg.norm(a - b, axis=1)
        keep = gaps > 1e-12
        mj = 0.0
        mh = 0.0
        if np.any(keep):
            dg = np.linalg.norm(gr[0::2] - gr[1::2], axis=1)
            mj = float(np.max(dg[keep] / gaps[keep]))
            dh = np.linalg.norm(hess[0::2] - hess[1::2], axis=(1, 2))
            mh = float(np.max(dh[keep] / gaps[keep]))
        if getattr(sample, "sens", None) is not None:
            mj = max(mj, 2.0 * sample.sens.hessian_norm)
        M_Js = max(M_Js, mj)
        M_Hs = max(M_Hs, mh)

        if problem.n_ineq:
            base = _activity_pattern(u0, sample, problem, tol_act)
            r = radius
            while r > 1e-12:
                changed = False
                for sgn in (-1.0, 1.0):
                    probe = u0 + sgn * r * np.ones(n_u) / np.sqrt(n_u)
                    if _activity_pattern(probe, sample, problem, tol_act) != base:
                        changed = True
                        break
                if not changed:
                    break
                r *= 0.5
            rho = min(rho, r)

    return BoundEstimate(M_Hs=M_Hs, M_Js=M_Js, epsilon=0.0, rho=rho)
