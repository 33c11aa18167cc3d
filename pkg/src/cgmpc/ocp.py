"""Horizon-N tracking OCP assembled as a parametric NLP via single shooting.

Decision vector w stacks the inputs [u(0), ..., u(N-1)]; states are
eliminated by forward simulation, so the equality block c(w, p) is empty and
the inequality block g(w, p) stacks input-box, path state-box and terminal
constraints. First derivatives are exact: per-period sensitivities A_k, B_k
come from forward-mode duals (or the compiled CSTR kernels) and are chained
into the cost gradient and constraint Jacobian.
"""

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from . import dynamics
from .dynamics import DomainError, IntegratorConfig, PlantModel

TERMINAL_STATE_COST_BOX = "state_cost_box"  # lf(x) = |x - x_sp|^2, X_f = X
TERMINAL_ZERO_BOX = "zero_box"              # lf(x) = 0,            X_f = X

_TERMINALS = (TERMINAL_STATE_COST_BOX, TERMINAL_ZERO_BOX)


@dataclass(frozen=True)
class OcpSpec:
    model: PlantModel
    N: int
    integ: IntegratorConfig
    x_sp: np.ndarray
    u_e: np.ndarray
    input_weight: float
    x_lo: np.ndarray
    x_hi: np.ndarray
    u_lo: np.ndarray
    u_hi: np.ndarray
    terminal: str = TERMINAL_STATE_COST_BOX

    def __post_init__(self):
        for name in ("x_sp", "u_e", "x_lo", "x_hi", "u_lo", "u_hi"):
            object.__setattr__(self, name,
                               np.asarray(getattr(self, name), dtype=float))
        if self.N < 1:
            raise ValueError("horizon must be >= 1")
        if self.terminal not in _TERMINALS:
            raise ValueError(f"unknown terminal kind {self.terminal!r}")
        if not np.all(self.x_lo < self.x_hi):
            raise ValueError("x_lo must be strictly below x_hi")
        if not np.all(self.u_lo < self.u_hi):
            raise ValueError("u_lo must be strictly below u_hi")
        if not (np.all(self.x_sp > self.x_lo) and np.all(self.x_sp < self.x_hi)):
            raise ValueError("setpoint must lie strictly inside the state box")

    @property
    def n_w(self):
        return self.N * self.model.n_u

    @property
    def n_ineq(self):
        # input box + path state box (k = 1..N-1) + terminal box
        return 2 * self.N * self.model.n_u + 2 * self.N * self.model.n_x

    def fingerprint(self):
        model = self.model
        data = {
            "model": type(model).__name__,
            "params": [float(v) for v in np.atleast_1d(model.params())]
            if hasattr(model, "params")
            else repr(model.__dict__),
            "N": self.N,
            "dt": self.integ.dt,
            "substeps": self.integ.substeps,
            "x_sp": self.x_sp.tolist(),
            "u_e": self.u_e.tolist(),
            "input_weight": self.input_weight,
            "x_lo": self.x_lo.tolist(),
            "x_hi": self.x_hi.tolist(),
            "u_lo": self.u_lo.tolist(),
            "u_hi": self.u_hi.tolist(),
            "terminal": self.terminal,
        }
        blob = json.dumps(data, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def stage_cost(x, u, spec):
    """Quadratic tracking cost |x - x_sp|^2 + w_u |u - u_e|^2."""
    dx = np.asarray(x, dtype=float) - spec.x_sp
    du = np.atleast_1d(np.asarray(u, dtype=float)) - spec.u_e
    return float(dx @ dx + spec.input_weight * (du @ du))


def terminal_cost(x, spec):
    if spec.terminal == TERMINAL_ZERO_BOX:
        return 0.0
    dx = np.asarray(x, dtype=float) - spec.x_sp
    return float(dx @ dx)


@dataclass
class FusedEval:
    """One evaluation of the NLP callbacks at a fixed w."""

    J: float
    c: np.ndarray
    g: np.ndarray
    grad: np.ndarray = None
    jac_c: np.ndarray = None
    jac_g: np.ndarray = None
    traj: np.ndarray = None


class NlpProblem:
    """Parametric NLP  min_w J(w, p)  s.t.  c(w, p) = 0,  g(w, p) <= 0.

    Wraps a fused evaluator `fused(w, order)` returning a FusedEval with
    first derivatives when order >= 1. Piecewise accessors (cost, eq, ineq
    and their derivative oracles) share a one-slot cache so solver loops do
    not re-simulate.
    """

    def __init__(self, p, n_w, n_eq, n_ineq, fused, n_u=None, meta=None):
        self.p = np.atleast_1d(np.asarray(p, dtype=float))
        self.n_w = n_w
        self.n_eq = n_eq
        self.n_ineq = n_ineq
        self.n_u = n_u if n_u is not None else n_w
        self._fused = fused
        self.meta = meta or {}
        self._cache_key = None
        self._cache_val = None

    def fused(self, w, order=1):
        w = np.asarray(w, dtype=float)
        key = (w.tobytes(), order >= 1)
        if self._cache_key == key:
            return self._cache_val
        ev = self._fused(w, order)
        # an order-1 eval also answers later order-0 queries at the same w
        self._cache_key = (w.tobytes(), True) if ev.grad is not None else key
        self._cache_val = ev
        return ev

    def cost(self, w):
        return self.fused(w, order=0).J

    def eq(self, w):
        return self.fused(w, order=0).c

    def ineq(self, w):
        return self.fused(w, order=0).g

    def grad_cost(self, w):
        return self.fused(w, order=1).grad

    def jac_eq(self, w):
        return self.fused(w, order=1).jac_c

    def jac_ineq(self, w):
        return self.fused(w, order=1).jac_g

    @classmethod
    def from_callables(cls, p, n_w, cost, grad_cost, eq=None, jac_eq=None,
                       ineq=None, jac_ineq=None, n_u=None, meta=None):
        """Assemble a problem from plain callables (synthetic benchmarks)."""
        p = np.atleast_1d(np.asarray(p, dtype=float))
        probe = np.zeros(n_w)
        n_eq = 0 if eq is None else len(np.atleast_1d(eq(probe)))
        n_ineq = 0 if ineq is None else len(np.atleast_1d(ineq(probe)))

        def fused(w, order):
            c = (np.zeros(0) if eq is None
                 else np.atleast_1d(np.asarray(eq(w), dtype=float)))
            g = (np.zeros(0) if ineq is None
                 else np.atleast_1d(np.asarray(ineq(w), dtype=float)))
            ev = FusedEval(J=float(cost(w)), c=c, g=g)
            if order >= 1:
                ev.grad = np.asarray(grad_cost(w), dtype=float)
                ev.jac_c = (np.zeros((0, n_w)) if jac_eq is None
                            else np.atleast_2d(np.asarray(jac_eq(w), dtype=float)))
                ev.jac_g = (np.zeros((0, n_w)) if jac_ineq is None
                            else np.atleast_2d(np.asarray(jac_ineq(w), dtype=float)))
            return ev

        return cls(p, n_w, n_eq, n_ineq, fused, n_u=n_u, meta=meta)


def _rollout_generic(spec, p, us, order):
    """Dual-number reference path: trajectory and per-period A_k, B_k."""
    model, cfg, N = spec.model, spec.integ, spec.N
    traj = np.empty((N + 1, model.n_x))
    traj[0] = p
    A = np.empty((N, model.n_x, model.n_x)) if order >= 1 else None
    B = np.empty((N, model.n_x, model.n_u)) if order >= 1 else None
    x = p
    for k in range(N):
        if order >= 1:
            x, A[k], B[k] = dynamics.step_with_jac(model, x, us[k], cfg)
        else:
            x = dynamics.step(model, x, us[k], cfg)
        traj[k + 1] = x
    return traj, A, B


def _rollout_kernel(kern, spec, p, us, order):
    params = spec.model.params()
    h = spec.integ.dt / spec.integ.substeps
    flat = np.ascontiguousarray(us[:, 0])
    if order >= 1:
        traj, A, Bm, ok = kern["rollout_jac"](params, p, flat, h,
                                              spec.integ.substeps)
        if not ok:
            raise DomainError("trajectory left the model domain")
        return traj, A, Bm[:, :, None]
    traj, ok = kern["rollout_value"](params, p, flat, h, spec.integ.substeps)
    if not ok:
        raise DomainError("trajectory left the model domain")
    return traj, None, None


def rollout(spec, p, w, order=0):
    us = np.asarray(w, dtype=float).reshape(spec.N, spec.model.n_u)
    kern = spec.model.kernels()
    if kern is not None:
        return _rollout_kernel(kern, spec, p, us, order)
    return _rollout_generic(spec, p, us, order)


def _cost_from_traj(spec, traj, us):
    dx = traj[: spec.N] - spec.x_sp
    du = us - spec.u_e
    J = float(np.sum(dx * dx) + spec.input_weight * np.sum(du * du))
    if spec.terminal == TERMINAL_STATE_COST_BOX:
        dN = traj[spec.N] - spec.x_sp
        J += float(dN @ dN)
    return J


def rollout_cost(w, p, spec):
    """Simulate from x(0) = p under the input plan w; return (J, trajectory)."""
    p = np.asarray(p, dtype=float)
    w = np.asarray(w, dtype=float)
    if w.size != spec.n_w:
        raise ValueError(f"decision vector must have length {spec.n_w}")
    traj, _, _ = rollout(spec, p, w, order=0)
    us = w.reshape(spec.N, spec.model.n_u)
    return _cost_from_traj(spec, traj, us), traj


def _stack_g(spec, traj, us):
    lo_u = (spec.u_lo - us).ravel()
    hi_u = (us - spec.u_hi).ravel()
    path = traj[1: spec.N]
    lo_x = (spec.x_lo - path).ravel()
    hi_x = (path - spec.x_hi).ravel()
    lo_t = spec.x_lo - traj[spec.N]
    hi_t = traj[spec.N] - spec.x_hi
    return np.concatenate([lo_u, hi_u, lo_x, hi_x, lo_t, hi_t])


def _ineq_jacobian(spec, S):
    N, n_x, n_u, n_w = spec.N, spec.model.n_x, spec.model.n_u, spec.n_w
    I = np.eye(n_w)
    path = S[1:N].reshape((N - 1) * n_x, n_w)
    return np.concatenate([-I, I, -path, path, -S[N], S[N]], axis=0)


def build_nlp(spec, p):
    """Instantiate the parametric NLP P(p) for initial state p in X."""
    p = np.asarray(p, dtype=float)
    if p.shape != spec.x_sp.shape:
        raise ValueError("parameter dimension mismatch")
    if np.any(p < spec.x_lo - 1e-12) or np.any(p > spec.x_hi + 1e-12):
        raise ValueError(f"initial state {p} outside the state box")
    N, n_x, n_u, n_w = spec.N, spec.model.n_x, spec.model.n_u, spec.n_w

    def fused(w, order):
        us = w.reshape(N, n_u)
        traj, A, B = rollout(spec, p, w, order)
        ev = FusedEval(
            J=_cost_from_traj(spec, traj, us),
            c=np.zeros(0),
            g=_stack_g(spec, traj, us),
            traj=traj,
        )
        if order >= 1:
            S = np.zeros((N + 1, n_x, n_w))
            for k in range(N):
                S[k + 1] = A[k] @ S[k]
                S[k + 1, :, k * n_u:(k + 1) * n_u] += B[k]
            grad = 2.0 * np.einsum("ki,kij->j", traj[:N] - spec.x_sp, S[:N])
            grad += (2.0 * spec.input_weight * (us - spec.u_e)).ravel()
            if spec.terminal == TERMINAL_STATE_COST_BOX:
                grad += 2.0 * (traj[N] - spec.x_sp) @ S[N]
            ev.grad = grad
            ev.jac_c = np.zeros((0, n_w))
            ev.jac_g = _ineq_jacobian(spec, S)
        return ev

    meta = {
        "spec": spec,
        "g_order": "u_lo, u_hi, x_lo[1:N-1], x_hi[1:N-1], xN_lo, xN_hi",
    }
    return NlpProblem(p, n_w, 0, spec.n_ineq, fused, n_u=n_u, meta=meta)


class FirstInputBatch:
    """Batched Lagrangian-vs-first-input evaluations.

    Holds M rollout settings (x_i, tail plan w̄_i, multipliers μ_i) and maps a
    matrix of first inputs U (M, n_u) to the Lagrangian values
    L([u_i, w̄_i], λ_i, μ_i, p_i) and their exact du gradients. Used by the
    Lagrangian training loss and by the Lipschitz-constant estimators, where
    per-sample loops would be prohibitively slow.
    """

    def __init__(self, spec, xs, w_bars, mus):
        self.spec = spec
        self.xs = np.ascontiguousarray(np.atleast_2d(xs), dtype=float)
        self.w_bars = np.ascontiguousarray(np.atleast_2d(w_bars), dtype=float)
        self.mus = np.ascontiguousarray(np.atleast_2d(mus), dtype=float)
        self.M = self.xs.shape[0]
        if spec.model.n_u != 1:
            raise NotImplementedError("batched path assumes scalar inputs")
        self._kern = spec.model.kernels()

    def __call__(self, u0s):
        """Return (L (M,), dL/du (M,)) at first inputs u0s (M,)."""
        spec = self.spec
        u0s = np.asarray(u0s, dtype=float).reshape(self.M)
        us = np.concatenate([u0s[:, None], self.w_bars], axis=1)
        if self._kern is not None:
            h = spec.integ.dt / spec.integ.substeps
            trajs, dtraj, ok = self._kern["rollout_batch_du0"](
                spec.model.params(), self.xs, us, h, spec.integ.substeps)
            if not np.all(ok):
                bad = int(np.flatnonzero(~ok)[0])
                raise DomainError(f"rollout left model domain (sample {bad})")
        else:
            trajs = np.empty((self.M, spec.N + 1, spec.model.n_x))
            dtraj = np.zeros_like(trajs)
            for m in range(self.M):
                traj, A, B = _rollout_generic(spec, self.xs[m],
                                              us[m][:, None], order=1)
                trajs[m] = traj
                t = np.zeros(spec.model.n_x)
                for k in range(spec.N):
                    t = A[k] @ t + (B[k][:, 0] if k == 0 else 0.0)
                    dtraj[m, k + 1] = t
        return self._assemble(trajs, dtraj, us)

    def _assemble(self, trajs, dtraj, us):
        spec = self.spec
        N = spec.N
        dx = trajs[:, :N, :] - spec.x_sp
        du = us - spec.u_e[0]
        J = np.sum(dx * dx, axis=(1, 2)) + spec.input_weight * np.sum(du * du,
                                                                      axis=1)
        dJ = 2.0 * np.sum(dx * dtraj[:, :N, :], axis=(1, 2))
        dJ += 2.0 * spec.input_weight * du[:, 0]
        if spec.terminal == TERMINAL_STATE_COST_BOX:
            dN = trajs[:, N, :] - spec.x_sp
            J += np.sum(dN * dN, axis=1)
            dJ += 2.0 * np.sum(dN * dtraj[:, N, :], axis=1)

        # mu^T g and its du derivative, using the g row layout of _stack_g
        n_u, n_x = spec.model.n_u, spec.model.n_x
        m_in = N * n_u
        mus = self.mus
        mu_lo_u = mus[:, :m_in]
        mu_hi_u = mus[:, m_in:2 * m_in]
        rest = mus[:, 2 * m_in:]
        m_path = (N - 1) * n_x
        mu_lo_x = rest[:, :m_path].reshape(self.M, N - 1, n_x)
        mu_hi_x = rest[:, m_path:2 * m_path].reshape(self.M, N - 1, n_x)
        mu_lo_t = rest[:, 2 * m_path:2 * m_path + n_x]
        mu_hi_t = rest[:, 2 * m_path + n_x:]

        path = trajs[:, 1:N, :]
        dpath = dtraj[:, 1:N, :]
        mug = (np.sum(mu_lo_u * (spec.u_lo[0] - us), axis=1)
               + np.sum(mu_hi_u * (us - spec.u_hi[0]), axis=1)
               + np.sum((mu_hi_x - mu_lo_x) * path, axis=(1, 2))
               + np.sum(mu_lo_x * spec.x_lo - mu_hi_x * spec.x_hi, axis=(1, 2))
               + np.sum((mu_hi_t - mu_lo_t) * trajs[:, N, :], axis=1)
               + np.sum(mu_lo_t * spec.x_lo - mu_hi_t * spec.x_hi, axis=1))
        dmug = (mu_hi_u[:, 0] - mu_lo_u[:, 0]
                + np.sum((mu_hi_x - mu_lo_x) * dpath, axis=(1, 2))
                + np.sum((mu_hi_t - mu_lo_t) * dtraj[:, N, :], axis=1))
        return J + mug, dJ + dmug
