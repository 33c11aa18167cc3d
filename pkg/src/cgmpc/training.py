"""Training of the policy network under the three losses.

 - MSE:          mean squared action error (error-guided)
 - LAG:          mean squared Lagrangian gap (exact indicator)
 - COST_GUIDED:  gamma-normalized mean absolute curvature-weighted
                 quadratic form (cost-guided)

Full-batch Adam with cosine learning-rate decay; fixed seeds and fixed-order
reductions keep trained parameters bit-reproducible. The LAG loss
differentiates through the full rollout of every sample each iteration (the
expensive route by construction); the batched rollout path keeps it
tractable and per-loss wall times are recorded rather than hidden.
"""

import enum
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import policy as policy_mod
from . import sensitivity
from .ocp import FirstInputBatch


class LossKind(enum.Enum):
    MSE = "mse"
    LAG = "lag"
    COST_GUIDED = "w"


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 2500
    lr: float = 1e-2
    lr_final: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    seed: int = 0
    hidden: tuple = (5, 5, 5)

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")


def _xu(dataset):
    X = np.stack([s.x for s in dataset.samples])
    U = np.stack([s.u_star for s in dataset.samples])
    return X, U


def _outputs(policy, X):
    return np.atleast_2d(policy.forward_batch(X))


def loss_mse(policy, dataset):
    """Mean squared action error over the dataset."""
    if not dataset.samples:
        raise ValueError("empty dataset")
    X, U = _xu(dataset)
    r = _outputs(policy, X) - U
    return float(np.mean(np.sum(r * r, axis=1)))


def _quad_forms(dataset, r):
    L = np.stack([s.sens.L_uu for s in dataset.samples])
    return np.einsum("mi,mij,mj->m", r, L, r)


def loss_w(policy, dataset):
    """Cost-guided loss: mean |dpi' L_uu dpi| / gamma."""
    if not dataset.samples:
        raise ValueError("empty dataset")
    if any(s.sens is None for s in dataset.samples):
        raise ValueError("dataset lacks sensitivity records")
    if not dataset.gamma > 0:
        raise ValueError("gamma is zero; cost-guided loss undefined")
    X, U = _xu(dataset)
    r = _outputs(policy, X) - U
    return float(np.mean(np.abs(_quad_forms(dataset, r))) / dataset.gamma)


class _LagEvaluator:
    """phi_i(u) = L([u, wbar_i*], mults_i, p_i) and d phi/du, batched over
    samples; the gap uses the cached optimal values phi_i(u_i*)."""

    def __init__(self, dataset, problems):
        if problems is None or len(problems) != len(dataset.samples):
            raise ValueError("LAG loss needs one NlpProblem per sample")
        self.samples = dataset.samples
        self.problems = problems
        spec = problems[0].meta.get("spec") if problems else None
        self._batch = None
        if (spec is not None and all(p.n_eq == 0 for p in problems)
                and spec.model.n_u == 1):
            self._batch = FirstInputBatch(
                spec,
                np.stack([s.x for s in self.samples]),
                np.stack([s.w_bar_star for s in self.samples]),
                np.stack([s.mu for s in self.samples]),
            )
        U_star = np.stack([s.u_star for s in self.samples])
        self.base, _ = self._eval(U_star)

    def _eval(self, U):
        if self._batch is not None:
            vals, grads = self._batch(U[:, 0])
            return vals, grads[:, None]
        vals = np.empty(len(self.samples))
        grads = np.empty_like(np.atleast_2d(U), dtype=float)
        for i, (s, prob) in enumerate(zip(self.samples, self.problems)):
            w_pert = np.concatenate([U[i], s.w_bar_star])
            vals[i] = sensitivity.lagrangian(w_pert, s.lam, s.mu, prob)
            grads[i] = sensitivity.grad_lagrangian(
                w_pert, s.lam, s.mu, prob)[:prob.n_u]
        return vals, grads

    def gaps(self, U):
        vals, grads = self._eval(U)
        return vals - self.base, grads


def loss_lag(policy, dataset, problems):
    """Mean squared Lagrangian gap at the policy outputs."""
    if not dataset.samples:
        raise ValueError("empty dataset")
    X, _ = _xu(dataset)
    ev = _LagEvaluator(dataset, problems)
    gaps, _ = ev.gaps(_outputs(policy, X))
    return float(np.mean(gaps ** 2))


@dataclass
class TrainResult:
    policy: policy_mod.MlpPolicy
    curve: list                 # per-iteration dicts
    kind: LossKind
    negative_quadratic: int = 0  # |.| subgradient events in COST_GUIDED

    def __iter__(self):  # (theta_hat, curve) unpacking
        return iter((self.policy, self.curve))


def train(dataset, kind, cfg, problems=None):
    """Full-batch Adam from a seeded Xavier init; returns TrainResult."""
    if not dataset.samples:
        raise ValueError("empty dataset")
    kind = LossKind(kind)
    X, U = _xu(dataset)
    M = X.shape[0]
    net = policy_mod.init(
        cfg.seed,
        [X.shape[1], *cfg.hidden, U.shape[1]],
        x_box=(dataset.x_lo, dataset.x_hi),
        u_box=(dataset.u_lo, dataset.u_hi),
    )

    if kind is LossKind.COST_GUIDED:
        if not dataset.gamma > 0:
            raise ValueError("gamma is zero; cost-guided loss undefined")
        L_uu = np.stack([s.sens.L_uu for s in dataset.samples])
    lag_ev = _LagEvaluator(dataset, problems) if kind is LossKind.LAG else None

    m_w = [np.zeros_like(w) for w in net.weights]
    v_w = [np.zeros_like(w) for w in net.weights]
    m_b = [np.zeros_like(b) for b in net.biases]
    v_b = [np.zeros_like(b) for b in net.biases]

    curve = []
    neg_q = 0
    t0 = time.perf_counter()
    for it in range(cfg.iterations):
        out, acts = policy_mod._forward_tape(net, X)
        r = out - U
        if kind is LossKind.MSE:
            loss = float(np.mean(np.sum(r * r, axis=1)))
            adjoint = 2.0 * r / M
        elif kind is LossKind.COST_GUIDED:
            q = np.einsum("mi,mij,mj->m", r, L_uu, r)
            loss = float(np.mean(np.abs(q)) / dataset.gamma)
            sign = np.sign(q)  # subgradient 0 at q == 0
            neg_q += int(np.sum(q < 0))
            adjoint = (2.0 / (dataset.gamma * M)) * sign[:, None] \
                * np.einsum("mij,mj->mi", L_uu, r)
        else:
            gaps, dphi = lag_ev.gaps(out)
            loss = float(np.mean(gaps ** 2))
            adjoint = (2.0 / M) * gaps[:, None] * dphi

        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at iteration {it}")
        dWs, dbs = policy_mod.backprop(net, acts, adjoint)
        gnorm = float(np.sqrt(sum(float(np.sum(g * g)) for g in dWs + dbs)))
        if not np.isfinite(gnorm):
            raise TrainingError(f"non-finite gradient at iteration {it}")

        frac = it / max(cfg.iterations - 1, 1)
        lr = cfg.lr_final + 0.5 * (cfg.lr - cfg.lr_final) * (1.0 + np.cos(np.pi * frac))
        b1t = 1.0 - cfg.beta1 ** (it + 1)
        b2t = 1.0 - cfg.beta2 ** (it + 1)
        for i in range(net.n_layers):
            m_w[i] = cfg.beta1 * m_w[i] + (1 - cfg.beta1) * dWs[i]
            v_w[i] = cfg.beta2 * v_w[i] + (1 - cfg.beta2) * dWs[i] ** 2
            net.weights[i] -= lr * (m_w[i] / b1t) / (np.sqrt(v_w[i] / b2t) + cfg.eps_adam)
            m_b[i] = cfg.beta1 * m_b[i] + (1 - cfg.beta1) * dbs[i]
            v_b[i] = cfg.beta2 * v_b[i] + (1 - cfg.beta2) * dbs[i] ** 2
            net.biases[i] -= lr * (m_b[i] / b1t) / (np.sqrt(v_b[i] / b2t) + cfg.eps_adam)

        curve.append({
            "iteration": it,
            "loss": loss,
            "grad_norm": gnorm,
            "walltime": time.perf_counter() - t0,
        })

    net.provenance = {
        "loss": kind.value,
        "seed": cfg.seed,
        "iterations": cfg.iterations,
        "negative_quadratic": neg_q,
    }
    return TrainResult(policy=net, curve=curve, kind=kind,
                       negative_quadratic=neg_q)


@dataclass
class CertificateReport:
    """Loss values and the optimality-gap bound chain for one policy."""

    loss_mse: float
    loss_w: float
    loss_lag: float            # mean squared gap (the training loss)
    lag_mean_abs: float        # mean |gap|, the quantity the bounds control
    quad_mean_abs: float       # gamma * loss_w
    epsilon: float             # max |pi(x_i) - u_i*|
    gamma: float
    M_Hs: float
    M_Js: float
    chain_lag_ok: bool         # lag_mean_abs <= quad_mean_abs + M_Hs eps^3 / 6
    chain_mse_ok: bool         # quad_mean_abs <= M_Js * loss_mse
    slack_lag: float
    slack_mse: float

    def as_dict(self):
        d = dict(self.__dict__)
        return d


def chain_terms(policy, dataset, problems):
    """Per-sample (|gap|, |quadratic form|, error norm) for bound checks."""
    X, U = _xu(dataset)
    out = _outputs(policy, X)
    r = out - U
    ev = _LagEvaluator(dataset, problems)
    gaps, _ = ev.gaps(out)
    return np.abs(gaps), np.abs(_quad_forms(dataset, r)), \
        np.linalg.norm(r, axis=1)


def bound_certificate(policy, dataset, bounds, problems, slack=1e-9):
    """Evaluate the loss chain with the sampled constants.

    chain 1:  mean|gap|  <=  mean|quad| + (M_Hs / 6) eps^3
    chain 2:  mean|quad| <=  M_Js * loss_mse
    """
    dl_abs, q_abs, err = chain_terms(policy, dataset, problems)
    l_mse = float(np.mean(err ** 2))
    quad_mean = float(np.mean(q_abs))
    l_w = quad_mean / dataset.gamma
    l_lag = float(np.mean(dl_abs ** 2))
    lag_abs = float(np.mean(dl_abs))
    eps = float(np.max(err))
    bounds = replace(bounds, epsilon=eps)
    rhs1 = quad_mean + bounds.M_Hs / 6.0 * eps ** 3
    rhs2 = bounds.M_Js * l_mse
    return CertificateReport(
        loss_mse=l_mse, loss_w=l_w, loss_lag=l_lag, lag_mean_abs=lag_abs,
        quad_mean_abs=quad_mean, epsilon=eps, gamma=dataset.gamma,
        M_Hs=bounds.M_Hs, M_Js=bounds.M_Js,
        chain_lag_ok=lag_abs <= rhs1 + slack,
        chain_mse_ok=quad_mean <= rhs2 + slack,
        slack_lag=rhs1 - lag_abs,
        slack_mse=rhs2 - quad_mean,
    )
