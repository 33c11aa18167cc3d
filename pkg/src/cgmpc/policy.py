"""Fully connected tanh policy network, trained from scratch.

Hidden layers use tanh, the output layer is affine. Input/output
normalization constants live inside the policy: state components map to
[-1, 1] over the state box before the first layer and raw outputs map back
onto the input box. Defaults are identity so plain networks behave exactly
like their weights say.
"""

import json
from dataclasses import dataclass, field

import numpy as np


@dataclass
class MlpPolicy:
    layer_sizes: list
    weights: list            # per layer, shape (fan_out, fan_in)
    biases: list
    x_shift: np.ndarray = None
    x_scale: np.ndarray = None
    u_shift: np.ndarray = None
    u_scale: np.ndarray = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        n_in, n_out = self.layer_sizes[0], self.layer_sizes[-1]
        if self.x_shift is None:
            self.x_shift = np.zeros(n_in)
        if self.x_scale is None:
            self.x_scale = np.ones(n_in)
        if self.u_shift is None:
            self.u_shift = np.zeros(n_out)
        if self.u_scale is None:
            self.u_scale = np.ones(n_out)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_sizes[i + 1], self.layer_sizes[i]):
                raise ValueError(f"layer {i} weight shape {w.shape} does not "
                                 "chain with layer_sizes")
            if b.shape != (self.layer_sizes[i + 1],):
                raise ValueError(f"layer {i} bias shape mismatch")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"layer {i} has non-finite parameters")

    @property
    def n_layers(self):
        return len(self.weights)

    def forward_batch(self, X):
        return _forward_tape(self, np.atleast_2d(np.asarray(X, dtype=float)))[0]

    def forward(self, x):
        return self.forward_batch(np.asarray(x, dtype=float)[None, :])[0]


def _forward_tape(policy, X):
    a = (X - policy.x_shift) / policy.x_scale
    acts = [a]
    last = policy.n_layers - 1
    for i, (W, b) in enumerate(zip(policy.weights, policy.biases)):
        z = a @ W.T + b
        a = np.tanh(z) if i < last else z
        acts.append(a)
    return policy.u_shift + policy.u_scale * a, acts


def backprop(policy, acts, adjoint):
    """Parameter gradients of sum_m loss_m given d loss/d u per row.

    Returns (dW list, db list) matching policy.weights/biases.
    """
    g = np.atleast_2d(adjoint) * policy.u_scale
    dWs = [None] * policy.n_layers
    dbs = [None] * policy.n_layers
    for i in range(policy.n_layers - 1, -1, -1):
        dWs[i] = g.T @ acts[i]
        dbs[i] = g.sum(axis=0)
        if i > 0:
            g = (g @ policy.weights[i]) * (1.0 - acts[i] ** 2)
    return dWs, dbs


def forward(policy, x):
    """Deterministic feedforward evaluation at a single state."""
    return policy.forward(x)


def param_grad(policy, x, adjoint):
    """Exact gradient w.r.t. every parameter of adjoint' u(x)."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    adjoint = np.atleast_2d(np.asarray(adjoint, dtype=float))
    _, acts = _forward_tape(policy, X)
    return backprop(policy, acts, adjoint)


def init(seed, layer_sizes, scheme="xavier_uniform", x_box=None, u_box=None):
    """Reproducible Xavier-uniform parameters; optional normalization boxes."""
    if scheme != "xavier_uniform":
        raise ValueError(f"unknown init scheme {scheme!r}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-a, a, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    kw = {}
    if x_box is not None:
        lo, hi = np.asarray(x_box[0], dtype=float), np.asarray(x_box[1], dtype=float)
        kw["x_shift"] = 0.5 * (lo + hi)
        kw["x_scale"] = 0.5 * (hi - lo)
    if u_box is not None:
        lo, hi = np.asarray(u_box[0], dtype=float), np.asarray(u_box[1], dtype=float)
        kw["u_shift"] = 0.5 * (lo + hi)
        kw["u_scale"] = 0.5 * (hi - lo)
    return MlpPolicy(list(layer_sizes), weights, biases, **kw)


def output_bounds(policy):
    """Guaranteed output interval, from tanh in (-1, 1) and the last layer.

    Valid when the network has at least one hidden layer (so the last
    layer's inputs are tanh activations).
    """
    if policy.n_layers < 2:
        raise ValueError("bound requires at least one hidden layer")
    W, b = policy.weights[-1], policy.biases[-1]
    half = np.abs(W).sum(axis=1) + np.abs(b)
    lo = policy.u_shift - policy.u_scale * half
    hi = policy.u_shift + policy.u_scale * half
    return lo, hi


def lipschitz_bound(policy):
    """Product-of-norms Lipschitz constant of x -> u."""
    L = 1.0
    for W in policy.weights:
        L *= np.linalg.norm(W, 2)
    L *= float(np.max(np.abs(policy.u_scale)))
    L *= float(np.max(1.0 / np.abs(policy.x_scale)))
    return L


def params_flat(policy):
    return np.concatenate([w.ravel() for w in policy.weights]
                          + [b.ravel() for b in policy.biases])


def save(policy, path):
    blob = {
        "schema": "cgmpc.policy",
        "version": 1,
        "layer_sizes": list(policy.layer_sizes),
        "weights": [w.tolist() for w in policy.weights],
        "biases": [b.tolist() for b in policy.biases],
        "x_shift": policy.x_shift.tolist(),
        "x_scale": policy.x_scale.tolist(),
        "u_shift": policy.u_shift.tolist(),
        "u_scale": policy.u_scale.tolist(),
        "provenance": policy.provenance,
    }
    with open(path, "w") as fh:
        json.dump(blob, fh, sort_keys=True, indent=1)
        fh.write("\n")


def load(path):
    with open(path) as fh:
        blob = json.load(fh)
    if blob.get("schema") != "cgmpc.policy" or blob.get("version") != 1:
        raise ValueError("not a supported policy file")
    return MlpPolicy(
        layer_sizes=list(blob["layer_sizes"]),
        weights=[np.array(w, dtype=float) for w in blob["weights"]],
        biases=[np.array(b, dtype=float) for b in blob["biases"]],
        x_shift=np.array(blob["x_shift"], dtype=float),
        x_scale=np.array(blob["x_scale"], dtype=float),
        u_shift=np.array(blob["u_shift"], dtype=float),
        u_scale=np.array(blob["u_scale"], dtype=float),
        provenance=blob.get("provenance", {}),
    )
