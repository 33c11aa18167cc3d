"""Continuous-time plant models and fixed-step RK4 integration.

The same integrator serves the shooting transcription (as the one-period
discrete map under zero-order hold) and the closed-loop simulator. State and
input vectors are handled componentwise so the right-hand sides evaluate
identically on floats, batched arrays, and forward-mode duals.
"""

from dataclasses import dataclass

import numpy as np

from . import duals
from .duals import Dual


class DomainError(ValueError):
    """Raised when a trajectory leaves the model's valid state domain."""


@dataclass(frozen=True)
class IntegratorConfig:
    """One sampling period = `substeps` classical RK4 steps of size dt/substeps."""

    dt: float
    substeps: int = 10

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.substeps < 1:
            raise ValueError(f"substeps must be >= 1, got {self.substeps}")


class PlantModel:
    """Continuous-time dynamics x' = rhs(x, u).

    `rhs` consumes and returns per-component sequences; each component may be
    a float, an equally-shaped ndarray batch, or a Dual.
    """

    n_x = 0
    n_u = 0

    def rhs(self, x, u):
        raise NotImplementedError

    def domain_violated(self, x):
        """True if any state component is outside the model domain."""
        return False

    def kernels(self):
        """Optional compiled fast-path kernels (see cgmpc.kernels)."""
        return None


class CstrModel(PlantModel):
    """Dimensionless exothermic CSTR: scaled concentration x1, temperature x2,
    coolant flow u. Unstable at the benchmark setpoint."""

    n_x = 2
    n_u = 1

    def __init__(self, tau=20.0, k=300.0, beta=5.0, x_f=0.3947, x_c=0.3816,
                 alpha=0.117):
        for name, v in [("tau", tau), ("k", k), ("beta", beta), ("x_f", x_f),
                        ("x_c", x_c), ("alpha", alpha)]:
            if not v > 0:
                raise ValueError(f"{name} must be strictly positive, got {v}")
        self.tau = tau
        self.k = k
        self.beta = beta
        self.x_f = x_f
        self.x_c = x_c
        self.alpha = alpha

    def rhs(self, x, u):
        x1, x2 = x[0], x[1]
        r = self.k * x1 * duals.exp(-self.beta / x2)
        dx1 = (1.0 - x1) / self.tau - r
        dx2 = (self.x_f - x2) / self.tau + r - self.alpha * u[0] * (x2 - self.x_c)
        return (dx1, dx2)

    def domain_violated(self, x):
        x2 = duals.value(x[1])
        return bool(np.any(np.asarray(x2) <= 0.0))

    def params(self):
        return np.array([self.tau, self.k, self.beta, self.x_f, self.x_c,
                         self.alpha])

    def kernels(self):
        from . import kernels
        return kernels.cstr_kernels()


class LinearModel(PlantModel):
    """LTI plant x' = A x + B u, used by the linear-MPC degeneracy checks."""

    def __init__(self, A, B):
        A = np.asarray(A, dtype=float)
        B = np.asarray(B, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("A must be square")
        if B.shape[0] != A.shape[0]:
            raise ValueError("B row count must match A")
        self.A = A
        self.B = B
        self.n_x = A.shape[0]
        self.n_u = B.shape[1]

    def rhs(self, x, u):
        out = []
        for i in range(self.n_x):
            acc = self.A[i, 0] * x[0]
            for j in range(1, self.n_x):
                acc = acc + self.A[i, j] * x[j]
            for j in range(self.n_u):
                acc = acc + self.B[i, j] * u[j]
            out.append(acc)
        return tuple(out)


def cstr_rhs(x, u, model=None):
    """State derivative of the benchmark CSTR at state x (2-vector), input u."""
    model = model if model is not None else CstrModel()
    x = np.asarray(x, dtype=float)
    if model.domain_violated(x):
        raise DomainError(f"x2 must be positive, got {x[1]}")
    u_arr = np.atleast_1d(np.asarray(u, dtype=float))
    return np.array(model.rhs((x[0], x[1]), (u_arr[0],)))


def cstr_equilibrium(model, x1):
    """Steady state (x, u) with first component pinned at x1.

    Closed form from rhs = 0: x2 solves the concentration balance, then u the
    energy balance. Requires 0 < x1 < 1 and a positive log argument.
    """
    arg = model.tau * model.k * x1 / (1.0 - x1)
    if not arg > 1.0:
        raise ValueError("no admissible equilibrium at this x1")
    x2 = model.beta / np.log(arg)
    u = (model.x_f - x2 + 1.0 - x1) / (model.tau * model.alpha * (x2 - model.x_c))
    return np.array([x1, x2]), np.array([u])


def _stage(model, x, u):
    if model.domain_violated(x):
        raise DomainError("state left the model domain during integration")
    return model.rhs(x, u)


def _axpy(x, a, k):
    return tuple(xi + a * ki for xi, ki in zip(x, k))


def _rk4(model, x, u, h):
    k1 = _stage(model, x, u)
    k2 = _stage(model, _axpy(x, 0.5 * h, k1), u)
    k3 = _stage(model, _axpy(x, 0.5 * h, k2), u)
    k4 = _stage(model, _axpy(x, h, k3), u)
    sixth = h / 6.0
    return tuple(
        xi + sixth * (a + 2.0 * b + 2.0 * c + d)
        for xi, a, b, c, d in zip(x, k1, k2, k3, k4)
    )


def step_components(model, x, u, cfg):
    """Integrate one sampling period with u held constant; componentwise I/O."""
    h = cfg.dt / cfg.substeps
    for _ in range(cfg.substeps):
        x = _rk4(model, x, u, h)
    if model.domain_violated(x):
        raise DomainError("state left the model domain during integration")
    return x


def step(model, x, u, cfg):
    """RK4 flow of the plant over one sampling period (zero-order hold)."""
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    out = step_components(model, tuple(x), tuple(u), cfg)
    return np.array(out)


def step_with_jac(model, x, u, cfg):
    """One-period step plus exact sensitivities A = dx'/dx, B = dx'/du.

    Dual numbers are seeded on (x, u) and pushed through the full RK4 chain.
    """
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    n_x, n_u = model.n_x, model.n_u
    width = n_x + n_u
    xd = duals.seed(x, width, offset=0)
    ud = duals.seed(u, width, offset=n_x)
    out = step_components(model, tuple(xd), tuple(ud), cfg)
    x_next = np.array([o.val for o in out])
    T = duals.tangents(out)
    return x_next, T[:, :n_x], T[:, n_x:]
