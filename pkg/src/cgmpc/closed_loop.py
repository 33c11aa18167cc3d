"""Closed-loop evaluation: receding-horizon MPC baseline vs trained policies.

Every controller runs on the identical scenario set (common random initial
states, uniform over the state box; candidates whose MPC run fails are
rejected and counted). The optimality-loss metric per scenario is the
realized-cost excess J - J* against the MPC baseline. Controller wall-times
are collected separately from the deterministic cost report so reports stay
byte-reproducible.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import dynamics, ocp
from .nlp_solver import Flag, SolverConfig, solve


class ControllerFailure(RuntimeError):
    def __init__(self, reason):
        super().__init__(reason)
        self.reason = reason


class MpcController:
    """Re-solves P(x(t)) each step and applies the first planned input."""

    def __init__(self, spec, solver_cfg=None, name="mpc"):
        self.spec = spec
        self.cfg = solver_cfg or SolverConfig()
        self.name = name
        self.reset()

    def reset(self):
        self._w = None
        self._B = None

    def __call__(self, x):
        spec = self.spec
        margin = self.cfg.tol_feas * 10.0
        if (np.any(x < spec.x_lo - margin) or np.any(x > spec.x_hi + margin)):
            raise ControllerFailure("state left the constraint box")
        p = np.clip(x, spec.x_lo, spec.x_hi)
        problem = ocp.build_nlp(spec, p)
        n_u = spec.model.n_u
        if self._w is None:
            w0 = np.tile(spec.u_e, spec.N)
        else:
            w0 = np.concatenate([self._w[n_u:], self._w[-n_u:]])
        w0 = np.clip(w0, np.tile(spec.u_lo, spec.N), np.tile(spec.u_hi, spec.N))
        kkt, status = solve(problem, w0, self.cfg, warm_B=self._B)
        if status.flag is not Flag.SUCCEEDED:
            raise ControllerFailure(f"solve failed: {status.flag.value}")
        self._w, self._B = kkt.w_star, status.B
        return kkt.w_star[:n_u].copy()


class PolicyController:
    """Approximate policy; outputs are clipped to the input box before
    actuation and clipping events are counted."""

    def __init__(self, policy, u_lo, u_hi, name):
        self.policy = policy
        self.u_lo = np.atleast_1d(np.asarray(u_lo, dtype=float))
        self.u_hi = np.atleast_1d(np.asarray(u_hi, dtype=float))
        self.name = name
        self.clip_count = 0

    def reset(self):
        self.clip_count = 0

    def __call__(self, x):
        u = np.atleast_1d(self.policy.forward(x))
        clipped = np.clip(u, self.u_lo, self.u_hi)
        if np.any(clipped != u):
            self.clip_count += 1
        return clipped


@dataclass(frozen=True)
class Scenario:
    x0: np.ndarray
    steps: int = 100


@dataclass
class SimResult:
    states: np.ndarray
    inputs: np.ndarray
    stage_costs: np.ndarray
    J: float
    step_times: np.ndarray
    violation_count: int
    violation_depth: float
    clip_count: int
    failed: bool = False
    fail_reason: str = ""
    fail_step: int = -1


def simulate(controller, scenario, spec):
    """Roll the true plant under the controller; accumulate realized cost."""
    controller.reset()
    n_x, n_u = spec.model.n_x, spec.model.n_u
    T = scenario.steps
    states = np.full((T + 1, n_x), np.nan)
    inputs = np.full((T, n_u), np.nan)
    costs = np.full(T, np.nan)
    times = np.full(T, np.nan)
    x = np.asarray(scenario.x0, dtype=float).copy()
    states[0] = x
    for t in range(T):
        tic = time.perf_counter()
        try:
            u = controller(x)
        except ControllerFailure as exc:
            return _failed(states, inputs, costs, times, controller,
                           str(exc.reason), t)
        times[t] = time.perf_counter() - tic
        inputs[t] = u
        costs[t] = ocp.stage_cost(x, u, spec)
        try:
            x = dynamics.step(spec.model, x, u, spec.integ)
        except dynamics.DomainError as exc:
            return _failed(states, inputs, costs, times, controller,
                           f"plant domain failure: {exc}", t)
        states[t + 1] = x

    reached = states[1:]
    depth = np.maximum(spec.x_lo - reached, reached - spec.x_hi)
    depth = np.maximum(depth, 0.0)
    per_step = depth.max(axis=1)
    return SimResult(
        states=states, inputs=inputs, stage_costs=costs,
        J=float(np.sum(costs)), step_times=times,
        violation_count=int(np.sum(per_step > 0.0)),
        violation_depth=float(per_step.max(initial=0.0)),
        clip_count=getattr(controller, "clip_count", 0),
    )


def _failed(states, inputs, costs, times, controller, reason, step):
    return SimResult(
        states=states, inputs=inputs, stage_costs=costs, J=np.nan,
        step_times=times, violation_count=0, violation_depth=np.nan,
        clip_count=getattr(controller, "clip_count", 0),
        failed=True, fail_reason=reason, fail_step=step,
    )


@dataclass
class EvalReport:
    scenarios: list            # accepted initial states
    rows: list                 # per (scenario, policy) dicts, deterministic
    aggregates: dict           # per policy: mean/max J - J*, violations, ...
    rejected_starts: int
    mpc_failures: int
    flags: list                # investigation flags (e.g. J - J* below -delta)
    timing: dict = field(default_factory=dict)  # wall times, reported separately
    trajectories: dict = field(default_factory=dict)  # policy -> list of (T+1, n_x)


def evaluate(policies, spec, solver_cfg=None, n_scenarios=35, steps=100,
             seed=0, delta_flag=5e-4, max_draws=None):
    """Run MPC and every policy on common scenarios; aggregate J - J*.

    `policies` maps name -> trained MlpPolicy. Initial states are drawn
    uniformly over the state box until n_scenarios MPC-feasible runs are
    collected; rejected draws are counted.
    """
    solver_cfg = solver_cfg or SolverConfig()
    rng = np.random.default_rng(seed)
    if max_draws is None:
        max_draws = 40 * n_scenarios + 200

    mpc = MpcController(spec, solver_cfg)
    controllers = {
        name: PolicyController(pol, spec.u_lo, spec.u_hi, name)
        for name, pol in policies.items()
    }

    accepted = []
    mpc_results = []
    rejected = 0
    mpc_failures = 0
    draws = 0
    while len(accepted) < n_scenarios:
        if draws >= max_draws:
            raise RuntimeError(
                f"could not collect {n_scenarios} MPC-feasible scenarios "
                f"in {max_draws} draws")
        x0 = rng.uniform(spec.x_lo, spec.x_hi)
        draws += 1
        res = simulate(mpc, Scenario(x0=x0, steps=steps), spec)
        if res.failed:
            if res.fail_step == 0:
                rejected += 1  # infeasible start
            else:
                mpc_failures += 1  # lost feasibility mid-run
            continue
        accepted.append(x0)
        mpc_results.append(res)

    rows = []
    flags = []
    times = {"mpc": []}
    trajectories = {"mpc": [r.states for r in mpc_results]}
    for idx, (x0, base) in enumerate(zip(accepted, mpc_results)):
        rows.append(_row(idx, x0, "mpc", base, base.J))
        times["mpc"].extend(base.step_times.tolist())
        for name, ctrl in controllers.items():
            res = simulate(ctrl, Scenario(x0=x0, steps=steps), spec)
            rows.append(_row(idx, x0, name, res, base.J))
            trajectories.setdefault(name, []).append(res.states)
            times.setdefault(name, []).extend(
                t for t in res.step_times.tolist() if np.isfinite(t))
            if not res.failed and res.J - base.J < -delta_flag:
                flags.append({
                    "scenario": idx, "policy": name,
                    "j_minus_jstar": res.J - base.J,
                    "note": "approximate policy beat MPC beyond tolerance",
                })

    aggregates = {}
    for name in ["mpc", *controllers]:
        sel = [r for r in rows if r["policy"] == name and not r["failed"]]
        gaps = np.array([r["j_minus_jstar"] for r in sel])
        aggregates[name] = {
            "scenarios": len(sel),
            "failed": sum(1 for r in rows
                          if r["policy"] == name and r["failed"]),
            "mean_j": float(np.mean([r["J"] for r in sel])) if sel else np.nan,
            "mean_j_minus_jstar": float(np.mean(gaps)) if sel else np.nan,
            "max_j_minus_jstar": float(np.max(gaps)) if sel else np.nan,
            "violation_count": int(sum(r["violation_count"] for r in sel)),
            "max_violation_depth": float(max(
                (r["violation_depth"] for r in sel), default=0.0)),
            "clip_count": int(sum(r["clip_count"] for r in sel)),
        }

    timing = {
        name: {
            "mean_step_time": float(np.mean(ts)) if ts else np.nan,
            "max_step_time": float(np.max(ts)) if ts else np.nan,
        }
        for name, ts in times.items()
    }
    return EvalReport(scenarios=accepted, rows=rows, aggregates=aggregates,
                      rejected_starts=rejected, mpc_failures=mpc_failures,
                      flags=flags, timing=timing, trajectories=trajectories)


def _row(idx, x0, name, res, j_star):
    return {
        "scenario": idx,
        "x0": [float(v) for v in x0],
        "policy": name,
        "failed": bool(res.failed),
        "fail_reason": res.fail_reason,
        "J": float(res.J) if np.isfinite(res.J) else np.nan,
        "j_minus_jstar": float(res.J - j_star) if np.isfinite(res.J) else np.nan,
        "violation_count": res.violation_count,
        "violation_depth": float(res.violation_depth)
        if np.isfinite(res.violation_depth) else 0.0,
        "clip_count": res.clip_count,
    }
