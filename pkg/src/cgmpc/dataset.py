"""Data generation: grid-sample the state box, solve each P(x_i), keep the
successes with their primal-dual solutions and curvature records.

Solves chain warm starts along grid rows (first axis); rows are independent
chunks, so a worker pool over rows produces byte-identical datasets for any
worker count. Failed or infeasible solves are counted and skipped.

Persistence is JSON-lines: one header object, then one sample per line.
Floats serialize via their shortest round-trip decimal form, so
load(save(D)) reproduces every field exactly.
"""

import json
import concurrent.futures
from dataclasses import dataclass

import numpy as np

from . import sensitivity
from .nlp_solver import Flag, SolverConfig, solve
from .ocp import build_nlp
from .sensitivity import SensitivityRecord

SCHEMA = "cgmpc.dataset"
SCHEMA_VERSION = 1


class GenerationError(RuntimeError):
    pass


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class GridSpec:
    lo: np.ndarray
    hi: np.ndarray
    step: float

    def __post_init__(self):
        object.__setattr__(self, "lo", np.atleast_1d(np.asarray(self.lo, dtype=float)))
        object.__setattr__(self, "hi", np.atleast_1d(np.asarray(self.hi, dtype=float)))
        if self.lo.shape != self.hi.shape:
            raise ValueError("lo/hi dimension mismatch")
        if np.any(self.hi < self.lo):
            raise ValueError("hi must not be below lo")
        if not self.step > 0:
            raise ValueError("step must be positive")


@dataclass
class Sample:
    x: np.ndarray
    u_star: np.ndarray
    J_star: float
    w_bar_star: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    sens: SensitivityRecord


@dataclass
class Dataset:
    samples: list
    gamma: float
    n_attempted: int
    n_kept: int
    provenance: dict

    @property
    def x_lo(self):
        return np.array(self.provenance["x_lo"])

    @property
    def x_hi(self):
        return np.array(self.provenance["x_hi"])

    @property
    def u_lo(self):
        return np.array(self.provenance["u_lo"])

    @property
    def u_hi(self):
        return np.array(self.provenance["u_hi"])


def grid_states(grid):
    """Full Cartesian grid over [lo, hi], both endpoints included, row-major."""
    axes = []
    for lo_i, hi_i in zip(grid.lo, grid.hi):
        n = int(np.floor((hi_i - lo_i) / grid.step + 1e-9)) + 1
        axes.append(lo_i + grid.step * np.arange(n))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def uniform_states(grid, n, seed):
    """Uniform random sampling over the box, for the generic algorithm."""
    rng = np.random.default_rng(seed)
    return rng.uniform(grid.lo, grid.hi, size=(n, grid.lo.size))


def _solve_chunk(spec, states, solver_cfg, mode):
    """Sequential warm-chained solves over one chunk of states."""
    n_u = spec.model.n_u
    out = []
    w_warm, B_warm = None, None
    for x in states:
        problem = build_nlp(spec, x)
        w0 = w_warm if w_warm is not None else np.tile(spec.u_e, spec.N)
        w0 = np.clip(w0, np.tile(spec.u_lo, spec.N), np.tile(spec.u_hi, spec.N))
        kkt, status = solve(problem, w0, solver_cfg, warm_B=B_warm)
        if status.flag is not Flag.SUCCEEDED:
            out.append((status.flag.value, None))
            continue
        try:
            rec = sensitivity.reduced_hessian(kkt, problem, mode=mode)
        except ValueError:
            out.append(("sensitivity_failed", None))
            continue
        sample = Sample(
            x=np.array(x, dtype=float),
            u_star=kkt.w_star[:n_u].copy(),
            J_star=kkt.J_star,
            w_bar_star=kkt.w_star[n_u:].copy(),
            lam=kkt.lam.copy(),
            mu=kkt.mu.copy(),
            sens=rec,
        )
        out.append(("succeeded", sample))
        w_warm, B_warm = kkt.w_star, status.B
    return out


def generate(spec, grid, solver_cfg=None, mode=sensitivity.MODE_DIRECT,
             seed=0, workers=1, sampler="grid", n_random=None,
             config_sha=None):
    """Run the generation loop and assemble a Dataset.

    sampler="grid" evaluates every grid point (the benchmark protocol);
    sampler="random" draws n_random uniform states instead.
    """
    solver_cfg = solver_cfg or SolverConfig()
    if sampler == "grid":
        states = grid_states(grid)
        n0 = int(np.floor((grid.hi[0] - grid.lo[0]) / grid.step + 1e-9)) + 1
        stride = states.shape[0] // n0
        chunks = [states[r * stride:(r + 1) * stride] for r in range(n0)]
    elif sampler == "random":
        if not n_random:
            raise ValueError("n_random required for random sampling")
        states = uniform_states(grid, n_random, seed)
        chunks = [states]
    else:
        raise ValueError(f"unknown sampler {sampler!r}")

    if workers > 1 and len(chunks) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_solve_chunk, [spec] * len(chunks), chunks,
                                  [solver_cfg] * len(chunks),
                                  [mode] * len(chunks)))
    else:
        results = [_solve_chunk(spec, c, solver_cfg, mode) for c in chunks]

    samples = []
    failures = {}
    for chunk in results:
        for flag, sample in chunk:
            if sample is not None:
                samples.append(sample)
            else:
                failures[flag] = failures.get(flag, 0) + 1
    if not samples:
        raise GenerationError(
            f"no sample solved successfully (failures: {failures})")

    gam = sensitivity.gamma([s.sens for s in samples])
    provenance = {
        "ocp_fingerprint": spec.fingerprint(),
        "solver": solver_cfg.as_dict(),
        "mode": mode,
        "seed": seed,
        "sampler": sampler,
        "config_sha": config_sha,
        "failures": failures,
        "N": spec.N,
        "n_x": spec.model.n_x,
        "n_u": spec.model.n_u,
        "x_lo": spec.x_lo.tolist(),
        "x_hi": spec.x_hi.tolist(),
        "u_lo": spec.u_lo.tolist(),
        "u_hi": spec.u_hi.tolist(),
        "grid_lo": grid.lo.tolist(),
        "grid_hi": grid.hi.tolist(),
        "grid_step": grid.step,
    }
    return Dataset(samples=samples, gamma=gam, n_attempted=states.shape[0],
                   n_kept=len(samples), provenance=provenance)


def _dump(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def save(dataset, path):
    with open(path, "w") as fh:
        fh.write(_dump({
            "schema": SCHEMA,
            "version": SCHEMA_VERSION,
            "n_attempted": dataset.n_attempted,
            "n_kept": dataset.n_kept,
            "gamma": dataset.gamma,
            "provenance": dataset.provenance,
        }) + "\n")
        for s in dataset.samples:
            fh.write(_dump({
                "x": s.x.tolist(),
                "u_star": s.u_star.tolist(),
                "J_star": s.J_star,
                "w_bar_star": s.w_bar_star.tolist(),
                "lam": s.lam.tolist(),
                "mu": s.mu.tolist(),
                "sens": {
                    "L_uu": s.sens.L_uu.tolist(),
                    "active_set": s.sens.active_set.tolist(),
                    "hessian_norm": s.sens.hessian_norm,
                    "mode": s.sens.mode,
                    "sc_violations": s.sens.sc_violations.tolist()
                    if s.sens.sc_violations is not None else [],
                },
            }) + "\n")


def load(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise DatasetFormatError("empty dataset file")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"unreadable header: {exc}") from exc
    if header.get("schema") != SCHEMA:
        raise DatasetFormatError(f"not a {SCHEMA} file")
    if header.get("version") != SCHEMA_VERSION:
        raise DatasetFormatError(
            f"unsupported schema version {header.get('version')!r}")
    n_kept = header["n_kept"]
    body = lines[1:]
    if len(body) != n_kept:
        raise DatasetFormatError(
            f"truncated dataset: header promises {n_kept} samples, "
            f"found {len(body)} lines")
    samples = []
    for i, line in enumerate(body):
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"corrupt sample line {i}: {exc}") from exc
        sens = rec["sens"]
        samples.append(Sample(
            x=np.array(rec["x"], dtype=float),
            u_star=np.array(rec["u_star"], dtype=float),
            J_star=float(rec["J_star"]),
            w_bar_star=np.array(rec["w_bar_star"], dtype=float),
            lam=np.array(rec["lam"], dtype=float),
            mu=np.array(rec["mu"], dtype=float),
            sens=SensitivityRecord(
                L_uu=np.array(sens["L_uu"], dtype=float),
                active_set=np.array(sens["active_set"], dtype=int),
                hessian_norm=float(sens["hessian_norm"]),
                mode=sens["mode"],
                sc_violations=np.array(sens["sc_violations"], dtype=int),
            ),
        ))
    return Dataset(samples=samples, gamma=float(header["gamma"]),
                   n_attempted=int(header["n_attempted"]),
                   n_kept=n_kept, provenance=header["provenance"])


def datasets_equal(a, b):
    """Exact field-by-field comparison (full float precision)."""
    if (a.gamma != b.gamma or a.n_attempted != b.n_attempted
            or a.n_kept != b.n_kept or a.provenance != b.provenance
            or len(a.samples) != len(b.samples)):
        return False
    for sa, sb in zip(a.samples, b.samples):
        if not (np.array_equal(sa.x, sb.x)
                and np.array_equal(sa.u_star, sb.u_star)
                and sa.J_star == sb.J_star
                and np.array_equal(sa.w_bar_star, sb.w_bar_star)
                and np.array_equal(sa.lam, sb.lam)
                and np.array_equal(sa.mu, sb.mu)
                and np.array_equal(sa.sens.L_uu, sb.sens.L_uu)
                and np.array_equal(sa.sens.active_set, sb.sens.active_set)
                and sa.sens.hessian_norm == sb.sens.hessian_norm
                and sa.sens.mode == sb.sens.mode):
            return False
    return True
