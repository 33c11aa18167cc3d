"""Compiled CSTR rollout kernels (numba).

Hot paths only: the generic dual-number route in `dynamics`/`ocp` stays the
reference implementation, and these kernels reproduce the exact same RK4
arithmetic for the benchmark plant. Tangent propagation uses the analytic
rhs Jacobian, chained through the RK4 stages.

All kernels return an `ok` flag instead of raising: numba exceptions are
awkward, so callers translate ok=False into DomainError.
"""

from functools import lru_cache

import numpy as np


def _build():
    from numba import njit

    @njit(cache=True)
    def _rhs(p, x1, x2, u):
        e = np.exp(-p[2] / x2)
        r = p[1] * x1 * e
        f1 = (1.0 - x1) / p[0] - r
        f2 = (p[3] - x2) / p[0] + r - p[5] * u * (x2 - p[4])
        return f1, f2

    @njit(cache=True)
    def _rhs_jac(p, x1, x2, u):
        e = np.exp(-p[2] / x2)
        ke = p[1] * e
        r = ke * x1
        rb = r * p[2] / (x2 * x2)
        f1 = (1.0 - x1) / p[0] - r
        f2 = (p[3] - x2) / p[0] + r - p[5] * u * (x2 - p[4])
        fx11 = -1.0 / p[0] - ke
        fx12 = -rb
        fx21 = ke
        fx22 = -1.0 / p[0] + rb - p[5] * u
        fu2 = -p[5] * (x2 - p[4])
        return f1, f2, fx11, fx12, fx21, fx22, fu2

    @njit(cache=True)
    def rollout_value(p, x0, us, h, substeps):
        N = us.shape[0]
        traj = np.empty((N + 1, 2))
        x1, x2 = x0[0], x0[1]
        traj[0, 0] = x1
        traj[0, 1] = x2
        for k in range(N):
            u = us[k]
            for _ in range(substeps):
                if x2 <= 0.0:
                    return traj, False
                a1, a2 = _rhs(p, x1, x2, u)
                y1 = x1 + 0.5 * h * a1
                y2 = x2 + 0.5 * h * a2
                if y2 <= 0.0:
                    return traj, False
                b1, b2 = _rhs(p, y1, y2, u)
                y1 = x1 + 0.5 * h * b1
                y2 = x2 + 0.5 * h * b2
                if y2 <= 0.0:
                    return traj, False
                c1, c2 = _rhs(p, y1, y2, u)
                y1 = x1 + h * c1
                y2 = x2 + h * c2
                if y2 <= 0.0:
                    return traj, False
                d1, d2 = _rhs(p, y1, y2, u)
                x1 = x1 + h / 6.0 * (a1 + 2.0 * b1 + 2.0 * c1 + d1)
                x2 = x2 + h / 6.0 * (a2 + 2.0 * b2 + 2.0 * c2 + d2)
            traj[k + 1, 0] = x1
            traj[k + 1, 1] = x2
        if x2 <= 0.0:
            return traj, False
        return traj, True

    @njit(cache=True)
    def rollout_jac(p, x0, us, h, substeps):
        """Trajectory plus per-period sensitivities A_k = dx_{k+1}/dx_k,
        B_k = dx_{k+1}/du_k."""
        N = us.shape[0]
        traj = np.empty((N + 1, 2))
        A = np.empty((N, 2, 2))
        B = np.empty((N, 2))
        x1, x2 = x0[0], x0[1]
        traj[0, 0] = x1
        traj[0, 1] = x2
        for k in range(N):
            u = us[k]
            # tangent of (x1, x2) w.r.t. (x_k1, x_k2, u_k)
            t11, t12, t13 = 1.0, 0.0, 0.0
            t21, t22, t23 = 0.0, 1.0, 0.0
            for _ in range(substeps):
                if x2 <= 0.0:
                    return traj, A, B, False
                f1, f2, j11, j12, j21, j22, ju2 = _rhs_jac(p, x1, x2, u)
                da11 = j11 * t11 + j12 * t21
                da12 = j11 * t12 + j12 * t22
                da13 = j11 * t13 + j12 * t23
                da21 = j21 * t11 + j22 * t21
                da22 = j21 * t12 + j22 * t22
                da23 = j21 * t13 + j22 * t23 + ju2

                y1 = x1 + 0.5 * h * f1
                y2 = x2 + 0.5 * h * f2
                s11 = t11 + 0.5 * h * da11
                s12 = t12 + 0.5 * h * da12
                s13 = t13 + 0.5 * h * da13
                s21 = t21 + 0.5 * h * da21
                s22 = t22 + 0.5 * h * da22
                s23 = t23 + 0.5 * h * da23
                if y2 <= 0.0:
                    return traj, A, B, False
                g1, g2, j11, j12, j21, j22, ju2 = _rhs_jac(p, y1, y2, u)
                db11 = j11 * s11 + j12 * s21
                db12 = j11 * s12 + j12 * s22
                db13 = j11 * s13 + j12 * s23
                db21 = j21 * s11 + j22 * s21
                db22 = j21 * s12 + j22 * s22
                db23 = j21 * s13 + j22 * s23 + ju2

                y1 = x1 + 0.5 * h * g1
                y2 = x2 + 0.5 * h * g2
                s11 = t11 + 0.5 * h * db11
                s12 = t12 + 0.5 * h * db12
                s13 = t13 + 0.5 * h * db13
                s21 = t21 + 0.5 * h * db21
                s22 = t22 + 0.5 * h * db22
                s23 = t23 + 0.5 * h * db23
                if y2 <= 0.0:
                    return traj, A, B, False
                q1, q2, j11, j12, j21, j22, ju2 = _rhs_jac(p, y1, y2, u)
                dc11 = j11 * s11 + j12 * s21
                dc12 = j11 * s12 + j12 * s22
                dc13 = j11 * s13 + j12 * s23
                dc21 = j21 * s11 + j22 * s21
                dc22 = j21 * s12 + j22 * s22
                dc23 = j21 * s13 + j22 * s23 + ju2

                y1 = x1 + h * q1
                y2 = x2 + h * q2
                s11 = t11 + h * dc11
                s12 = t12 + h * dc12
                s13 = t13 + h * dc13
                s21 = t21 + h * dc21
                s22 = t22 + h * dc22
                s23 = t23 + h * dc23
                if y2 <= 0.0:
                    return traj, A, B, False
                w1, w2, j11, j12, j21, j22, ju2 = _rhs_jac(p, y1, y2, u)
                dd11 = j11 * s11 + j12 * s21
                dd12 = j11 * s12 + j12 * s22
                dd13 = j11 * s13 + j12 * s23
                dd21 = j21 * s11 + j22 * s21
                dd22 = j21 * s12 + j22 * s22
                dd23 = j21 * s13 + j22 * s23 + ju2

                sixth = h / 6.0
                x1 = x1 + sixth * (f1 + 2.0 * g1 + 2.0 * q1 + w1)
                x2 = x2 + sixth * (f2 + 2.0 * g2 + 2.0 * q2 + w2)
                t11 = t11 + sixth * (da11 + 2.0 * db11 + 2.0 * dc11 + dd11)
                t12 = t12 + sixth * (da12 + 2.0 * db12 + 2.0 * dc12 + dd12)
                t13 = t13 + sixth * (da13 + 2.0 * db13 + 2.0 * dc13 + dd13)
                t21 = t21 + sixth * (da21 + 2.0 * db21 + 2.0 * dc21 + dd21)
                t22 = t22 + sixth * (da22 + 2.0 * db22 + 2.0 * dc22 + dd22)
                t23 = t23 + sixth * (da23 + 2.0 * db23 + 2.0 * dc23 + dd23)
            traj[k + 1, 0] = x1
            traj[k + 1, 1] = x2
            A[k, 0, 0] = t11
            A[k, 0, 1] = t12
            A[k, 1, 0] = t21
            A[k, 1, 1] = t22
            B[k, 0] = t13
            B[k, 1] = t23
        if x2 <= 0.0:
            return traj, A, B, False
        return traj, A, B, True

    @njit(cache=True)
    def rollout_batch_value(p, x0s, us, h, substeps):
        M = x0s.shape[0]
        N = us.shape[1]
        trajs = np.empty((M, N + 1, 2))
        ok = np.ones(M, dtype=np.bool_)
        for m in range(M):
            traj, good = rollout_value(p, x0s[m], us[m], h, substeps)
            trajs[m] = traj
            ok[m] = good
        return trajs, ok

    @njit(cache=True)
    def rollout_batch_du0(p, x0s, us, h, substeps):
        """Batched rollouts with the trajectory tangent w.r.t. the first
        input only (one tangent direction per sample)."""
        M = x0s.shape[0]
        N = us.shape[1]
        trajs = np.empty((M, N + 1, 2))
        dtraj = np.zeros((M, N + 1, 2))
        ok = np.ones(M, dtype=np.bool_)
        for m in range(M):
            x1, x2 = x0s[m, 0], x0s[m, 1]
            t1, t2 = 0.0, 0.0
            trajs[m, 0, 0] = x1
            trajs[m, 0, 1] = x2
            good = True
            for k in range(N):
                u = us[m, k]
                useed = 1.0 if k == 0 else 0.0
                for _ in range(substeps):
                    if x2 <= 0.0:
                        good = False
                        break
                    f1, f2, j11, j12, j21, j22, ju2 = _rhs_jac(p, x1, x2, u)
                    da1 = j11 * t1 + j12 * t2
                    da2 = j21 * t1 + j22 * t2 + ju2 * useed
                    y1 = x1 + 0.5 * h * f1
                    y2 = x2 + 0.5 * h * f2
                    s1 = t1 + 0.5 * h * da1
                    s2 = t2 + 0.5 * h * da2
                    if y2 <= 0.0:
                        good = False
                        break
                    g1, g2, j11, j12, j21, j22, ju2 = _rhs_jac(p, y1, y2, u)
                    db1 = j11 * s1 + j12 * s2
                    db2 = j21 * s1 + j22 * s2 + ju2 * useed
                    y1 = x1 + 0.5 * h * g1
                    y2 = x2 + 0.5 * h * g2
                    s1 = t1 + 0.5 * h * db1
                    s2 = t2 + 0.5 * h * db2
                    if y2 <= 0.0:
                        good = False
                        break
                    q1, q2, j11, j12, j21, j22, ju2 = _rhs_jac(p, y1, y2, u)
                    dc1 = j11 * s1 + j12 * s2
                    dc2 = j21 * s1 + j22 * s2 + ju2 * useed
                    y1 = x1 + h * q1
                    y2 = x2 + h * q2
                    s1 = t1 + h * dc1
                    s2 = t2 + h * dc2
                    if y2 <= 0.0:
                        good = False
                        break
                    w1, w2, j11, j12, j21, j22, ju2 = _rhs_jac(p, y1, y2, u)
                    dd1 = j11 * s1 + j12 * s2
                    dd2 = j21 * s1 + j22 * s2 + ju2 * useed
                    sixth = h / 6.0
                    x1 = x1 + sixth * (f1 + 2.0 * g1 + 2.0 * q1 + w1)
                    x2 = x2 + sixth * (f2 + 2.0 * g2 + 2.0 * q2 + w2)
                    t1 = t1 + sixth * (da1 + 2.0 * db1 + 2.0 * dc1 + dd1)
                    t2 = t2 + sixth * (da2 + 2.0 * db2 + 2.0 * dc2 + dd2)
                if not good:
                    break
                trajs[m, k + 1, 0] = x1
                trajs[m, k + 1, 1] = x2
                dtraj[m, k + 1, 0] = t1
                dtraj[m, k + 1, 1] = t2
            ok[m] = good and x2 > 0.0
        return trajs, dtraj, ok

    return {
        "rollout_value": rollout_value,
        "rollout_jac": rollout_jac,
        "rollout_batch_value": rollout_batch_value,
        "rollout_batch_du0": rollout_batch_du0,
    }


@lru_cache(maxsize=1)
def cstr_kernels():
    """Compiled kernel table, or None when numba is unavailable."""
    try:
        import numba  # noqa: F401
    except ImportError:
        return None
    return _build()


def warm_up():
    """Force JIT compilation so later timings measure the algorithms."""
    ks = cstr_kernels()
    if ks is None:
        return
    p = np.array([20.0, 300.0, 5.0, 0.3947, 0.3816, 0.117])
    x0 = np.array([0.26, 0.65])
    us = np.full(3, 0.75)
    ks["rollout_value"](p, x0, us, 0.1, 2)
    ks["rollout_jac"](p, x0, us, 0.1, 2)
    ks["rollout_batch_value"](p, x0[None, :], us[None, :], 0.1, 2)
    ks["rollout_batch_du0"](p, x0[None, :], us[None, :], 0.1, 2)
