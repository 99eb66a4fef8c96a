"""Parameterized DDP for one agent's augmented subproblem.

The terminal time ``theta`` is a scalar parameter shared by every step of the
horizon. The backward pass carries the joint value expansion in ``(x, theta)``
and the forward pass applies a clamped Newton step on ``theta`` together with
the usual feedforward/feedback control update.

Dynamics are linearised (no second-order dynamics terms), so the quadratic
models are of Gauss-Newton type.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .dynamics import UnicycleModel
from .model import Trajectory

log = logging.getLogger(__name__)

REG_INIT = 1e-6
REG_FACTOR = 10.0
REG_MAX = 1e6
MAX_HALVINGS = 8


@dataclass
class AugmentedCostContext:
    """Everything the augmented local cost needs besides the trajectory.

    Penalty weights may be zero here (used for the unconstrained warm start),
    even though ADMM penalties proper are strictly positive.
    """

    target: np.ndarray  # (p,)
    W_N: np.ndarray  # (p, p)
    R: np.ndarray  # (q, q)
    W_s: np.ndarray  # (p, p)
    x_tilde: np.ndarray  # (N+1, p)
    u_tilde: np.ndarray  # (N, q)
    t_tilde: float
    lam: np.ndarray  # (N+1, p)
    zeta: np.ndarray  # (N, q)
    nu: float = 0.0
    pen_x: float = 0.0
    pen_u: float = 0.0
    pen_t: float = 0.0

    @classmethod
    def unpenalized(cls, target, W_N, R, W_s, n_steps: int) -> "AugmentedCostContext":
        p, q = len(target), np.atleast_2d(R).shape[0]
        return cls(
            target=np.asarray(target, dtype=float),
            W_N=np.atleast_2d(W_N).astype(float),
            R=np.atleast_2d(R).astype(float),
            W_s=np.atleast_2d(W_s).astype(float),
            x_tilde=np.zeros((n_steps + 1, p)),
            u_tilde=np.zeros((n_steps, q)),
            t_tilde=0.0,
            lam=np.zeros((n_steps + 1, p)),
            zeta=np.zeros((n_steps, q)),
        )


@dataclass
class ValueExpansion:
    V_x: np.ndarray
    V_theta: float
    V_xx: np.ndarray
    V_xtheta: np.ndarray
    V_thetatheta: float


@dataclass
class QExpansion:
    Q_x: np.ndarray
    Q_u: np.ndarray
    Q_theta: float
    Q_xx: np.ndarray
    Q_uu: np.ndarray
    Q_thetatheta: float
    Q_xu: np.ndarray
    Q_xtheta: np.ndarray
    Q_utheta: np.ndarray

    @property
    def Q_ux(self) -> np.ndarray:
        return self.Q_xu.T


@dataclass
class GainSchedule:
    k: np.ndarray  # (N, q) feedforward
    K: np.ndarray  # (N, q, p) state feedback
    K_theta: np.ndarray  # (N, q) parameter feedback
    dtheta: float  # Newton step on the terminal time
    value0: ValueExpansion | None = None
    q_blocks: list[QExpansion] = field(default_factory=list)


@dataclass
class SolveResult:
    traj: Trajectory
    cost: float
    iterations: int
    status: str  # "converged" | "max_iters" | "degraded"


class BackwardPassError(FloatingPointError):
    pass


def augmented_running_cost(x, u, k: int, ctx: AugmentedCostContext):
    """Stage cost with ADMM penalties and its derivatives.

    Returns ``(l, l_x, l_u, l_xx, l_uu, l_xu)``.
    """
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    ex = x - ctx.target
    gx = x - ctx.x_tilde[k] + ctx.lam[k] / ctx.pen_x if ctx.pen_x > 0 else 0.0 * x
    gu = u - ctx.u_tilde[k] + ctx.zeta[k] / ctx.pen_u if ctx.pen_u > 0 else 0.0 * u
    cost = (
        0.5 * u @ ctx.R @ u
        + 0.5 * ex @ ctx.W_s @ ex
        + 0.5 * ctx.pen_x * gx @ gx
        + 0.5 * ctx.pen_u * gu @ gu
    )
    l_x = ctx.W_s @ ex + ctx.pen_x * (x - ctx.x_tilde[k]) + (ctx.lam[k] if ctx.pen_x > 0 else 0.0)
    l_u = ctx.R @ u + ctx.pen_u * (u - ctx.u_tilde[k]) + (ctx.zeta[k] if ctx.pen_u > 0 else 0.0)
    p, q = len(x), len(u)
    l_xx = ctx.W_s + ctx.pen_x * np.eye(p)
    l_uu = ctx.R + ctx.pen_u * np.eye(q)
    l_xu = np.zeros((p, q))
    return float(cost), l_x, l_u, l_xx, l_uu, l_xu


def terminal_value(x_N, theta: float, ctx: AugmentedCostContext):
    """Augmented terminal cost and its value expansion in ``(x_N, theta)``."""
    x_N = np.asarray(x_N, dtype=float)
    e = x_N - ctx.target
    p = len(x_N)
    V = 0.5 * e @ ctx.W_N @ e
    V_x = ctx.W_N @ e
    V_xx = ctx.W_N.copy()
    if ctx.pen_x > 0:
        g = x_N - ctx.x_tilde[-1] + ctx.lam[-1] / ctx.pen_x
        V += 0.5 * ctx.pen_x * g @ g
        V_x = V_x + ctx.pen_x * (x_N - ctx.x_tilde[-1]) + ctx.lam[-1]
        V_xx = V_xx + ctx.pen_x * np.eye(p)
    V_t, V_tt = 0.0, 0.0
    if ctx.pen_t > 0:
        g = theta - ctx.t_tilde + ctx.nu / ctx.pen_t
        V += 0.5 * ctx.pen_t * g * g
        V_t = ctx.pen_t * (theta - ctx.t_tilde) + ctx.nu
        V_tt = ctx.pen_t
    return float(V), ValueExpansion(V_x, float(V_t), V_xx, np.zeros(p), float(V_tt))


def _running_batch(X, U, ctx: AugmentedCostContext):
    """Vectorised stage costs over k = 0..N-1: total cost, l_x (N,p), l_u (N,q)."""
    Xr = X[:-1]
    ex = Xr - ctx.target
    cost = 0.5 * np.einsum("ki,ij,kj->", U, ctx.R, U) + 0.5 * np.einsum("ki,ij,kj->", ex, ctx.W_s, ex)
    l_x = ex @ ctx.W_s.T
    l_u = U @ ctx.R.T
    if ctx.pen_x > 0:
        d = Xr - ctx.x_tilde[:-1]
        g = d + ctx.lam[:-1] / ctx.pen_x
        cost += 0.5 * ctx.pen_x * np.sum(g * g)
        l_x = l_x + ctx.pen_x * d + ctx.lam[:-1]
    if ctx.pen_u > 0:
        d = U - ctx.u_tilde
        g = d + ctx.zeta / ctx.pen_u
        cost += 0.5 * ctx.pen_u * np.sum(g * g)
        l_u = l_u + ctx.pen_u * d + ctx.zeta
    return float(cost), l_x, l_u


def total_cost(traj: Trajectory, ctx: AugmentedCostContext) -> float:
    run, _, _ = _running_batch(traj.states, traj.controls, ctx)
    term, _ = terminal_value(traj.states[-1], traj.terminal_time, ctx)
    return run + term


def q_expansion(l_x, l_u, l_xx, l_uu, l_xu, f_x, f_u, f_theta, nxt: ValueExpansion) -> QExpansion:
    """Action-value expansion at one step from the next step's value expansion.

    ``f_theta`` is a length-p vector. The stage cost has no explicit
    dependence on the terminal time, so ``l_theta`` and friends vanish.
    """
    Vx, Vxx, Vxt = nxt.V_x, nxt.V_xx, nxt.V_xtheta
    Vxx_fx = Vxx @ f_x
    Vxx_fu = Vxx @ f_u
    Vxx_ft = Vxx @ f_theta
    return QExpansion(
        Q_x=l_x + f_x.T @ Vx,
        Q_u=l_u + f_u.T @ Vx,
        Q_theta=float(nxt.V_theta + f_theta @ Vx),
        Q_xx=l_xx + f_x.T @ Vxx_fx,
        Q_uu=l_uu + f_u.T @ Vxx_fu,
        Q_thetatheta=float(nxt.V_thetatheta + f_theta @ Vxx_ft + 2.0 * f_theta @ Vxt),
        Q_xu=l_xu + f_x.T @ Vxx_fu,
        Q_xtheta=f_x.T @ Vxx_ft + f_x.T @ Vxt,
        Q_utheta=f_u.T @ Vxx_ft + f_u.T @ Vxt,
    )


def _minimize_q(Q: QExpansion, reg: float):
    q = len(Q.Q_u)
    Quu_reg = Q.Q_uu + reg * np.eye(q)
    try:
        L = np.linalg.cholesky(Quu_reg)
    except np.linalg.LinAlgError:
        raise BackwardPassError("Q_uu not positive definite") from None

    def solve(b):
        return np.linalg.solve(L.T, np.linalg.solve(L, b))

    k = -solve(Q.Q_u)
    K = -solve(Q.Q_ux)
    K_t = -solve(Q.Q_utheta)
    return k, K, K_t


def _value_from_q(Q: QExpansion, k, K, K_t) -> ValueExpansion:
    Quu, Qux, Qut = Q.Q_uu, Q.Q_ux, Q.Q_utheta
    V_x = Q.Q_x + K.T @ (Quu @ k) + K.T @ Q.Q_u + Qux.T @ k
    V_xx = Q.Q_xx + K.T @ Quu @ K + K.T @ Qux + Qux.T @ K
    V_t = Q.Q_theta + K_t @ (Quu @ k) + K_t @ Q.Q_u + Qut @ k
    V_xt = Q.Q_xtheta + K.T @ (Quu @ K_t) + K.T @ Qut + Qux.T @ K_t
    V_tt = Q.Q_thetatheta + K_t @ Quu @ K_t + 2.0 * K_t @ Qut
    return ValueExpansion(V_x, float(V_t), 0.5 * (V_xx + V_xx.T), V_xt, float(V_tt))


@njit(cache=True, nogil=True)
def _backward_kernel(fx, fu, ft, l_x, l_u, l_xx, l_uu, Vx0, Vt, Vxx0, Vtt, reg, du_lo, du_hi):
    # explicit loops: the blocks are tiny and array temporaries dominate otherwise
    n, p = l_x.shape
    q = l_u.shape[1]
    k_ff = np.zeros((n, q))
    K_fb = np.zeros((n, q, p))
    K_th = np.zeros((n, q))
    Vx = Vx0.copy()
    Vxx = Vxx0.copy()
    Vxt = np.zeros(p)
    VxxA = np.empty((p, p))
    VxxB = np.empty((p, q))
    Vxxc = np.empty(p)
    Qx = np.empty(p)
    Qu = np.empty(q)
    Qxx = np.empty((p, p))
    Quu = np.empty((q, q))
    Qxu = np.empty((p, q))
    Qxt = np.empty(p)
    Qut = np.empty(q)
    inv = np.empty((q, q))
    k = np.empty(q)
    K = np.empty((q, p))
    Kt = np.empty(q)
    Quk = np.empty(q)
    QuKt = np.empty(q)
    QuK = np.empty((q, p))
    Vxx_new = np.empty((p, p))
    for t in range(n - 1, -1, -1):
        A, B, c = fx[t], fu[t], ft[t]
        for i in range(p):
            for j in range(p):
                acc = 0.0
                for m in range(p):
                    acc += Vxx[i, m] * A[m, j]
                VxxA[i, j] = acc
            for j in range(q):
                acc = 0.0
                for m in range(p):
                    acc += Vxx[i, m] * B[m, j]
                VxxB[i, j] = acc
            acc = 0.0
            for m in range(p):
                acc += Vxx[i, m] * c[m]
            Vxxc[i] = acc
        Qt = Vt
        Qtt = Vtt
        for m in range(p):
            Qt += c[m] * Vx[m]
            Qtt += c[m] * Vxxc[m] + 2.0 * c[m] * Vxt[m]
        for i in range(p):
            acc = l_x[t, i]
            for m in range(p):
                acc += A[m, i] * Vx[m]
            Qx[i] = acc
            for j in range(p):
                acc = l_xx[i, j]
                for m in range(p):
                    acc += A[m, i] * VxxA[m, j]
                Qxx[i, j] = acc
            for j in range(q):
                acc = 0.0
                for m in range(p):
                    acc += A[m, i] * VxxB[m, j]
                Qxu[i, j] = acc
            acc = 0.0
            for m in range(p):
                acc += A[m, i] * (Vxxc[m] + Vxt[m])
            Qxt[i] = acc
        for i in range(q):
            acc = l_u[t, i]
            for m in range(p):
                acc += B[m, i] * Vx[m]
            Qu[i] = acc
            for j in range(q):
                acc = l_uu[i, j]
                for m in range(p):
                    acc += B[m, i] * VxxB[m, j]
                Quu[i, j] = acc
            acc = 0.0
            for m in range(p):
                acc += B[m, i] * (Vxxc[m] + Vxt[m])
            Qut[i] = acc
        if not (np.all(np.isfinite(Quu)) and np.all(np.isfinite(Qxx)) and np.isfinite(Qtt)):
            return 1, t, k_ff, K_fb, K_th, Vx, Vt, Vxx, Vxt, Vtt
        if q == 1:
            d = Quu[0, 0] + reg
            if not d > 0.0:
                return 2, t, k_ff, K_fb, K_th, Vx, Vt, Vxx, Vxt, Vtt
            inv[0, 0] = 1.0 / d
        else:
            Quu_reg = Quu + reg * np.eye(q)
            if np.linalg.eigvalsh(0.5 * (Quu_reg + Quu_reg.T)).min() <= 0.0:
                return 2, t, k_ff, K_fb, K_th, Vx, Vt, Vxx, Vxt, Vtt
            inv[:, :] = np.linalg.inv(Quu_reg)
        for i in range(q):
            a = 0.0
            b = 0.0
            for j in range(q):
                a += inv[i, j] * Qu[j]
                b += inv[i, j] * Qut[j]
            k[i] = -a
            Kt[i] = -b
            for m in range(p):
                acc = 0.0
                for j in range(q):
                    acc += inv[i, j] * Qxu[m, j]
                K[i, m] = -acc
        if q == 1 and (k[0] <= du_lo[t] or k[0] >= du_hi[t] or du_lo[t] >= 0.0 or du_hi[t] <= 0.0):
            # bound active or control already on it: feedback could only
            # push past the bound, so the step there is open loop
            k[0] = min(max(k[0], du_lo[t]), du_hi[t])
            K[:] = 0.0
            Kt[:] = 0.0
        for i in range(q):
            a = 0.0
            b = 0.0
            for j in range(q):
                a += Quu[i, j] * k[j]
                b += Quu[i, j] * Kt[j]
            Quk[i] = a
            QuKt[i] = b
            for m in range(p):
                acc = 0.0
                for j in range(q):
                    acc += Quu[i, j] * K[j, m]
                QuK[i, m] = acc
        Vt = Qt
        Vtt = Qtt
        for i in range(q):
            Vt += Kt[i] * (Quk[i] + Qu[i]) + Qut[i] * k[i]
            Vtt += Kt[i] * QuKt[i] + 2.0 * Kt[i] * Qut[i]
        for a_ in range(p):
            acc = Qx[a_]
            acc_t = Qxt[a_]
            for i in range(q):
                acc += K[i, a_] * (Quk[i] + Qu[i]) + Qxu[a_, i] * k[i]
                acc_t += K[i, a_] * (QuKt[i] + Qut[i]) + Qxu[a_, i] * Kt[i]
            Vx[a_] = acc
            Vxt[a_] = acc_t
            for b_ in range(p):
                acc = Qxx[a_, b_]
                for i in range(q):
                    acc += K[i, a_] * QuK[i, b_] + K[i, a_] * Qxu[b_, i] + Qxu[a_, i] * K[i, b_]
                Vxx_new[a_, b_] = acc
        for a_ in range(p):
            for b_ in range(p):
                Vxx[a_, b_] = 0.5 * (Vxx_new[a_, b_] + Vxx_new[b_, a_])
        k_ff[t] = k
        K_fb[t] = K
        K_th[t] = Kt
    return 0, -1, k_ff, K_fb, K_th, Vx, Vt, Vxx, Vxt, Vtt


@njit(cache=True, nogil=True)
def _forward_kernel(step, params, X, U, k_ff, K_fb, K_th, alpha, dth, theta, wmax):
    n = U.shape[0]
    new_X = np.empty_like(X)
    new_U = np.empty_like(U)
    new_X[0] = X[0]
    for t in range(n):
        dx = new_X[t] - X[t]
        u = U[t] + alpha * k_ff[t] + K_fb[t] @ dx + K_th[t] * dth
        for j in range(u.shape[0]):
            u[j] = min(max(u[j], -wmax), wmax)
        new_U[t] = u
        new_X[t + 1] = step(new_X[t], u, theta, params)
    return new_X, new_U


def _stage_terms(traj: Trajectory, ctx: AugmentedCostContext, model: UnicycleModel):
    X, U, theta = traj.states, traj.controls, traj.terminal_time
    p, q = X.shape[1], U.shape[1]
    fx, fu, ft = model.derivatives_batch(X[:-1], U, theta)
    _, l_x, l_u = _running_batch(X, U, ctx)
    l_xx = ctx.W_s + ctx.pen_x * np.eye(p)
    l_uu = ctx.R + ctx.pen_u * np.eye(q)
    return fx, fu, ft, l_x, l_u, l_xx, l_uu


def _step_limits(traj: Trajectory, model: UnicycleModel, box: bool):
    u = traj.controls[:, 0]
    if not box:
        return np.full_like(u, -np.inf), np.full_like(u, np.inf)
    lo, hi = -model.omega_max - u, model.omega_max - u
    # controls within rounding of the bound count as on it
    tol = 1e-12 * model.omega_max
    return np.where(lo > -tol, 0.0, lo), np.where(hi < tol, 0.0, hi)


def _theta_step(V: ValueExpansion, reg: float) -> float:
    # Newton step on the terminal time from the step-0 expansion (dx_0 = 0)
    curv = V.V_thetatheta + reg
    return float(-V.V_theta / curv) if curv > 0 else 0.0


def backward_pass(
    traj: Trajectory,
    ctx: AugmentedCostContext,
    model: UnicycleModel,
    reg: float = REG_INIT,
    box: bool = True,
) -> tuple[GainSchedule, ValueExpansion]:
    """Gain schedule and step-0 value expansion (compiled recursion).

    With ``box`` the feedforward step of a single control input is cut at the
    turn-rate bound and its feedback gains dropped wherever the bound binds.
    Without it the bound is only enforced by clamping in the forward pass.
    """
    fx, fu, ft, l_x, l_u, l_xx, l_uu = _stage_terms(traj, ctx, model)
    du_lo, du_hi = _step_limits(traj, model, box)
    _, V = terminal_value(traj.states[-1], traj.terminal_time, ctx)
    status, where, k_ff, K_fb, K_th, Vx, Vt, Vxx, Vxt, Vtt = _backward_kernel(
        fx,
        fu,
        ft,
        np.ascontiguousarray(l_x),
        np.ascontiguousarray(l_u),
        l_xx,
        l_uu,
        V.V_x,
        V.V_theta,
        V.V_xx,
        V.V_thetatheta,
        reg,
        du_lo,
        du_hi,
    )
    if status == 1:
        raise BackwardPassError(f"non-finite Q expansion at step {where}")
    if status == 2:
        raise BackwardPassError(f"Q_uu not positive definite at step {where}")
    V0 = ValueExpansion(Vx, float(Vt), Vxx, Vxt, float(Vtt))
    return GainSchedule(k_ff, K_fb, K_th, _theta_step(V0, reg), V0), V0


def backward_pass_reference(
    traj: Trajectory,
    ctx: AugmentedCostContext,
    model: UnicycleModel,
    reg: float = REG_INIT,
    box: bool = True,
) -> tuple[GainSchedule, ValueExpansion]:
    """Plain-numpy recursion that also keeps every Q block for inspection."""
    fx, fu, ft, l_x, l_u, l_xx, l_uu = _stage_terms(traj, ctx, model)
    du_lo, du_hi = _step_limits(traj, model, box)
    n, q = traj.controls.shape
    p = traj.states.shape[1]
    l_xu = np.zeros((p, q))
    _, V = terminal_value(traj.states[-1], traj.terminal_time, ctx)
    k_ff = np.zeros((n, q))
    K_fb = np.zeros((n, q, p))
    K_th = np.zeros((n, q))
    blocks = []
    for t in range(n - 1, -1, -1):
        Q = q_expansion(l_x[t], l_u[t], l_xx, l_uu, l_xu, fx[t], fu[t], ft[t], V)
        if not (
            np.all(np.isfinite(Q.Q_uu)) and np.all(np.isfinite(Q.Q_xx)) and np.isfinite(Q.Q_thetatheta)
        ):
            raise BackwardPassError(f"non-finite Q expansion at step {t}")
        k, K, K_t = _minimize_q(Q, reg)
        on_bound = du_lo[t] >= 0.0 or du_hi[t] <= 0.0
        if q == 1 and (on_bound or not du_lo[t] < k[0] < du_hi[t]):
            k = np.clip(k, du_lo[t], du_hi[t])
            K, K_t = np.zeros_like(K), np.zeros_like(K_t)
        V = _value_from_q(Q, k, K, K_t)
        k_ff[t], K_fb[t], K_th[t] = k, K, K_t
        blocks.append(Q)
    blocks.reverse()
    return GainSchedule(k_ff, K_fb, K_th, _theta_step(V, reg), V, blocks), V


def forward_pass(
    traj: Trajectory,
    gains: GainSchedule,
    damping: float,
    ctx: AugmentedCostContext,
    model: UnicycleModel,
    t_bounds: tuple[float, float],
    optimize_time: bool = True,
) -> Trajectory:
    """Candidate trajectory from a damped step along the gain schedule.

    Controls are clamped element-wise to ``[-omega_max, omega_max]`` and the
    terminal time to ``t_bounds``.
    """
    if not 0 < damping <= 1:
        raise ValueError("damping must lie in (0, 1]")
    theta = traj.terminal_time
    if optimize_time:
        new_theta = min(max(theta + damping * gains.dtheta, t_bounds[0]), t_bounds[1])
    else:
        new_theta = theta
    new_X, new_U = _forward_kernel(
        model.step_kernel,
        model.kernel_params,
        traj.states,
        traj.controls,
        gains.k,
        gains.K,
        gains.K_theta,
        float(damping),
        float(new_theta - theta),
        float(new_theta),
        float(model.omega_max),
    )
    if not np.all(np.isfinite(new_X)):
        raise FloatingPointError("non-finite forward pass")
    return Trajectory(new_X, new_U, float(new_theta))


def solve_local(
    traj_init: Trajectory,
    ctx: AugmentedCostContext,
    model: UnicycleModel,
    t_bounds: tuple[float, float],
    max_iters: int = 50,
    cost_tol: float = 1e-6,
    damping: float = 0.4,
    optimize_time: bool = True,
) -> SolveResult:
    """Iterate backward/forward passes from ``traj_init``.

    A candidate is accepted only if it strictly lowers the augmented cost;
    otherwise the damping is halved for that iteration. Stops when the
    relative decrease falls below ``cost_tol``.
    """
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    traj = traj_init.copy()
    # the caller may hand over a trajectory that violates the bounds
    traj.controls = np.clip(traj.controls, -model.omega_max, model.omega_max)
    traj.terminal_time = min(max(traj.terminal_time, t_bounds[0]), t_bounds[1])
    traj.states = model.rollout(traj.states[0], traj.controls, traj.terminal_time)
    cost = total_cost(traj, ctx)
    reg = REG_INIT
    status = "max_iters"
    it = 0
    while it < max_iters:
        it += 1
        try:
            gains, _ = backward_pass(traj, ctx, model, reg)
        except BackwardPassError:
            reg *= REG_FACTOR
            if reg > REG_MAX:
                log.warning("backward pass failed at maximum regularisation")
                status = "degraded"
                break
            continue
        accepted = False
        alpha = damping
        for _ in range(MAX_HALVINGS + 1):
            try:
                cand = forward_pass(traj, gains, alpha, ctx, model, t_bounds, optimize_time)
                cand_cost = total_cost(cand, ctx)
            except FloatingPointError:
                cand_cost = np.inf
            if cand_cost < cost:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            # no descent along the damped direction: local minimum within tolerance
            status = "converged"
            break
        decrease = cost - cand_cost
        traj, cost = cand, cand_cost
        reg = max(REG_INIT, reg / REG_FACTOR)
        if decrease < cost_tol * max(1.0, abs(cost)):
            status = "converged"
            break
    return SolveResult(traj, float(cost), it, status)
