"""Projection of an agent's copy variables onto its local constraint sets.

State copies are handled per time step, vectorised over the horizon, by
Dykstra's alternating projections in the metric induced by the quadratic
weights. Every individual set (outside a disc, inside/outside an annulus
between two points) has a closed-form weighted projection. Control copies
and terminal-time copies have exact closed-form / active-set solutions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import ConfigurationError

FEAS_TOL = 1e-9
MAX_SWEEPS = 100
MAX_REPAIR_SWEEPS = 200


@dataclass(frozen=True)
class ObstacleSet:
    centers: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))  # (n_obs, 2)
    radii: np.ndarray = field(default_factory=lambda: np.zeros(0))
    safe_margin: float = 0.0

    def __post_init__(self):
        c = np.asarray(self.centers, dtype=float).reshape(-1, 2)
        r = np.asarray(self.radii, dtype=float).reshape(-1)
        object.__setattr__(self, "centers", c)
        object.__setattr__(self, "radii", r)
        if len(c) != len(r):
            raise ConfigurationError("obstacle centers and radii differ in length")
        if np.any(r <= 0):
            raise ConfigurationError("obstacle radius must be positive")
        if self.safe_margin < 0:
            raise ConfigurationError("obstacle safe margin must be non-negative")

    @property
    def clearances(self) -> np.ndarray:
        return self.radii + self.safe_margin


@dataclass(frozen=True)
class ProximitySpec:
    d_col: float = 10.0
    d_con: float = 390.0

    def __post_init__(self):
        if not 0 < self.d_col < self.d_con:
            raise ConfigurationError("need 0 < d_col < d_con")


@dataclass(frozen=True)
class TimeSequenceSpec:
    """Relaxed arrival-order constraints seen by one agent.

    Row ``r`` of ``A`` reads ``t_self - t_{neighbor r}``; the constraint is
    ``|A t_aug - t_delta| <= relax_eps`` element-wise. Only neighbors other
    than the agent itself get a row.
    """

    A: np.ndarray  # (|N_i| - 1, |N_i|)
    t_delta: np.ndarray
    relax_eps: np.ndarray

    @classmethod
    def for_agent(cls, neighbors, arrival_rank, interval: float, eps: float) -> "TimeSequenceSpec":
        """Build from a global arrival ranking: agent ``j`` should land
        ``interval * arrival_rank[j]`` after the first one."""
        n = len(neighbors)
        i = neighbors[0]
        A = np.zeros((n - 1, n))
        deltas = np.zeros(n - 1)
        for r, j in enumerate(neighbors[1:]):
            A[r, 0] = 1.0
            A[r, r + 1] = -1.0
            deltas[r] = interval * (arrival_rank[i] - arrival_rank[j])
        return cls(A, deltas, np.full(n - 1, float(eps)))

    def __post_init__(self):
        if np.any(np.asarray(self.relax_eps) < 0):
            raise ConfigurationError("time relaxation must be non-negative")
        A = np.asarray(self.A)
        if A.size and not (np.all(A[:, 0] == 1.0) and np.all(A[:, 1:] == -np.eye(A.shape[0]))):
            raise ConfigurationError("time-sequence rows must read t_self - t_neighbor")

    def violation(self, t_aug) -> float:
        if not len(self.t_delta):
            return 0.0
        gap = np.abs(self.A @ np.asarray(t_aug) - self.t_delta) - self.relax_eps
        return float(max(gap.max(), 0.0))


# -- state copies ------------------------------------------------------------


def _project_outside_disc(p, center, radius):
    """Radial projection of points ``p`` (K, 2) onto {||p - center|| >= radius}."""
    d = p - center
    r = np.hypot(d[:, 0], d[:, 1])
    inside = r < radius
    if not np.any(inside):
        return p
    out = p.copy()
    safe_r = np.where(r > 0, r, 1.0)
    direction = np.where((r > 0)[:, None], d / safe_r[:, None], np.array([1.0, 0.0]))
    out[inside] = center + radius * direction[inside]
    return out


def project_pair(p_a, p_b, w_a, w_b, lo=0.0, hi=np.inf):
    """Weighted projection of two point sets onto lo <= ||p_a - p_b|| <= hi.

    Minimises ``w_a ||p_a' - p_a||^2 + w_b ||p_b' - p_b||^2``: the weighted
    centroid stays fixed and the separation is clamped radially.
    """
    diff = p_a - p_b
    dist = np.hypot(diff[:, 0], diff[:, 1])
    target = np.clip(dist, lo, hi)
    move = target != dist
    if not np.any(move):
        return p_a, p_b
    safe = np.where(dist > 0, dist, 1.0)
    direction = np.where((dist > 0)[:, None], diff / safe[:, None], np.array([1.0, 0.0]))
    delta = (target - dist)[:, None] * direction
    share_a = w_b / (w_a + w_b)
    share_b = w_a / (w_a + w_b)
    new_a = np.where(move[:, None], p_a + share_a * delta, p_a)
    new_b = np.where(move[:, None], p_b - share_b * delta, p_b)
    return new_a, new_b


def _constraint_sets(n_blocks, obstacles: ObstacleSet, prox: ProximitySpec | None):
    """(kind, index, lo, hi) in repair-priority order: connectivity first, collision last."""
    sets = []
    if prox is not None:
        sets += [("pair", j, 0.0, prox.d_con) for j in range(1, n_blocks)]
        sets += [("pair", j, prox.d_col, np.inf) for j in range(1, n_blocks)]
    sets += [("obs", o, obstacles.clearances[o], None) for o in range(len(obstacles.radii))]
    return sets


def _apply(kind, idx, lo, hi, P, weights, obstacles):
    """Project position blocks P (K, n_blocks, 2) onto one set; returns a new array."""
    out = P.copy()
    if kind == "obs":
        out[:, 0] = _project_outside_disc(P[:, 0], obstacles.centers[idx], lo)
    else:
        out[:, 0], out[:, idx] = project_pair(P[:, 0], P[:, idx], weights[0], weights[idx], lo, hi)
    return out


def constraint_violation(P, obstacles: ObstacleSet, prox: ProximitySpec | None) -> np.ndarray:
    """Worst violation (metres) per time step for positions P (K, n_blocks, 2)."""
    viol = np.zeros(P.shape[0])
    for o in range(len(obstacles.radii)):
        d = np.hypot(*(P[:, 0] - obstacles.centers[o]).T)
        viol = np.maximum(viol, obstacles.clearances[o] - d)
    if prox is not None:
        for j in range(1, P.shape[1]):
            d = np.hypot(*(P[:, 0] - P[:, j]).T)
            viol = np.maximum(viol, np.maximum(prox.d_col - d, d - prox.d_con))
    return viol


@dataclass
class StateSafeResult:
    x_tilde_aug: np.ndarray  # (N+1, p * n_blocks)
    infeasible: np.ndarray  # (N+1,) bool
    sweeps: int


def state_safe_update(
    x,
    lam,
    pen_x: float,
    z_aug,
    y,
    pen_xa: float,
    obstacles: ObstacleSet,
    prox: ProximitySpec | None,
    p: int = 3,
) -> StateSafeResult:
    """Update the stacked state copies of one agent over the whole horizon.

    Block 0 is the agent's own copy, pulled by both the primal trajectory
    (weight ``pen_x``) and its consensus value (weight ``pen_xa``); other
    blocks only see their consensus value. The first two components of each
    block are planar positions and carry the constraints.
    """
    x = np.asarray(x, dtype=float)
    z_aug = np.asarray(z_aug, dtype=float)
    y = np.asarray(y, dtype=float)
    n_steps = x.shape[0]
    n_blocks = z_aug.shape[1] // p
    target = (z_aug - y / pen_xa).reshape(n_steps, n_blocks, p)
    target[:, 0] = (pen_x * x + lam + pen_xa * target[:, 0]) / (pen_x + pen_xa)
    weights = np.full(n_blocks, pen_xa)
    weights[0] = pen_x + pen_xa

    P = target[:, :, :2].copy()
    sets = _constraint_sets(n_blocks, obstacles, prox)
    sweeps = 0
    if sets:
        incr = [np.zeros_like(P) for _ in sets]
        for sweeps in range(1, MAX_SWEEPS + 1):
            prev = P
            for s, (kind, idx, lo, hi) in enumerate(sets):
                Yp = P + incr[s]
                P = _apply(kind, idx, lo, hi, Yp, weights, obstacles)
                incr[s] = Yp - P
            if np.max(np.abs(P - prev)) <= FEAS_TOL:
                break
        # plain cyclic projections until feasible; later sets win on conflicts
        for _ in range(MAX_REPAIR_SWEEPS):
            if constraint_violation(P, obstacles, prox).max() <= FEAS_TOL:
                break
            for kind, idx, lo, hi in sets:
                P = _apply(kind, idx, lo, hi, P, weights, obstacles)
    out = target.copy()
    out[:, :, :2] = P
    infeasible = constraint_violation(P, obstacles, prox) > FEAS_TOL
    return StateSafeResult(out.reshape(n_steps, n_blocks * p), infeasible, sweeps)


# -- control copies ----------------------------------------------------------


def control_safe_update(u, zeta, pen_u: float, omega_max: float) -> np.ndarray:
    return np.clip(np.asarray(u, dtype=float) + np.asarray(zeta, dtype=float) / pen_u, -omega_max, omega_max)


# -- terminal-time copies ----------------------------------------------------


def _time_objective(tau, c0, w0, c, w, lo, hi):
    d = np.maximum(lo + tau - c, 0.0) + np.maximum(c - (hi + tau), 0.0)
    return w0 * (tau - c0) ** 2 + np.sum(w * d * d)


def time_safe_update(
    t: float,
    nu: float,
    pen_t: float,
    s_aug,
    eta,
    pen_ta: float,
    seq: TimeSequenceSpec,
    t_bounds: tuple[float, float],
) -> np.ndarray:
    """Exact minimiser of the terminal-time copy subproblem.

    For a fixed own copy ``tau`` each neighbor copy is independently clamped
    into its admissible window ``[tau - delta - eps, tau - delta + eps]``, so
    the problem reduces to a convex piecewise quadratic in ``tau``; every
    piece is minimised in closed form and the best candidate kept.
    Returns the stacked copies (own time first).
    """
    s_aug = np.asarray(s_aug, dtype=float)
    eta = np.asarray(eta, dtype=float)
    w0 = pen_t + pen_ta
    c0 = (pen_t * t + nu + pen_ta * s_aug[0] - eta[0]) / w0
    c = s_aug[1:] - eta[1:] / pen_ta
    # window of neighbor j relative to tau: [tau + lo_j, tau + hi_j]
    lo = -seq.t_delta - seq.relax_eps
    hi = -seq.t_delta + seq.relax_eps
    w = np.full(len(c), pen_ta)
    t_min, t_max = t_bounds

    # breakpoints where a neighbor term switches between clamped and free
    knots = np.sort(np.concatenate([c - hi, c - lo, [t_min, t_max]]))
    knots = knots[(knots >= t_min) & (knots <= t_max)]
    best_tau, best_val = None, np.inf
    edges = np.concatenate([[t_min], knots, [t_max]])
    for a, b in zip(edges[:-1], edges[1:]):
        mid = 0.5 * (a + b)
        above = mid > c - lo  # neighbor window lower edge exceeds its target
        below = mid < c - hi
        num = w0 * c0 + np.sum(w[above] * (c[above] - lo[above])) + np.sum(w[below] * (c[below] - hi[below]))
        den = w0 + np.sum(w[above]) + np.sum(w[below])
        cand = min(max(num / den, a), b)
        val = _time_objective(cand, c0, w0, c, w, lo, hi)
        if val < best_val:
            best_tau, best_val = cand, val
    tau = float(best_tau)
    out = np.empty(len(s_aug))
    out[0] = tau
    out[1:] = np.clip(c, tau + lo, tau + hi)
    return out
