"""Per-agent node: local trajectory solve, safe update, dual ascent."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import UnicycleModel
from .model import (
    DualSet,
    GlobalBroadcast,
    NeighborGraph,
    Penalties,
    ResidualParts,
    SafeCopies,
    Trajectory,
    WorkerUpdate,
    stack_neighborhood,
)
from .pddp import AugmentedCostContext, solve_local
from .safe_update import (
    ObstacleSet,
    ProximitySpec,
    TimeSequenceSpec,
    control_safe_update,
    state_safe_update,
    time_safe_update,
)


class InitializationError(RuntimeError):
    pass


@dataclass(frozen=True)
class LocalProblem:
    """Static data of one agent's subproblem."""

    agent: int
    neighbors: tuple[int, ...]
    model: UnicycleModel
    x0: np.ndarray
    target: np.ndarray
    W_N: np.ndarray
    R: np.ndarray
    W_s: np.ndarray
    t_bounds: tuple[float, float]
    theta_init: float
    obstacles: ObstacleSet
    proximity: ProximitySpec
    sequence: TimeSequenceSpec
    penalties: Penalties
    damping: float = 0.4
    max_iters: int = 50
    cost_tol: float = 1e-6
    init_max_iters: int = 300
    # penalties grow by this factor per worker iteration, up to cap times the base
    penalty_growth: float = 1.0
    penalty_cap: float = 1.0

    @property
    def n_steps(self) -> int:
        return self.model.horizon_steps

    @property
    def p(self) -> int:
        return self.model.state_dim


def unconstrained_solve(prob: LocalProblem) -> Trajectory:
    """Plain DDP towards the target at the initial terminal-time guess."""
    n, q = prob.n_steps, prob.model.control_dim
    controls = np.zeros((n, q))
    traj = Trajectory(prob.model.rollout(prob.x0, controls, prob.theta_init), controls, prob.theta_init)
    ctx = AugmentedCostContext.unpenalized(prob.target, prob.W_N, prob.R, prob.W_s, n)
    res = solve_local(
        traj,
        ctx,
        prob.model,
        prob.t_bounds,
        max_iters=prob.init_max_iters,
        cost_tol=prob.cost_tol,
        damping=prob.damping,
        optimize_time=False,
    )
    if res.status == "degraded" or not np.all(np.isfinite(res.traj.states)):
        raise InitializationError(f"unconstrained solve diverged for agent {prob.agent}")
    return res.traj


@dataclass
class WorkerNode:
    problem: LocalProblem
    traj: Trajectory
    safe: SafeCopies
    duals: DualSet
    z_aug: np.ndarray  # latest consensus states for the neighborhood
    s_aug: np.ndarray
    clock: int = 0
    status: str = "running"  # running | converged | degraded | stopped
    last_master_clock: int = -1
    pending: WorkerUpdate | None = None
    solver_status: str = ""
    infeasible_steps: int = 0
    prev_safe: SafeCopies | None = field(default=None, repr=False)

    @property
    def id(self) -> int:
        return self.problem.agent

    @property
    def penalties(self) -> Penalties:
        return penalties_at(self.problem, self.clock)


def penalties_at(prob: LocalProblem, clock: int) -> Penalties:
    if prob.penalty_growth == 1.0:
        return prob.penalties
    scale = min(prob.penalty_growth**clock, prob.penalty_cap)
    return prob.penalties.scaled(scale)


def initialize(prob: LocalProblem, graph: NeighborGraph, initial_trajs: dict[int, Trajectory]) -> WorkerNode:
    """Build a worker from the unconstrained solutions of its neighborhood.

    ``initial_trajs`` must contain every agent in the neighbor list; this is
    the single peer-to-peer exchange of the protocol.
    """
    own = initial_trajs[prob.agent].copy()
    states = {j: initial_trajs[j].states for j in prob.neighbors}
    times = {j: initial_trajs[j].terminal_time for j in prob.neighbors}
    x_aug = stack_neighborhood(states, graph, prob.agent)
    t_aug = stack_neighborhood(times, graph, prob.agent)
    safe = SafeCopies(own.controls.copy(), x_aug, t_aug, prob.p)
    duals = DualSet.zeros(prob.n_steps, prob.p, prob.model.control_dim, len(prob.neighbors), prob.penalties)
    return WorkerNode(prob, own, safe, duals, x_aug.copy(), t_aug.copy())


def _cost_context(node: WorkerNode) -> AugmentedCostContext:
    prob, pen = node.problem, node.penalties
    return AugmentedCostContext(
        target=prob.target,
        W_N=prob.W_N,
        R=prob.R,
        W_s=prob.W_s,
        x_tilde=node.safe.x_tilde,
        u_tilde=node.safe.u_tilde,
        t_tilde=node.safe.t_tilde,
        lam=node.duals.lam,
        zeta=node.duals.zeta,
        nu=node.duals.nu,
        pen_x=pen.pen_x,
        pen_u=pen.pen_u,
        pen_t=pen.pen_t,
    )


def safe_update(node: WorkerNode) -> SafeCopies:
    prob, d, pen = node.problem, node.duals, node.penalties
    state = state_safe_update(
        node.traj.states, d.lam, pen.pen_x, node.z_aug, d.y, pen.pen_xa, prob.obstacles, prob.proximity, prob.p
    )
    node.infeasible_steps = int(state.infeasible.sum())
    u_t = control_safe_update(node.traj.controls, d.zeta, pen.pen_u, prob.model.omega_max)
    t_aug = time_safe_update(
        node.traj.terminal_time, d.nu, pen.pen_t, node.s_aug, d.eta, pen.pen_ta, prob.sequence, prob.t_bounds
    )
    return SafeCopies(u_t, state.x_tilde_aug, t_aug, prob.p)


def _residual_parts(node: WorkerNode, prev: SafeCopies) -> ResidualParts:
    tr, sf, d = node.traj, node.safe, node.duals

    def sq(a):
        return float(np.sum(np.square(a)))

    return ResidualParts(
        u_gap=sq(tr.controls - sf.u_tilde),
        u_norm=sq(tr.controls),
        ut_norm=sq(sf.u_tilde),
        ut_step=sq(sf.u_tilde - prev.u_tilde),
        x_gap=sq(tr.states - sf.x_tilde),
        x_norm=sq(tr.states),
        xt_norm=sq(sf.x_tilde),
        xt_step=sq(sf.x_tilde - prev.x_tilde),
        t_gap=(tr.terminal_time - sf.t_tilde) ** 2,
        t_norm=tr.terminal_time**2,
        tt_norm=sf.t_tilde**2,
        tt_step=(sf.t_tilde - prev.t_tilde) ** 2,
        zeta_norm=sq(d.zeta),
        lam_norm=sq(d.lam),
        nu_norm=d.nu**2,
    )


def compute_update(node: WorkerNode) -> WorkerUpdate:
    """Local solve, safe update and the message for the master.

    Uses whatever consensus values the node last received, however stale.
    """
    prob = node.problem
    res = solve_local(
        node.traj,
        _cost_context(node),
        prob.model,
        prob.t_bounds,
        max_iters=prob.max_iters,
        cost_tol=prob.cost_tol,
        damping=prob.damping,
    )
    node.traj = res.traj
    node.solver_status = res.status
    if res.status == "degraded":
        node.status = "degraded"
    prev = node.safe
    node.safe = safe_update(node)
    node.prev_safe = prev
    upd = WorkerUpdate(
        sender=node.id,
        worker_clock=node.clock,
        x_tilde_aug=node.safe.x_tilde_aug.copy(),
        t_tilde_aug=node.safe.t_tilde_aug.copy(),
        y=node.duals.y.copy(),
        eta=node.duals.eta.copy(),
        parts=_residual_parts(node, prev),
        penalties=node.penalties,
    )
    node.pending = upd
    return upd


def merge_broadcast(node: WorkerNode, msg: GlobalBroadcast) -> None:
    """Overwrite the neighborhood consensus blocks the master has values for."""
    p = node.problem.p
    for b, ok in enumerate(msg.known):
        if ok:
            node.z_aug[:, b * p : (b + 1) * p] = msg.z_aug[:, b * p : (b + 1) * p]
            node.s_aug[b] = msg.s_aug[b]
    node.last_master_clock = msg.master_clock


def dual_update(node: WorkerNode) -> DualSet:
    """One ascent step on every multiplier, penalties as step sizes."""
    d, pen, tr, sf = node.duals, node.penalties, node.traj, node.safe
    return DualSet(
        zeta=d.zeta + pen.pen_u * (tr.controls - sf.u_tilde),
        lam=d.lam + pen.pen_x * (tr.states - sf.x_tilde),
        nu=d.nu + pen.pen_t * (tr.terminal_time - sf.t_tilde),
        y=d.y + pen.pen_xa * (sf.x_tilde_aug - node.z_aug),
        eta=d.eta + pen.pen_ta * (sf.t_tilde_aug - node.s_aug),
        penalties=pen,
    )


def apply_broadcast(node: WorkerNode, msg: GlobalBroadcast) -> None:
    """Consume a broadcast: refresh consensus copies, update duals, tick."""
    if msg.master_clock <= node.last_master_clock:
        return
    merge_broadcast(node, msg)
    node.duals = dual_update(node)
    node.clock += 1
    node.pending = None


def worker_iteration(node: WorkerNode, exchange) -> WorkerNode:
    """One synchronous round: ``exchange(update)`` returns the broadcast."""
    upd = compute_update(node)
    msg = exchange(upd)
    if msg is None:
        node.status = "stopped"
        return node
    apply_broadcast(node, msg)
    return node
