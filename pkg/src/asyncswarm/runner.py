"""Build a swarm from a scenario and run it to convergence or a cap."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass

import numpy as np

from .dynamics import UnicycleModel
from .master import Master, StopRule
from .model import NeighborGraph, Penalties, build_neighbor_graph
from .network import LinkModel, Simulation, SpeedProfile
from .safe_update import ObstacleSet, ProximitySpec, TimeSequenceSpec
from .scenario import ScenarioConfig, to_dict
from .telemetry import RunResult
from .worker import LocalProblem, WorkerNode, initialize, unconstrained_solve

log = logging.getLogger(__name__)


@dataclass
class Swarm:
    config: ScenarioConfig
    graph: NeighborGraph
    problems: list[LocalProblem]
    workers: list[WorkerNode]
    master: Master


def local_problems(cfg: ScenarioConfig, graph: NeighborGraph) -> list[LocalProblem]:
    model = UnicycleModel(cfg.model.speed, cfg.model.horizon_steps, cfg.model.omega_max)
    x0s, targets = cfg.initial_states(), cfg.target_states()
    obstacles = ObstacleSet(np.array(cfg.obstacles.centers).reshape(-1, 2), np.array(cfg.obstacles.radii), cfg.obstacles.safe_margin)
    prox = ProximitySpec(cfg.proximity.d_col, cfg.proximity.d_con)
    pen_cfg = to_dict(cfg.penalties)
    growth, cap = pen_cfg.pop("growth"), pen_cfg.pop("cap")
    pen = Penalties(**pen_cfg)
    rank = cfg.arrival_rank()
    c = cfg.cost
    out = []
    for i in range(cfg.num_agents):
        nb = graph.neighbors(i)
        out.append(
            LocalProblem(
                agent=i,
                neighbors=nb,
                model=model,
                x0=x0s[i],
                target=targets[i],
                W_N=c.terminal_weight * np.eye(3),
                R=c.control_weight * np.eye(1),
                W_s=c.state_weight * np.eye(3),
                t_bounds=(cfg.time.t_min, cfg.time.t_max),
                theta_init=cfg.time.initial_guess,
                obstacles=obstacles,
                proximity=prox,
                sequence=TimeSequenceSpec.for_agent(nb, rank, cfg.sequence.interval, cfg.sequence.relax),
                penalties=pen,
                damping=cfg.pddp.damping,
                max_iters=cfg.pddp.max_iters,
                cost_tol=cfg.pddp.cost_tol,
                init_max_iters=cfg.pddp.init_max_iters,
                penalty_growth=growth,
                penalty_cap=cap,
            )
        )
    return out


def build_swarm(cfg: ScenarioConfig) -> Swarm:
    graph = build_neighbor_graph(cfg.initial_states()[:, :2], cfg.neighborhood_size)
    problems = local_problems(cfg, graph)
    # the one neighbor exchange: everyone's unconstrained plan
    initial = {p.agent: unconstrained_solve(p) for p in problems}
    workers = [initialize(p, graph, initial) for p in problems]
    proto = cfg.effective_protocol()
    master = Master(
        graph,
        cfg.model.horizon_steps,
        3,
        problems[0].penalties,
        barrier_S=proto.barrier,
        delay_bound=proto.delay_bound,
    )
    return Swarm(cfg, graph, problems, workers, master)


def simulate(swarm: Swarm, seed: int | None = None, execution: str = "inline") -> tuple[RunResult, Simulation]:
    cfg = swarm.config
    proto = cfg.effective_protocol()
    seed = proto.seed if seed is None else int(seed)
    m = cfg.num_agents
    sim = Simulation(
        swarm.master,
        swarm.workers,
        LinkModel(proto.p_con, seed, symmetric=proto.symmetric_loss),
        SpeedProfile(seed, m, *proto.speed_range),
        StopRule(cfg.stopping.eps_abs, cfg.stopping.eps_rel, proto.max_commits),
        link_latency=proto.link_latency,
        retry_backoff=proto.retry_backoff,
        max_time=proto.max_time,
        execution=execution,
    )
    outcome = sim.run()
    status = "converged" if outcome.status == "converged" else "cap"
    ws = swarm.workers
    result = RunResult(
        trajectories=[w.traj.copy() for w in ws],
        terminal_times=np.array([w.traj.terminal_time for w in ws]),
        consensus_times=swarm.master.consensus.s.copy(),
        safe_times=np.array([w.safe.t_tilde for w in ws]),
        history=list(swarm.master.history),
        status=status,
        commits=outcome.commits,
        worker_clocks=[w.clock for w in ws],
        virtual_time=outcome.virtual_time,
        wall_time=outcome.wall_time,
        config=to_dict(cfg),
        seed=seed,
        infeasible_steps=sum(w.infeasible_steps for w in ws),
    )
    return result, sim


def run_scenario(cfg: ScenarioConfig, seed: int | None = None, execution: str = "inline"):
    t0 = time.perf_counter()
    swarm = build_swarm(cfg)
    result, sim = simulate(swarm, seed, execution)
    result.wall_time = time.perf_counter() - t0
    return result, sim
