"""Coordinator: partial barrier, bounded delay, consensus averaging."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .model import (
    ConfigurationError,
    ConsensusState,
    GlobalBroadcast,
    NeighborGraph,
    Penalties,
    WorkerUpdate,
)
from .telemetry import ConsensusSums, ResidualReport, check_stop, residuals_from_parts

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CommitDecision:
    ready: bool
    committed_set: frozenset[int]


@dataclass(frozen=True)
class StopRule:
    eps_abs: float = 5e-4
    eps_rel: float = 6e-2
    max_commits: int = 2000


@dataclass
class Master:
    graph: NeighborGraph
    n_steps: int
    p: int
    penalties: Penalties
    barrier_S: int
    delay_bound: int
    clock: int = 0
    staleness: np.ndarray = field(default=None)
    mailbox: dict[int, WorkerUpdate] = field(default_factory=dict)
    arrived: set[int] = field(default_factory=set)
    consensus: ConsensusState = field(default=None)
    history: list[ResidualReport] = field(default_factory=list)
    # (commit clock, arrived set, staleness after commit) per commit
    commit_log: list[tuple[int, frozenset[int], tuple[int, ...]]] = field(default_factory=list)
    last_broadcast: dict[int, GlobalBroadcast] = field(default_factory=dict)

    def __post_init__(self):
        m = self.graph.num_agents
        if not 1 <= self.barrier_S <= m:
            raise ConfigurationError(f"barrier S={self.barrier_S} outside [1, {m}]")
        if self.delay_bound < 1:
            raise ConfigurationError("delay_bound must be >= 1")
        if self.staleness is None:
            self.staleness = np.ones(m, dtype=int)
        if self.consensus is None:
            self.consensus = ConsensusState.empty(m, self.n_steps, self.p)

    @property
    def num_workers(self) -> int:
        return self.graph.num_agents

    def on_receive(self, update: WorkerUpdate) -> bool:
        """Store a worker update; returns False for a stale duplicate."""
        i = update.sender
        if not 0 <= i < self.num_workers:
            raise ValueError(f"update from unknown worker {i}")
        held = self.mailbox.get(i)
        if held is not None and update.worker_clock <= held.worker_clock:
            log.debug("ignoring stale update from worker %d (clock %d)", i, update.worker_clock)
            return False
        self.mailbox[i] = update
        self.arrived.add(i)
        return True

    def would_be_staleness(self) -> np.ndarray:
        tau = self.staleness + 1
        tau[sorted(self.arrived)] = 1
        return tau

    def barrier_check(self) -> CommitDecision:
        ready = len(self.arrived) >= self.barrier_S and int(self.would_be_staleness().max()) <= self.delay_bound
        return CommitDecision(ready, frozenset(self.arrived))

    def global_update(self) -> ConsensusState:
        """Average each agent's safe copies held by its deemed neighbors."""
        p = self.p
        new = self.consensus.copy()
        for i in range(self.num_workers):
            zs, ss = [], []
            for j in self.graph.deemed(i):
                upd = self.mailbox.get(j)
                if upd is None:
                    continue
                b = self.graph.block_index(j, i)
                pen = self.sender_penalties(upd)
                mu, gam = pen.pen_xa, pen.pen_ta
                zs.append(upd.x_tilde_aug[:, b * p : (b + 1) * p] + upd.y[:, b * p : (b + 1) * p] / mu)
                ss.append(upd.t_tilde_aug[b] + upd.eta[b] / gam)
            if not zs:
                continue
            if len(zs) < len(self.graph.deemed(i)):
                log.debug("agent %d averaged over %d of %d deemed neighbors", i, len(zs), len(self.graph.deemed(i)))
            new.z[i] = np.mean(zs, axis=0)
            new.s[i] = float(np.mean(ss))
            new.known[i] = True
        return new

    def sender_penalties(self, upd: WorkerUpdate) -> Penalties:
        return upd.penalties if upd.penalties is not None else self.penalties

    def broadcast_for(self, i: int) -> GlobalBroadcast:
        nb = self.graph.neighbors(i)
        c = self.consensus
        return GlobalBroadcast(
            master_clock=self.clock,
            recipient=i,
            z_aug=np.concatenate([c.z[j] for j in nb], axis=-1),
            s_aug=np.array([c.s[j] for j in nb]),
            known=np.array([c.known[j] for j in nb]),
        )

    def commit(self) -> list[GlobalBroadcast]:
        """Global update, clock tick and broadcasts to the arrived set only."""
        decision = self.barrier_check()
        if not decision.ready:
            raise RuntimeError("commit attempted before the barrier is satisfied")
        prev = self.consensus
        self.staleness = self.would_be_staleness()
        self.consensus = self.global_update()
        self.clock += 1
        self.commit_log.append((self.clock, decision.committed_set, tuple(int(t) for t in self.staleness)))
        self.arrived = set()
        report = self.residual_report(prev)
        if report is not None:
            self.history.append(report)
        out = []
        for i in sorted(decision.committed_set):
            msg = self.broadcast_for(i)
            self.last_broadcast[i] = msg
            out.append(msg)
        return out

    def _stacked(self, values, j):
        return np.concatenate([values[k] for k in self.graph.neighbors(j)], axis=-1)

    def residual_report(self, prev: ConsensusState) -> ResidualReport | None:
        """Swarm residuals from the mailbox; None until every worker reported."""
        m = self.num_workers
        if len(self.mailbox) < m or not self.consensus.known.all() or not prev.known.all():
            return None
        parts = [self.mailbox[j].parts for j in range(m)]
        if any(pt is None for pt in parts):
            return None
        c = self.consensus

        def sq(a):
            return float(np.sum(np.square(a)))

        sums = dict.fromkeys(ConsensusSums.__dataclass_fields__, 0.0)
        dims = {"U": 0, "X": 0, "T": m, "Xa": 0, "Ta": 0}
        for j in range(m):
            upd = self.mailbox[j]
            pen = self.sender_penalties(upd)
            za = self._stacked(c.z, j)
            sa = np.array([c.s[k] for k in self.graph.neighbors(j)])
            za_prev = self._stacked(prev.z, j)
            sa_prev = np.array([prev.s[k] for k in self.graph.neighbors(j)])
            sums["xa_gap"] += sq(upd.x_tilde_aug - za)
            sums["xa_norm"] += sq(upd.x_tilde_aug)
            sums["za_norm"] += sq(za)
            sums["za_step"] += pen.pen_xa**2 * sq(za - za_prev)
            sums["ta_gap"] += sq(upd.t_tilde_aug - sa)
            sums["ta_norm"] += sq(upd.t_tilde_aug)
            sums["sa_norm"] += sq(sa)
            sums["sa_step"] += pen.pen_ta**2 * sq(sa - sa_prev)
            sums["y_norm"] += sq(upd.y)
            sums["eta_norm"] += sq(upd.eta)
            dims["U"] += self.n_steps  # single control input
            dims["X"] += (self.n_steps + 1) * self.p
            dims["Xa"] += upd.x_tilde_aug.size
            dims["Ta"] += upd.t_tilde_aug.size
        pens = [self.sender_penalties(self.mailbox[j]) for j in range(m)]
        return residuals_from_parts(parts, ConsensusSums(**sums), dims, pens, self.clock)

    def should_stop(self, rule: StopRule) -> bool:
        return bool(self.history) and self.history[-1].iteration == self.clock and check_stop(
            self.history[-1], rule.eps_abs, rule.eps_rel
        )
