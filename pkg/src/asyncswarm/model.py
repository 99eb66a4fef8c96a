"""Domain types shared by the solver, the protocol layer and the simulator."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np


class ConfigurationError(ValueError):
    """Raised for invalid scenario or protocol settings."""


@dataclass(frozen=True)
class NeighborGraph:
    """Fixed communication topology.

    ``neighbor_sets[i]`` lists agent ``i`` first, followed by its other
    neighbors in ascending id order. ``deemed_sets[i]`` holds every agent that
    lists ``i`` as a neighbor (ascending).
    """

    neighbor_sets: tuple[tuple[int, ...], ...]
    deemed_sets: tuple[tuple[int, ...], ...]

    @property
    def num_agents(self) -> int:
        return len(self.neighbor_sets)

    def neighbors(self, i: int) -> tuple[int, ...]:
        return self.neighbor_sets[i]

    def deemed(self, i: int) -> tuple[int, ...]:
        return self.deemed_sets[i]

    def block_index(self, i: int, j: int) -> int:
        """Position of agent ``j`` inside agent ``i``'s stacked vectors."""
        return self.neighbor_sets[i].index(j)

    @classmethod
    def from_neighbor_sets(cls, sets: Sequence[Sequence[int]]) -> "NeighborGraph":
        m = len(sets)
        ordered = []
        for i, s in enumerate(sets):
            others = sorted(set(int(j) for j in s) - {i})
            if any(j < 0 or j >= m for j in others):
                raise ConfigurationError(f"neighbor set of agent {i} references unknown agent")
            ordered.append((i, *others))
        deemed = [[] for _ in range(m)]
        for i, s in enumerate(ordered):
            for j in s:
                deemed[j].append(i)
        return cls(tuple(ordered), tuple(tuple(sorted(d)) for d in deemed))


def build_neighbor_graph(positions, neighborhood_size: int) -> NeighborGraph:
    """Nearest-neighbor topology at the initial positions.

    Each agent keeps itself plus its ``neighborhood_size - 1`` closest agents
    (Euclidean); distance ties go to the lower agent id.
    """
    pts = np.asarray(positions, dtype=float).reshape(-1, 2)
    m = len(pts)
    if neighborhood_size < 1:
        raise ConfigurationError("neighborhood_size must be >= 1")
    if neighborhood_size > m:
        raise ConfigurationError(
            f"neighborhood_size={neighborhood_size} exceeds number of agents {m}"
        )
    sets = []
    for i in range(m):
        d = np.hypot(*(pts - pts[i]).T)
        # lexsort: primary key distance, secondary agent id
        order = [j for j in np.lexsort((np.arange(m), d)) if j != i]
        sets.append([i, *order[: neighborhood_size - 1]])
    return NeighborGraph.from_neighbor_sets(sets)


def stack_neighborhood(values, graph: NeighborGraph, agent: int) -> np.ndarray:
    """Concatenate per-agent vectors over ``agent``'s ordered neighbor list.

    ``values`` maps agent id to a vector (dict or sequence). The last axis is
    the concatenation axis, so per-step arrays of shape ``(N+1, p)`` stack to
    ``(N+1, sum p_j)``.
    """
    parts = []
    for j in graph.neighbors(agent):
        try:
            v = values[j]
        except (KeyError, IndexError):
            raise RuntimeError(f"missing value for neighbor {j} of agent {agent}") from None
        if v is None:
            raise RuntimeError(f"missing value for neighbor {j} of agent {agent}")
        parts.append(np.atleast_1d(np.asarray(v, dtype=float)))
    return np.concatenate(parts, axis=-1)


def unstack_neighborhood(stacked, graph: NeighborGraph, agent: int, dims) -> dict[int, np.ndarray]:
    """Inverse of :func:`stack_neighborhood`; ``dims[j]`` is agent j's width."""
    stacked = np.asarray(stacked, dtype=float)
    out = {}
    start = 0
    for j in graph.neighbors(agent):
        width = dims[j] if not np.isscalar(dims) else int(dims)
        out[j] = stacked[..., start : start + width]
        start += width
    if start != stacked.shape[-1]:
        raise RuntimeError("stacked width does not match neighbor dimensions")
    return out


@dataclass
class Trajectory:
    states: np.ndarray  # (N+1, p)
    controls: np.ndarray  # (N, q)
    terminal_time: float

    @property
    def horizon(self) -> int:
        return self.controls.shape[0]

    def copy(self) -> "Trajectory":
        return Trajectory(self.states.copy(), self.controls.copy(), float(self.terminal_time))


@dataclass(frozen=True)
class Penalties:
    """ADMM penalty weights (all strictly positive)."""

    pen_u: float = 0.2  # control copy
    pen_x: float = 2.0  # state copy
    pen_t: float = 2.0  # terminal-time copy
    pen_xa: float = 1.0  # state consensus
    pen_ta: float = 1.0  # time consensus

    def __post_init__(self):
        for name in ("pen_u", "pen_x", "pen_t", "pen_xa", "pen_ta"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"penalty {name} must be positive")

    def scaled(self, factor: float) -> "Penalties":
        return Penalties(*(factor * getattr(self, n) for n in ("pen_u", "pen_x", "pen_t", "pen_xa", "pen_ta")))


@dataclass
class DualSet:
    zeta: np.ndarray  # (N, q)
    lam: np.ndarray  # (N+1, p)
    nu: float
    y: np.ndarray  # (N+1, p_aug)
    eta: np.ndarray  # (|N_i|,)
    penalties: Penalties = field(default_factory=Penalties)

    @classmethod
    def zeros(cls, n_steps: int, p: int, q: int, n_neighbors: int, penalties: Penalties) -> "DualSet":
        return cls(
            zeta=np.zeros((n_steps, q)),
            lam=np.zeros((n_steps + 1, p)),
            nu=0.0,
            y=np.zeros((n_steps + 1, p * n_neighbors)),
            eta=np.zeros(n_neighbors),
            penalties=penalties,
        )

    def copy(self) -> "DualSet":
        return replace(
            self,
            zeta=self.zeta.copy(),
            lam=self.lam.copy(),
            y=self.y.copy(),
            eta=self.eta.copy(),
        )


@dataclass
class SafeCopies:
    """Constraint-satisfying copies held by one agent.

    The agent's own safe state and time live inside the augmented stacks
    (block 0, since the agent is first in its neighbor list), so ``x_tilde``
    and ``t_tilde`` are views of that block rather than separate storage.
    """

    u_tilde: np.ndarray  # (N, q)
    x_tilde_aug: np.ndarray  # (N+1, p * |N_i|)
    t_tilde_aug: np.ndarray  # (|N_i|,)
    p: int

    @property
    def x_tilde(self) -> np.ndarray:
        return self.x_tilde_aug[:, : self.p]

    @property
    def t_tilde(self) -> float:
        return float(self.t_tilde_aug[0])

    def copy(self) -> "SafeCopies":
        return SafeCopies(self.u_tilde.copy(), self.x_tilde_aug.copy(), self.t_tilde_aug.copy(), self.p)


@dataclass
class ConsensusState:
    """Master-owned global variables with a mask of agents ever heard from."""

    z: np.ndarray  # (M, N+1, p)
    s: np.ndarray  # (M,)
    known: np.ndarray  # (M,) bool

    @classmethod
    def empty(cls, num_agents: int, n_steps: int, p: int) -> "ConsensusState":
        return cls(
            np.zeros((num_agents, n_steps + 1, p)),
            np.zeros(num_agents),
            np.zeros(num_agents, dtype=bool),
        )

    def copy(self) -> "ConsensusState":
        return ConsensusState(self.z.copy(), self.s.copy(), self.known.copy())


@dataclass(frozen=True)
class ResidualParts:
    """Squared-norm pieces a worker reports so the master can assemble residuals."""

    u_gap: float  # ||U - U~||^2
    u_norm: float
    ut_norm: float
    ut_step: float  # ||U~^n - U~^{n-1}||^2
    x_gap: float
    x_norm: float
    xt_norm: float
    xt_step: float
    t_gap: float
    t_norm: float
    tt_norm: float
    tt_step: float
    zeta_norm: float
    lam_norm: float
    nu_norm: float


@dataclass(frozen=True)
class WorkerUpdate:
    sender: int
    worker_clock: int
    x_tilde_aug: np.ndarray
    t_tilde_aug: np.ndarray
    y: np.ndarray
    eta: np.ndarray
    parts: ResidualParts | None = None
    penalties: Penalties | None = None  # the sender's penalties for this iteration


@dataclass(frozen=True)
class GlobalBroadcast:
    master_clock: int
    recipient: int
    z_aug: np.ndarray  # (N+1, p * |N_i|)
    s_aug: np.ndarray  # (|N_i|,)
    known: np.ndarray  # (|N_i|,) bool; blocks the master has no value for yet
