"""Coordinator: barrier and delay rule, averaging, dedup, broadcast routing."""

from __future__ import annotations

from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asyncswarm.master import Master
from asyncswarm.model import ConfigurationError, NeighborGraph, Penalties, WorkerUpdate

N_STEPS, P = 3, 3
PEN = Penalties(pen_u=0.2, pen_x=2.0, pen_t=2.0, pen_xa=1.0, pen_ta=1.0)


def ring(m):
    return NeighborGraph.from_neighbor_sets([[i, (i + 1) % m, (i - 1) % m] for i in range(m)])


def stub_update(graph, i, clock, x=0.0, t=5.0, y=0.0, eta=0.0):
    k = len(graph.neighbors(i))
    return WorkerUpdate(
        sender=i,
        worker_clock=clock,
        x_tilde_aug=np.full((N_STEPS + 1, P * k), float(x)),
        t_tilde_aug=np.full(k, float(t)),
        y=np.full((N_STEPS + 1, P * k), float(y)),
        eta=np.full(k, float(eta)),
    )


class Driver:
    """Feeds scripted arrivals to a master, one worker clock per worker."""

    def __init__(self, m, S, tau):
        self.graph = ring(m)
        self.master = Master(self.graph, N_STEPS, P, PEN, barrier_S=S, delay_bound=tau)
        self.clocks = [0] * m

    def arrive(self, i):
        self.clocks[i] += 1
        assert self.master.on_receive(stub_update(self.graph, i, self.clocks[i]))

    def commit(self):
        return self.master.commit()


# 1-based labels in the scripted trace below are worker ids + 1
SCRIPT = [
    {1, 2}, {3, 4}, {5, 1}, {2, 3}, {4, 5}, {1, 2}, {3, 4}, {5, 1}, {2, 3}, {4, 5},
    {1, 3}, {2, 5}, {1, 4}, {1, 5}, {3, 4}, {1, 5}, {3, 4}, {1, 5}, {3, 4}, {1, 5}, {3, 4},
]


def test_scripted_trace_partial_barrier_and_delay_wait():
    d = Driver(5, S=2, tau=10)
    m = d.master
    for clock, batch in enumerate(SCRIPT):
        assert m.clock == clock
        first, *rest = sorted(batch)
        d.arrive(first - 1)
        # a single arrival never satisfies S = 2
        assert not m.barrier_check().ready
        for w in rest:
            d.arrive(w - 1)
        assert m.barrier_check().ready
        out = d.commit()
        assert [b.recipient for b in out] == sorted(w - 1 for w in batch)
        assert all(b.master_clock == clock + 1 for b in out)
        if clock == 14:
            assert m.commit_log[-1][1] == frozenset({2, 3})
    # master clock 21: worker 2 last committed at clock 11, counter is 10
    assert m.clock == 21
    assert m.staleness[1] == 10
    d.arrive(0)
    d.arrive(4)
    assert m.would_be_staleness()[1] == 11
    decision = m.barrier_check()
    assert not decision.ready and decision.committed_set == frozenset({0, 4})
    with pytest.raises(RuntimeError):
        m.commit()
    d.arrive(1)
    assert m.barrier_check().ready
    out = d.commit()
    assert [b.recipient for b in out] == [0, 1, 4]
    assert m.clock == 22
    # workers 3 and 4 last committed at clock 20
    assert m.staleness.tolist() == [1, 1, 2, 2, 1]


def test_staleness_starts_at_one_and_resets():
    d = Driver(4, S=1, tau=5)
    assert d.master.staleness.tolist() == [1, 1, 1, 1]
    d.arrive(2)
    d.commit()
    assert d.master.staleness.tolist() == [2, 2, 1, 2]
    d.arrive(0)
    d.arrive(2)
    d.commit()
    assert d.master.staleness.tolist() == [1, 3, 1, 3]


def test_clock_counts_commits_only():
    d = Driver(3, S=3, tau=10)
    for i in range(3):
        d.arrive(i)
        assert d.master.clock == 0
    d.commit()
    assert d.master.clock == 1
    assert len(d.master.commit_log) == 1


def test_duplicate_and_stale_updates_ignored():
    g = ring(3)
    m = Master(g, N_STEPS, P, PEN, barrier_S=1, delay_bound=5)
    assert m.on_receive(stub_update(g, 0, 3, x=1.0))
    assert not m.on_receive(stub_update(g, 0, 3, x=9.0))
    assert not m.on_receive(stub_update(g, 0, 2, x=9.0))
    assert m.mailbox[0].x_tilde_aug[0, 0] == 1.0
    m.commit()
    # same clock again after the commit does not re-arm the barrier
    assert not m.on_receive(stub_update(g, 0, 3))
    assert m.arrived == set()
    assert m.on_receive(stub_update(g, 0, 4))


def test_unknown_sender_rejected():
    g = ring(3)
    m = Master(g, N_STEPS, P, PEN, barrier_S=1, delay_bound=5)
    with pytest.raises(ValueError):
        m.on_receive(replace(stub_update(g, 0, 1), sender=7))


@pytest.mark.parametrize("S,tau", [(0, 5), (4, 5), (1, 0)])
def test_invalid_barrier_or_delay(S, tau):
    with pytest.raises(ConfigurationError):
        Master(ring(3), N_STEPS, P, PEN, barrier_S=S, delay_bound=tau)


def _copy_block(upd_kwargs, graph, i, j, value):
    """Put ``value`` into the block of sender ``i`` that holds agent ``j``."""
    b = graph.block_index(i, j)
    upd_kwargs["x_tilde_aug"][:, b * P : (b + 1) * P] = value


def test_average_of_two_copies():
    # path graph 0-1: both agents hold a copy of each other
    g = NeighborGraph.from_neighbor_sets([[0, 1], [1, 0]])
    m = Master(g, N_STEPS, P, PEN, barrier_S=2, delay_bound=5)
    u0, u1 = stub_update(g, 0, 1), stub_update(g, 1, 1)
    _copy_block(u0.__dict__, g, 0, 0, 1.0)
    _copy_block(u1.__dict__, g, 1, 0, 2.0)
    u0.t_tilde_aug[g.block_index(0, 0)] = 4.0
    u1.t_tilde_aug[g.block_index(1, 0)] = 5.0
    m.on_receive(u0)
    m.on_receive(u1)
    m.commit()
    np.testing.assert_allclose(m.consensus.z[0], 1.5)
    assert m.consensus.s[0] == pytest.approx(4.5)


def test_average_includes_scaled_duals():
    g = NeighborGraph.from_neighbor_sets([[0, 1], [1, 0]])
    pen = Penalties(pen_u=0.2, pen_x=2.0, pen_t=2.0, pen_xa=0.5, pen_ta=4.0)
    m = Master(g, N_STEPS, P, pen, barrier_S=2, delay_bound=5)
    u0 = stub_update(g, 0, 1, y=0.1, eta=0.8)
    u1 = stub_update(g, 1, 1)
    _copy_block(u0.__dict__, g, 0, 0, 1.0)
    _copy_block(u1.__dict__, g, 1, 0, 2.0)
    m.on_receive(u0)
    m.on_receive(u1)
    m.commit()
    # (1 + 0.1 / 0.5 + 2) / 2 and (5 + 0.8 / 4 + 5) / 2
    np.testing.assert_allclose(m.consensus.z[0], 1.6)
    assert m.consensus.s[0] == pytest.approx(5.1)


def test_averaging_uses_latest_held_copies():
    g = NeighborGraph.from_neighbor_sets([[0, 1], [1, 0]])
    m = Master(g, N_STEPS, P, PEN, barrier_S=1, delay_bound=5)
    m.on_receive(stub_update(g, 1, 1, x=3.0))
    m.commit()
    np.testing.assert_allclose(m.consensus.z[0], 3.0)
    m.on_receive(stub_update(g, 0, 1, x=1.0))
    m.commit()
    # worker 1 did not resend; its held copy still counts
    np.testing.assert_allclose(m.consensus.z[0], 2.0)


def test_broadcast_carries_neighborhood_consensus():
    g = ring(4)
    m = Master(g, N_STEPS, P, PEN, barrier_S=4, delay_bound=5)
    for i in range(4):
        m.on_receive(stub_update(g, i, 1, x=float(i)))
    out = m.commit()
    for b in out:
        nb = g.neighbors(b.recipient)
        assert b.z_aug.shape == (N_STEPS + 1, P * len(nb))
        for k, j in enumerate(nb):
            np.testing.assert_array_equal(b.z_aug[:, k * P : (k + 1) * P], m.consensus.z[j])
            assert b.s_aug[k] == m.consensus.s[j]
        assert b.known.all()


def staleness_oracle(m, sets):
    tau = np.ones(m, dtype=int)
    out = []
    for s in sets:
        tau = tau + 1
        tau[sorted(s)] = 1
        out.append(tuple(int(t) for t in tau))
    return out


@settings(max_examples=300, deadline=None)
@given(
    m=st.integers(2, 7),
    data=st.data(),
)
def test_random_arrival_orders_keep_invariants(m, data):
    S = data.draw(st.integers(1, m))
    tau = data.draw(st.integers(1, 12))
    d = Driver(m, S, tau)
    order = data.draw(st.lists(st.integers(0, m - 1), min_size=1, max_size=120))
    pending = set()
    for i in order:
        if i not in pending:
            pending.add(i)
            d.arrive(i)
        if d.master.barrier_check().ready:
            committed = set(d.master.arrived)
            out = d.commit()
            assert {b.recipient for b in out} == committed
            pending -= committed
    log = d.master.commit_log
    assert [c for c, _, _ in log] == list(range(1, len(log) + 1))
    assert [s for _, _, s in log] == staleness_oracle(m, [a for _, a, _ in log])
    for _, arrived, stale in log:
        assert len(arrived) >= S
        assert max(stale) <= tau
