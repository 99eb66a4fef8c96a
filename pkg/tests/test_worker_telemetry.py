"""Worker dual steps and broadcasts; residual assembly and the stop rule."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from asyncswarm.model import GlobalBroadcast, Penalties, SafeCopies, Trajectory
from asyncswarm.runner import build_swarm
from asyncswarm.scenario import load_scenario
from asyncswarm.telemetry import (
    BLOCKS,
    ResidualReport,
    RunResult,
    SwarmIterate,
    check_stop,
    compute_residuals,
    write_results,
)
from asyncswarm.worker import apply_broadcast, compute_update, dual_update, penalties_at
from protocol_stub import stub_simulation

SMALL = ["model.horizon_steps=20", "pddp.init_max_iters=60", "mode=sync"]


@pytest.fixture(scope="module")
def small_swarm_factory():
    return lambda: build_swarm(load_scenario("default", SMALL))


def test_dual_step_exact():
    sim = stub_simulation()
    node = sim.workers[0]
    pen = Penalties(pen_u=0.2, pen_x=2.0, pen_t=4.0, pen_xa=1.0, pen_ta=0.5)
    node.problem = node.problem.__class__(**{**node.problem.__dict__, "penalties": pen})
    n, k = node.problem.n_steps, len(node.problem.neighbors)
    node.traj = Trajectory(np.full((n + 1, 3), 1.0), np.full((n, 1), 0.3), 9.0)
    aug = np.full((n + 1, 3 * k), 0.5)
    node.safe = SafeCopies(np.full((n, 1), 0.2), aug, np.full(k, 8.75), 3)
    node.z_aug = np.full((n + 1, 3 * k), 0.25)
    node.s_aug = np.full(k, 9.0)
    d = dual_update(node)
    # u - u~ = 0.1 at pen_u 0.2, x - x~ = 0.5 at 2, t - t~ = 0.25 at 4
    np.testing.assert_allclose(d.zeta, 0.02, rtol=0, atol=1e-15)
    np.testing.assert_allclose(d.lam, 1.0, rtol=0, atol=1e-15)
    assert d.nu == pytest.approx(1.0, abs=1e-15)
    # x~a - z = 0.25 at 1, t~a - s = -0.25 at 0.5
    np.testing.assert_allclose(d.y, 0.25, rtol=0, atol=1e-15)
    np.testing.assert_allclose(d.eta, -0.125, rtol=0, atol=1e-15)


def _broadcast(node, clock, z=3.0, s=7.0, known=None):
    k = len(node.problem.neighbors)
    n = node.problem.n_steps
    return GlobalBroadcast(
        clock, node.id, np.full((n + 1, 3 * k), z), np.full(k, s), np.ones(k, bool) if known is None else known
    )


def test_broadcast_ticks_clock_once_and_ignores_stale():
    node = stub_simulation().workers[1]
    apply_broadcast(node, _broadcast(node, 1))
    assert node.clock == 1 and node.last_master_clock == 1
    duals = node.duals.copy()
    apply_broadcast(node, _broadcast(node, 1, z=9.0))
    apply_broadcast(node, _broadcast(node, 0, z=9.0))
    assert node.clock == 1
    np.testing.assert_array_equal(node.z_aug, 3.0)
    np.testing.assert_array_equal(node.duals.y, duals.y)


def test_broadcast_keeps_blocks_master_has_not_seen():
    node = stub_simulation().workers[2]
    before = node.z_aug.copy()
    known = np.array([True] + [False] * (len(node.problem.neighbors) - 1))
    apply_broadcast(node, _broadcast(node, 1, z=3.0, s=7.0, known=known))
    np.testing.assert_array_equal(node.z_aug[:, :3], 3.0)
    np.testing.assert_array_equal(node.z_aug[:, 3:], before[:, 3:])
    assert node.s_aug[0] == 7.0


def test_penalty_growth_schedule():
    node = stub_simulation().workers[0]
    prob = node.problem.__class__(**{**node.problem.__dict__, "penalty_growth": 2.0, "penalty_cap": 5.0})
    assert penalties_at(prob, 0) == prob.penalties
    assert penalties_at(prob, 2).pen_x == pytest.approx(4 * prob.penalties.pen_x)
    assert penalties_at(prob, 10).pen_x == pytest.approx(5 * prob.penalties.pen_x)


def _stack(values, nb):
    return np.concatenate([values[j] for j in nb], axis=-1)


def test_master_residuals_match_direct_stacking(small_swarm_factory):
    sw = small_swarm_factory()
    m, master, g = len(sw.workers), sw.master, sw.graph
    for _ in range(4):
        for w in sw.workers:
            master.on_receive(compute_update(w))
        prev = master.consensus.copy()
        out = master.commit()
        ws = sw.workers

        def it(safe_of, cons):
            return dict(
                U_t=[safe_of(w).u_tilde for w in ws],
                X_t=[safe_of(w).x_tilde for w in ws],
                T_t=np.array([safe_of(w).t_tilde for w in ws]),
                Za=[_stack(cons.z, g.neighbors(j)) for j in range(m)],
                Sa=[np.array([cons.s[k] for k in g.neighbors(j)]) for j in range(m)],
            )

        cur = SwarmIterate(
            U=[w.traj.controls for w in ws],
            X=[w.traj.states for w in ws],
            T=np.array([w.traj.terminal_time for w in ws]),
            Xa_t=[w.safe.x_tilde_aug for w in ws],
            Ta_t=[w.safe.t_tilde_aug for w in ws],
            zeta=[w.duals.zeta for w in ws],
            lam=[w.duals.lam for w in ws],
            nu=np.array([w.duals.nu for w in ws]),
            y=[w.duals.y for w in ws],
            eta=[w.duals.eta for w in ws],
            **it(lambda w: w.safe, master.consensus),
        )
        old = SwarmIterate(U=[], X=[], T=np.zeros(0), Xa_t=[], Ta_t=[], **it(lambda w: w.prev_safe, prev))
        direct = compute_residuals(cur, old, sw.problems[0].penalties, master.clock)
        for b in out:
            apply_broadcast(sw.workers[b.recipient], b)
    report = master.history[-1]
    assert report.iteration == master.clock == 4
    assert report.dims == direct.dims
    for name in ("primal", "dual", "primal_scale", "dual_scale"):
        a, b = getattr(report, name), getattr(direct, name)
        for blk in BLOCKS:
            assert a[blk] == pytest.approx(b[blk], rel=1e-9, abs=1e-12), (name, blk)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-1e3, 1e3))
def test_primal_residuals_ignore_a_common_shift(seed, c):
    rng = np.random.default_rng(seed)
    shapes = [(5, 1), (4, 1)]

    def iterate(shift):
        U = [rng_u + shift for rng_u in base_u]
        Ut = [b + shift for b in base_ut]
        z = [np.zeros((3, 3))] * 2
        return SwarmIterate(U, Ut, z, z, np.zeros(2), np.zeros(2), z, z, [np.zeros(1)] * 2, [np.zeros(1)] * 2)

    base_u = [rng.normal(size=s) for s in shapes]
    base_ut = [rng.normal(size=s) for s in shapes]
    pen = Penalties()
    a = compute_residuals(iterate(0.0), iterate(0.0), pen)
    b = compute_residuals(iterate(c), iterate(c), pen)
    assert b.primal["U"] == pytest.approx(a.primal["U"], rel=1e-9, abs=1e-9 * (1 + abs(c)))


def _report(primal, dual, scale=1.0, dim=4):
    return ResidualReport(
        1,
        dict(zip(BLOCKS, primal)),
        dict(zip(BLOCKS, dual)),
        dict.fromkeys(BLOCKS, scale),
        dict.fromkeys(BLOCKS, scale),
        dict.fromkeys(BLOCKS, dim),
    )


def test_stop_thresholds():
    # sqrt(4) * 5e-4 + 6e-2 * 1 = 0.061
    assert check_stop(_report([0.061] * 5, [0.061] * 5))
    assert not check_stop(_report([0.061] * 4 + [0.0611], [0.0] * 5))
    assert not check_stop(_report([0.0] * 5, [0.0612] + [0.0] * 4))


@settings(max_examples=200, deadline=None)
@given(
    r=st.lists(st.floats(0, 1), min_size=10, max_size=10),
    shrink=st.floats(0, 1),
    eps_abs=st.floats(0, 1e-2),
    eps_rel=st.floats(0, 0.2),
)
def test_stop_rule_monotone_in_residuals(r, shrink, eps_abs, eps_rel):
    big = _report(r[:5], r[5:])
    small = _report([shrink * v for v in r[:5]], [shrink * v for v in r[5:]])
    if check_stop(big, eps_abs, eps_rel):
        assert check_stop(small, eps_abs, eps_rel)
    # looser tolerances never un-stop
    if check_stop(big, eps_abs, eps_rel):
        assert check_stop(big, 2 * eps_abs, 2 * eps_rel)


def test_write_results_files(tmp_path):
    sim = stub_simulation(max_commits=5)
    sim.run()
    ws = sim.workers
    res = RunResult(
        trajectories=[w.traj for w in ws],
        terminal_times=np.array([w.traj.terminal_time for w in ws]),
        consensus_times=sim.master.consensus.s.copy(),
        safe_times=np.array([w.safe.t_tilde for w in ws]),
        history=[_report([0.1] * 5, [0.2] * 5)],
        status="cap",
        commits=5,
        worker_clocks=[w.clock for w in ws],
        virtual_time=sim.now,
        wall_time=0.0,
        config={"protocol": {"p_con": 0.7}},
    )
    paths = write_results(res, tmp_path / "run", sim.trace)
    traj = paths["trajectories"].read_text().splitlines()
    n = ws[0].problem.n_steps
    assert traj[0] == "agent,step,time,x,y,heading,control"
    assert len(traj) == 1 + len(ws) * (n + 1)
    last = traj[n + 1].split(",")
    assert float(last[2]) == pytest.approx(ws[0].traj.terminal_time)
    assert last[-1] == ""
    assert paths["residuals"].read_text().splitlines()[1].startswith("1,0.1,")
    summary = paths["summary"].read_text()
    assert "status = cap" in summary and "config.protocol.p_con = 0.7" in summary
    assert paths["events"].read_text().splitlines() == sim.trace.lines()
