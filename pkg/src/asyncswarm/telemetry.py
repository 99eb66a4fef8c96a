"""Primal/dual residuals, the stopping rule, and run output files."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .model import Penalties, ResidualParts, Trajectory

BLOCKS = ("U", "X", "T", "Xa", "Ta")


@dataclass(frozen=True)
class DualAggregates:
    """Norms of the stacked multipliers over the whole swarm."""

    zeta: float  # all control-copy duals
    lam: float  # all state-copy duals
    nu: float  # all time-copy duals
    y: float  # all state-consensus duals
    eta: float  # all time-consensus duals


@dataclass
class ResidualReport:
    iteration: int
    primal: dict[str, float]
    dual: dict[str, float]
    # max(||A||, ||B||) for each primal block, the matching dual aggregate
    # for each dual block, and the vector dimension of each block
    primal_scale: dict[str, float]
    dual_scale: dict[str, float]
    dims: dict[str, int]

    def thresholds(self, eps_abs: float, eps_rel: float) -> tuple[dict, dict]:
        p = {b: math.sqrt(self.dims[b]) * eps_abs + eps_rel * self.primal_scale[b] for b in BLOCKS}
        d = {b: math.sqrt(self.dims[b]) * eps_abs + eps_rel * self.dual_scale[b] for b in BLOCKS}
        return p, d


@dataclass
class SwarmIterate:
    """Stacked swarm variables at one iteration (lists indexed by agent)."""

    U: list[np.ndarray]
    U_t: list[np.ndarray]
    X: list[np.ndarray]
    X_t: list[np.ndarray]
    T: np.ndarray
    T_t: np.ndarray
    Xa_t: list[np.ndarray]
    Za: list[np.ndarray]
    Ta_t: list[np.ndarray]
    Sa: list[np.ndarray]
    zeta: list[np.ndarray] = field(default_factory=list)
    lam: list[np.ndarray] = field(default_factory=list)
    nu: np.ndarray = field(default_factory=lambda: np.zeros(0))
    y: list[np.ndarray] = field(default_factory=list)
    eta: list[np.ndarray] = field(default_factory=list)


def _flat(parts) -> np.ndarray:
    parts = list(parts) if not isinstance(parts, np.ndarray) else [parts]
    if not parts:
        return np.zeros(0)
    return np.concatenate([np.ravel(p) for p in parts])


def _norm(parts) -> float:
    return float(np.linalg.norm(_flat(parts)))


def dual_aggregates(it: SwarmIterate) -> DualAggregates:
    return DualAggregates(_norm(it.zeta), _norm(it.lam), _norm(it.nu), _norm(it.y), _norm(it.eta))


def compute_residuals(cur: SwarmIterate, prev: SwarmIterate, penalties: Penalties, iteration: int = 0):
    """All ten residual norms from two consecutive stacked iterates."""
    pen = penalties

    def diff(a, b):
        fa, fb = _flat(a), _flat(b)
        if fa.shape != fb.shape:
            raise RuntimeError("residual shape mismatch")
        return float(np.linalg.norm(fa - fb))

    primal = {
        "U": diff(cur.U, cur.U_t),
        "X": diff(cur.X, cur.X_t),
        "T": diff(cur.T, cur.T_t),
        "Xa": diff(cur.Xa_t, cur.Za),
        "Ta": diff(cur.Ta_t, cur.Sa),
    }
    dual = {
        "U": pen.pen_u * diff(cur.U_t, prev.U_t),
        "X": pen.pen_x * diff(cur.X_t, prev.X_t),
        "T": pen.pen_t * diff(cur.T_t, prev.T_t),
        "Xa": pen.pen_xa * diff(cur.Za, prev.Za),
        "Ta": pen.pen_ta * diff(cur.Sa, prev.Sa),
    }
    agg = dual_aggregates(cur)
    primal_scale = {
        "U": max(_norm(cur.U), _norm(cur.U_t)),
        "X": max(_norm(cur.X), _norm(cur.X_t)),
        "T": max(_norm(cur.T), _norm(cur.T_t)),
        "Xa": max(_norm(cur.Xa_t), _norm(cur.Za)),
        "Ta": max(_norm(cur.Ta_t), _norm(cur.Sa)),
    }
    dual_scale = {"U": agg.zeta, "X": agg.lam, "T": agg.nu, "Xa": agg.y, "Ta": agg.eta}
    dims = {
        "U": _flat(cur.U).size,
        "X": _flat(cur.X).size,
        "T": _flat(cur.T).size,
        "Xa": _flat(cur.Xa_t).size,
        "Ta": _flat(cur.Ta_t).size,
    }
    return ResidualReport(iteration, primal, dual, primal_scale, dual_scale, dims)


@dataclass
class ConsensusSums:
    """Squared-norm sums the master computes from its mailbox and z/s.

    The two step sums already carry the squared consensus penalty of the
    agent each stacked block belongs to.
    """

    xa_gap: float
    xa_norm: float
    za_norm: float
    za_step: float
    ta_gap: float
    ta_norm: float
    sa_norm: float
    sa_step: float
    y_norm: float
    eta_norm: float


def residuals_from_parts(
    parts: Iterable[ResidualParts],
    sums: ConsensusSums,
    dims: dict[str, int],
    penalties: Penalties | Sequence[Penalties],
    iteration: int,
) -> ResidualReport:
    """Same report as :func:`compute_residuals`, assembled from squared pieces.

    ``penalties`` is either shared or one entry per part.
    """
    parts = list(parts)
    pens = [penalties] * len(parts) if isinstance(penalties, Penalties) else list(penalties)

    def tot(name):
        return sum(getattr(p, name) for p in parts)

    def wtot(name, pen_name):
        return sum(getattr(pn, pen_name) ** 2 * getattr(p, name) for p, pn in zip(parts, pens))

    r = math.sqrt
    primal = {
        "U": r(tot("u_gap")),
        "X": r(tot("x_gap")),
        "T": r(tot("t_gap")),
        "Xa": r(sums.xa_gap),
        "Ta": r(sums.ta_gap),
    }
    dual = {
        "U": r(wtot("ut_step", "pen_u")),
        "X": r(wtot("xt_step", "pen_x")),
        "T": r(wtot("tt_step", "pen_t")),
        "Xa": r(sums.za_step),
        "Ta": r(sums.sa_step),
    }
    primal_scale = {
        "U": r(max(tot("u_norm"), tot("ut_norm"))),
        "X": r(max(tot("x_norm"), tot("xt_norm"))),
        "T": r(max(tot("t_norm"), tot("tt_norm"))),
        "Xa": r(max(sums.xa_norm, sums.za_norm)),
        "Ta": r(max(sums.ta_norm, sums.sa_norm)),
    }
    dual_scale = {
        "U": r(tot("zeta_norm")),
        "X": r(tot("lam_norm")),
        "T": r(tot("nu_norm")),
        "Xa": r(sums.y_norm),
        "Ta": r(sums.eta_norm),
    }
    return ResidualReport(iteration, primal, dual, primal_scale, dual_scale, dict(dims))


def check_stop(report: ResidualReport, eps_abs: float = 5e-4, eps_rel: float = 6e-2) -> bool:
    """True when all ten residual norms sit below their thresholds."""
    p_tol, d_tol = report.thresholds(eps_abs, eps_rel)
    return all(report.primal[b] <= p_tol[b] and report.dual[b] <= d_tol[b] for b in BLOCKS)


# -- outputs -------------------------------------------------------------------


@dataclass
class RunResult:
    trajectories: list[Trajectory]
    terminal_times: np.ndarray  # agents' primal terminal times
    consensus_times: np.ndarray  # master's s
    safe_times: np.ndarray  # agents' own safe copies of their terminal times
    history: list[ResidualReport]
    status: str  # converged | cap | error
    commits: int
    worker_clocks: list[int]
    virtual_time: float
    wall_time: float
    events: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    seed: int = 0
    infeasible_steps: int = 0

    @property
    def converged(self) -> bool:
        return self.status == "converged"


def write_results(result: RunResult, out_dir, trace=None) -> dict[str, Path]:
    """Write trajectories, residual history, summary and event log."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "trajectories": out / "trajectories.csv",
        "residuals": out / "residuals.csv",
        "summary": out / "summary.txt",
        "events": out / "events.log",
    }
    with open(paths["trajectories"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["agent", "step", "time", "x", "y", "heading", "control"])
        for i, tr in enumerate(result.trajectories):
            n = tr.horizon
            dt = tr.terminal_time / n
            for k in range(n + 1):
                u = repr(float(tr.controls[k, 0])) if k < n else ""
                x, y, h = (repr(float(v)) for v in tr.states[k])
                w.writerow([i, k, repr(k * dt), x, y, h, u])
    with open(paths["residuals"], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["commit"] + [f"primal_{b}" for b in BLOCKS] + [f"dual_{b}" for b in BLOCKS])
        for rep in result.history:
            w.writerow([rep.iteration] + [repr(rep.primal[b]) for b in BLOCKS] + [repr(rep.dual[b]) for b in BLOCKS])
    lines = [
        f"status = {result.status}",
        f"seed = {result.seed}",
        f"commits = {result.commits}",
        f"worker_clocks = {' '.join(str(c) for c in result.worker_clocks)}",
        f"virtual_time = {result.virtual_time!r}",
        f"wall_time = {result.wall_time:.3f}",
        f"infeasible_steps = {result.infeasible_steps}",
        f"terminal_times = {' '.join(f'{t:.6f}' for t in result.terminal_times)}",
        f"safe_times = {' '.join(f'{t:.6f}' for t in result.safe_times)}",
        f"consensus_times = {' '.join(f'{t:.6f}' for t in result.consensus_times)}",
    ]
    for key, val in _flatten(result.config):
        lines.append(f"config.{key} = {val}")
    paths["summary"].write_text("\n".join(lines) + "\n")
    if trace is not None:
        trace.write(paths["events"])
    else:
        paths["events"].write_text("")
    return paths


def _flatten(d, prefix=""):
    for k, v in d.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            yield from _flatten(v, key + ".")
        else:
            yield key, v
