"""Deterministic discrete-event simulation of the master/worker protocol.

All ordering comes from a single event heap keyed by (virtual time, sequence
number). Random draws come from counter-based Philox streams, one per directed
link and one per worker latency, each derived from the run seed, so adding an
agent never perturbs the draws of the others.

Two execution modes share the event loop. ``inline`` computes worker updates
on the loop's thread. ``threaded`` hands each worker's compute to its own
single-thread executor as soon as the worker is released and only joins the
result when the virtual "ready" event fires, so workers overlap in wall time
while the trace stays identical.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import time as _time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .master import Master, StopRule
from .model import ConfigurationError
from .worker import WorkerNode, apply_broadcast, compute_update

MASTER = "master"

# stream kinds for seed derivation
_LINK, _LATENCY = 0, 1
# stream key of the master endpoint, independent of the swarm size
_MASTER_KEY = 2**32 - 1


def node_label(i) -> str:
    return MASTER if i == MASTER else f"w{i}"


def _stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed) & (2**64 - 1), *key])))


class LinkModel:
    """Bernoulli loss on every directed link, one random stream per link."""

    def __init__(self, p_con: float, seed: int, symmetric: bool = False):
        if not 0.0 <= p_con <= 1.0:
            raise ConfigurationError(f"p_con={p_con} outside [0, 1]")
        self.p_con = float(p_con)
        self.seed = int(seed)
        self.symmetric = symmetric
        self._streams: dict[tuple[int, int], np.random.Generator] = {}

    def _endpoint(self, node) -> int:
        return _MASTER_KEY if node == MASTER else int(node)

    def stream(self, src, dst) -> np.random.Generator:
        key = (self._endpoint(src), self._endpoint(dst))
        if key not in self._streams:
            self._streams[key] = _stream(self.seed, _LINK, *key)
        return self._streams[key]

    def transmit(self, src, dst) -> bool:
        """Whether one message on src -> dst gets through."""
        if dst == MASTER or self.symmetric:
            # always draw so the stream position depends only on the send count
            return bool(self.stream(src, dst).random() < self.p_con)
        return True


class SpeedProfile:
    """Per-worker compute latency, uniform on ``[lo, hi]`` virtual units."""

    def __init__(self, seed: int, num_workers: int, lo: float = 1.0, hi: float = 2.0):
        if not 0 < lo <= hi:
            raise ConfigurationError("compute latency range must satisfy 0 < lo <= hi")
        self.lo, self.hi = float(lo), float(hi)
        self._streams = [_stream(seed, _LATENCY, i) for i in range(num_workers)]

    def draw(self, worker: int) -> float:
        return float(self._streams[worker].uniform(self.lo, self.hi))


@dataclass(frozen=True)
class TraceRecord:
    time: float
    seq: int
    kind: str  # send | drop | deliver | commit | worker_tick | shutdown
    src: str
    dst: str
    worker_clock: int | None
    master_clock: int

    def to_json(self) -> str:
        return json.dumps(
            {
                "time": self.time,
                "seq": self.seq,
                "kind": self.kind,
                "from": self.src,
                "to": self.dst,
                "worker_clock": self.worker_clock,
                "master_clock": self.master_clock,
            },
            separators=(",", ":"),
        )


@dataclass
class EventTrace:
    records: list[TraceRecord] = field(default_factory=list)

    def append(self, time, kind, src, dst, worker_clock, master_clock) -> TraceRecord:
        rec = TraceRecord(float(time), len(self.records), kind, src, dst, worker_clock, master_clock)
        self.records.append(rec)
        return rec

    def lines(self) -> list[str]:
        return [r.to_json() for r in self.records]

    def write(self, path) -> Path:
        path = Path(path)
        path.write_text("".join(line + "\n" for line in self.lines()))
        return path

    def digest(self) -> str:
        h = hashlib.sha256()
        for line in self.lines():
            h.update(line.encode())
            h.update(b"\n")
        return h.hexdigest()

    def of_kind(self, kind: str) -> list[TraceRecord]:
        return [r for r in self.records if r.kind == kind]


@dataclass(order=True)
class _Event:
    time: float
    seq: int
    kind: str = field(compare=False)
    target: object = field(compare=False)
    payload: object = field(compare=False, default=None)


class InlineExecutor:
    """Runs worker computations on the caller's thread, at join time."""

    def submit(self, worker: int, fn, *args):
        return (fn, args)

    def join(self, handle):
        fn, args = handle
        return fn(*args)

    def shutdown(self):
        pass


class ThreadedExecutor:
    """One single-thread executor per worker; compute starts on release."""

    def __init__(self, num_workers: int):
        self._pools = [ThreadPoolExecutor(max_workers=1, thread_name_prefix=f"w{i}") for i in range(num_workers)]

    def submit(self, worker: int, fn, *args):
        return self._pools[worker].submit(fn, *args)

    def join(self, handle):
        return handle.result()

    def shutdown(self):
        for p in self._pools:
            p.shutdown(wait=True, cancel_futures=True)


def make_executor(mode: str, num_workers: int):
    if mode == "inline":
        return InlineExecutor()
    if mode == "threaded":
        return ThreadedExecutor(num_workers)
    raise ConfigurationError(f"unknown execution mode {mode!r}")


@dataclass
class SimulationOutcome:
    status: str  # converged | cap | quiescent
    virtual_time: float
    commits: int
    wall_time: float


class Simulation:
    """Event loop wiring a master, its workers, links and compute latencies."""

    def __init__(
        self,
        master: Master,
        workers: list[WorkerNode],
        link: LinkModel,
        speeds: SpeedProfile,
        stop: StopRule,
        link_latency: float = 0.05,
        retry_backoff: float = 1.0,
        max_time: float = float("inf"),
        execution: str = "inline",
        compute=compute_update,
    ):
        if link_latency < 0 or retry_backoff <= 0:
            raise ConfigurationError("link_latency must be >= 0 and retry_backoff > 0")
        self.master = master
        self.workers = workers
        self.link = link
        self.speeds = speeds
        self.stop = stop
        self.link_latency = float(link_latency)
        self.retry_backoff = float(retry_backoff)
        self.max_time = float(max_time)
        self.trace = EventTrace()
        self.now = 0.0
        self._heap: list[_Event] = []
        self._seq = 0
        self._stopped: set = set()
        self._handles: dict[int, object] = {}
        self._executor = make_executor(execution, len(workers))
        self._compute = compute

    # -- scheduling ---------------------------------------------------------

    def schedule(self, delay: float, kind: str, target, payload=None) -> None:
        heapq.heappush(self._heap, _Event(self.now + delay, self._seq, kind, target, payload))
        self._seq += 1

    def _record(self, kind, src, dst, worker_clock=None):
        self.trace.append(self.now, kind, node_label(src), node_label(dst), worker_clock, self.master.clock)

    def send(self, msg, src, dst, worker_clock) -> bool:
        self._record("send", src, dst, worker_clock)
        if self.link.transmit(src, dst):
            self.schedule(self.link_latency, "deliver", dst, (src, msg, worker_clock))
            return True
        self._record("drop", src, dst, worker_clock)
        return False

    def _release(self, i: int) -> None:
        """Start worker ``i`` on a new iteration."""
        self._handles[i] = self._executor.submit(i, self._compute, self.workers[i])
        self.schedule(self.speeds.draw(i), "ready", i)

    # -- handlers -----------------------------------------------------------

    def _on_ready(self, i: int) -> None:
        node = self.workers[i]
        update = self._executor.join(self._handles.pop(i))
        self._record("worker_tick", i, i, node.clock)
        self.send(update, i, MASTER, update.worker_clock)
        self.schedule(self.retry_backoff, "retry", i, update.worker_clock)

    def _on_retry(self, i: int, clock: int) -> None:
        node = self.workers[i]
        if node.pending is None or node.clock != clock:
            return
        self.send(node.pending, i, MASTER, clock)
        self.schedule(self.retry_backoff, "retry", i, clock)

    def _on_master_deliver(self, src: int, update) -> bool:
        """Returns True once the stop rule fires."""
        m = self.master
        accepted = m.on_receive(update)
        if not accepted:
            last = m.last_broadcast.get(src)
            held = m.mailbox.get(src)
            # a duplicate of an already committed update means our reply was lost
            if (
                self.link.symmetric
                and last is not None
                and src not in m.arrived
                and held is not None
                and held.worker_clock == update.worker_clock
            ):
                self.send(last, MASTER, src, update.worker_clock)
            return False
        if not m.barrier_check().ready:
            return False
        committed = sorted(m.arrived)
        broadcasts = m.commit()
        self._record("commit", MASTER, MASTER, None)
        if m.should_stop(self.stop):
            return True
        for msg in broadcasts:
            self.send(msg, MASTER, msg.recipient, m.mailbox[msg.recipient].worker_clock)
        assert [b.recipient for b in broadcasts] == committed
        return False

    def _on_worker_deliver(self, i: int, msg) -> None:
        node = self.workers[i]
        if node.pending is None or msg.master_clock <= node.last_master_clock:
            return
        apply_broadcast(node, msg)
        self._release(i)

    # -- main loop ----------------------------------------------------------

    def _shutdown(self) -> None:
        for i, node in enumerate(self.workers):
            self._record("shutdown", MASTER, i, node.clock)
            node.status = "stopped"
            self._stopped.add(i)

    def run(self) -> SimulationOutcome:
        t0 = _time.perf_counter()
        status = "quiescent"
        try:
            for i in range(len(self.workers)):
                self._release(i)
            while self._heap:
                ev = heapq.heappop(self._heap)
                if ev.time > self.max_time:
                    status = "cap"
                    break
                self.now = ev.time
                if ev.kind == "ready":
                    self._on_ready(ev.target)
                elif ev.kind == "retry":
                    self._on_retry(ev.target, ev.payload)
                elif ev.kind == "deliver":
                    src, msg, wclock = ev.payload
                    if ev.target in self._stopped:
                        self._record("drop", src, ev.target, wclock)
                        continue
                    self._record("deliver", src, ev.target, wclock)
                    if ev.target == MASTER:
                        if self._on_master_deliver(src, msg):
                            status = "converged"
                            break
                        if self.master.clock >= self.stop.max_commits:
                            status = "cap"
                            break
                    else:
                        self._on_worker_deliver(ev.target, msg)
            self._shutdown()
        finally:
            self._executor.shutdown()
        return SimulationOutcome(status, self.now, self.master.clock, _time.perf_counter() - t0)
