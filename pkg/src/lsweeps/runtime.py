"""Row-parallel execution of the sweeps with pipelined fronts.

Row ``i`` of the decomposition belongs to worker ``i mod p``.  Within a sweep
all workers process their share of one front, meet at a barrier, then read
the traces their neighbours posted to ordered point-to-point queues.
"""
from __future__ import annotations

import json
import os
import queue
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .cdd import CDDLayout
from .discretization import Stencil, _apply_rows
from .krylov import SolveReport
from .sweeps import (
    SWEEP_KINDS,
    CDDContext,
    SweepKind,
    SweepState,
    TraceBoard,
    assemble_global,
    local_solution_step,
    sweep_fronts,
    sweep_step,
)

ENV_WORKERS = "LSWEEPS_WORKERS"


def resolve_workers(p: int | None, q: int) -> int:
    """Worker count: ``LSWEEPS_WORKERS`` overrides ``p``; clamped to ``[1, q]``."""
    env = os.environ.get(ENV_WORKERS)
    if env:
        try:
            p = int(env)
        except ValueError:
            raise ValueError(f"{ENV_WORKERS} must be an integer, got {env!r}") from None
    p = 1 if p is None else int(p)
    return max(1, min(p, q))


@dataclass(frozen=True)
class WorkerAssignment:
    p: int
    q: int
    r: int

    def __post_init__(self):
        if not 1 <= self.p <= self.q:
            raise ValueError(f"worker count must be in [1, {self.q}], got {self.p}")

    def worker_of(self, i: int) -> int:
        return i % self.p

    def rows_of(self, w: int) -> list[int]:
        return list(range(w, self.q, self.p))

    def subdomains_of(self, w: int) -> list[tuple[int, int]]:
        return [(i, j) for i in self.rows_of(w) for j in range(self.r)]


@dataclass(frozen=True)
class MessageDescriptor:
    role: str
    src: tuple[int, int]
    dst: tuple[int, int]
    src_worker: int
    dst_worker: int
    volume: int


class ScheduleError(RuntimeError):
    pass


@dataclass(frozen=True)
class SweepSchedule:
    """Fronts of one sweep and the messages sent after each front."""

    kind: SweepKind
    q: int
    r: int
    fronts: tuple[tuple[tuple[int, int], ...], ...]
    messages: tuple[tuple[MessageDescriptor, ...], ...]

    @property
    def front_sizes(self) -> list[int]:
        return [len(f) for f in self.fronts]

    def predicted_messages(self) -> int:
        return sum(len(m) for m in self.messages)

    def predicted_volume(self) -> int:
        return sum(d.volume for m in self.messages for d in m)

    def front_of(self) -> dict[tuple[int, int], int]:
        return {ij: k for k, front in enumerate(self.fronts) for ij in front}


def build_schedule(layout: CDDLayout | tuple[int, int], direction: str,
                   p: int = 1) -> SweepSchedule:
    """Fronts and cross-worker messages for one sweep direction.

    ``layout`` may also be a bare ``(q, r)`` pair; message volumes are then
    reported as zero.
    """
    kind = SWEEP_KINDS[direction]
    if isinstance(layout, CDDLayout):
        q, r = layout.q, layout.r
    else:
        q, r = layout
        layout = None
    assign = WorkerAssignment(p, q, r)
    fronts = tuple(tuple(f) for f in sweep_fronts(kind, q, r))
    msgs = []
    for front in fronts:
        out = []
        for i, j in front:
            for role, di, dj in kind.incoming:
                ci, cj = i - di, j - dj
                if not (0 <= ci < q and 0 <= cj < r) or not kind.active(ci, cj, q, r):
                    continue
                sw, dw = assign.worker_of(i), assign.worker_of(ci)
                if sw == dw:
                    continue
                vol = 0
                if layout is not None:
                    inner, outer = layout.trace_indices(i, j, role)
                    vol = inner.size + outer.size
                out.append(MessageDescriptor(role, (i, j), (ci, cj), sw, dw, vol))
        msgs.append(tuple(out))
    sched = SweepSchedule(kind, q, r, fronts, tuple(msgs))
    check_schedule(sched)
    return sched


def check_schedule(schedule: SweepSchedule) -> None:
    """Each subdomain appears once; every dependency sits in an earlier front."""
    q, r, kind = schedule.q, schedule.r, schedule.kind
    seen = [ij for front in schedule.fronts for ij in front]
    if sorted(seen) != [(i, j) for i in range(q) for j in range(r)]:
        raise ScheduleError(f"{kind.name}: fronts do not cover every subdomain exactly once")
    where = schedule.front_of()
    for (i, j), k in where.items():
        for dep in kind.dependencies(i, j, q, r):
            if where[dep] >= k:
                raise ScheduleError(f"{kind.name}: ({i}, {j}) runs before its input {dep}")
    for front in schedule.fronts:
        members = set(front)
        for i, j in front:
            for dep in kind.dependencies(i, j, q, r):
                if dep in members:
                    raise ScheduleError(f"{kind.name}: front holds dependent pair {dep}->({i}, {j})")


@dataclass
class PhaseRecord:
    phase: str
    seconds: float
    messages: int = 0
    volume_complex: int = 0
    critical_seconds: float = 0.0

    def as_json(self) -> str:
        return json.dumps({"phase": self.phase, "seconds": self.seconds,
                           "messages": self.messages, "volume_complex": self.volume_complex})


def instrument(report: SolveReport, phase: str, wall_time: float,
               messages: int = 0, volume: int = 0) -> SolveReport:
    """Accumulate one phase's wall time and traffic into ``report``."""
    report.phase_timings[phase] = report.phase_timings.get(phase, 0.0) + wall_time
    report.messages[phase] = report.messages.get(phase, 0) + messages
    report.volume[phase] = report.volume.get(phase, 0) + volume
    return report


class DistributedState:
    """Per-worker sweep states of one preconditioner application."""

    def __init__(self, ctx: CDDContext, assign: WorkerAssignment):
        self.ctx = ctx
        self.layout = ctx.layout
        self.assign = assign
        self.workers = [SweepState(ctx, assign.subdomains_of(w)) for w in range(assign.p)]

    @property
    def solves(self) -> int:
        return sum(w.solves for w in self.workers)

    def owner(self, i: int, j: int) -> SweepState:
        return self.workers[self.assign.worker_of(i)]


class Runtime:
    """Worker pool executing sweeps, halo matvecs and ordered reductions."""

    def __init__(self, q: int, r: int | None = None, p: int | None = None):
        self.q = q
        self.r = q if r is None else r
        self.p = resolve_workers(p, q)
        self.assign = WorkerAssignment(self.p, self.q, self.r)
        self._pool = ThreadPoolExecutor(self.p) if self.p > 1 else None
        self._queues = {(s, d): queue.Queue() for s in range(self.p) for d in range(self.p) if s != d}
        self._schedules: dict = {}
        self.records: list[PhaseRecord] = []

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown()
            self._pool = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- worker plumbing -------------------------------------------------
    def _run_all(self, fn) -> list[float]:
        """Run ``fn(w)`` on every worker; barrier; returns per-worker CPU time.

        Thread CPU time rather than wall time, so that workers sharing fewer
        cores than ``p`` do not absorb each other's work into the critical path.
        """
        def timed(w):
            t0 = time.thread_time()
            fn(w)
            return time.thread_time() - t0

        if self._pool is None:
            return [timed(w) for w in range(self.p)]
        futures = [self._pool.submit(timed, w) for w in range(self.p)]
        return [f.result() for f in futures]

    def _record(self, phase, seconds, messages=0, volume=0, critical=0.0):
        self.records.append(PhaseRecord(phase, seconds, messages, volume, critical))

    def phase_totals(self, prefix: str = "") -> PhaseRecord:
        rs = [r for r in self.records if r.phase.startswith(prefix)]
        return PhaseRecord(prefix or "all", sum(r.seconds for r in rs), sum(r.messages for r in rs),
                           sum(r.volume_complex for r in rs), sum(r.critical_seconds for r in rs))

    def dump_records(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.records:
                fh.write(rec.as_json() + "\n")

    def schedule(self, layout: CDDLayout, name: str) -> SweepSchedule:
        key = (id(layout), name)
        if key not in self._schedules:
            self._schedules[key] = build_schedule(layout, name, self.p)
        return self._schedules[key]

    def _check_layout(self, layout: CDDLayout) -> WorkerAssignment:
        if (layout.q, layout.r) == (self.q, self.r):
            return self.assign
        # shifted decompositions have one more row/column
        return WorkerAssignment(min(self.p, layout.q), layout.q, layout.r)

    # -- executor interface used by the sweeps ---------------------------
    def factorize(self, ctx: CDDContext) -> None:
        assign = self._check_layout(ctx.layout)
        t0 = time.perf_counter()
        busy = self._run_all(lambda w: ctx.factorize_all(assign.subdomains_of(w))
                             if w < assign.p else None)
        self._record("factorize", time.perf_counter() - t0, critical=max(busy))

    def new_state(self, ctx: CDDContext) -> DistributedState:
        return DistributedState(ctx, self._check_layout(ctx.layout))

    def local_solutions(self, state: DistributedState, f: np.ndarray) -> None:
        t0 = time.perf_counter()

        def work(w):
            if w < len(state.workers):
                ws = state.workers[w]
                for i, j in ws.subdomains:
                    local_solution_step(ws, f, i, j)

        busy = self._run_all(work)
        self._record("local", time.perf_counter() - t0, critical=max(busy))

    def sweep(self, state: DistributedState, name: str, roles: dict, outputs: dict) -> None:
        run_sweep(self.schedule(state.layout, name), state, roles, outputs, self)

    def gather(self, state: DistributedState) -> np.ndarray:
        fields = [(ij, ws.u[ij]) for ws in state.workers for ij in ws.subdomains]
        fields.sort(key=lambda t: t[0])
        return assemble_global(state.layout, fields)

    # -- distributed linear algebra ---------------------------------------
    def row_blocks(self, layout: CDDLayout) -> list[int]:
        return list(layout.row_splits)

    def matvec(self, stencil: Stencil, u: np.ndarray, row_splits) -> np.ndarray:
        """Halo-exchange matvec over CDD row blocks owned by the workers."""
        ny, nx = stencil.shape
        U = np.asarray(u).reshape(ny, nx)
        nb = len(row_splits) - 1
        owner = [k % self.p for k in range(nb)]
        halos = []
        messages = 0
        for k in range(nb):
            a, b = row_splits[k], row_splits[k + 1]
            below = U[a - 1].copy() if k > 0 else None
            above = U[b].copy() if k < nb - 1 else None
            messages += (k > 0 and owner[k - 1] != owner[k]) + (k < nb - 1 and owner[k + 1] != owner[k])
            halos.append((below, above))
        out = np.empty((ny, nx), dtype=np.result_type(U, stencil.diag))
        t0 = time.perf_counter()

        def work(w):
            for k in range(w, nb, self.p):
                a, b = row_splits[k], row_splits[k + 1]
                out[a:b] = _apply_rows(stencil, U[a:b], a, b, *halos[k])

        busy = self._run_all(work)
        self._record("matvec", time.perf_counter() - t0, messages, messages * nx, max(busy))
        return out.ravel()

    def dot(self, u: np.ndarray, v: np.ndarray, row_splits, nx: int) -> complex:
        """Per-block partial sums, reduced in ascending block order."""
        u = np.asarray(u).ravel()
        v = np.asarray(v).ravel()
        if u.shape != v.shape:
            raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
        nb = len(row_splits) - 1
        parts = [0j] * nb

        def work(w):
            for k in range(w, nb, self.p):
                a, b = row_splits[k] * nx, row_splits[k + 1] * nx
                parts[k] = complex(np.vdot(u[a:b], v[a:b]))

        self._run_all(work)
        total = 0j
        for s in parts:
            total += s
        return total


def run_sweep(schedule: SweepSchedule, state: DistributedState, roles: dict, outputs: dict,
              runtime: Runtime) -> DistributedState:
    """Execute one sweep front by front with message passing between row workers."""
    kind = schedule.kind
    assign = state.assign
    if (schedule.q, schedule.r) != (state.layout.q, state.layout.r):
        raise ScheduleError("schedule and state belong to different decompositions")
    p = assign.p
    for ws in state.workers:
        for out in outputs.values():
            ws.boards[out] = TraceBoard(out)
    queues = runtime._queues
    sent = [0]
    volume = [0]
    critical = 0.0
    t0 = time.perf_counter()

    def drain(w):
        ws = state.workers[w]
        for src in range(p):
            if src == w:
                continue
            qu = queues[(src, w)]
            while True:
                try:
                    board, (i, j), tp = qu.get_nowait()
                except queue.Empty:
                    break
                ws.board(board).set(i, j, tp)

    for front, msgs in zip(schedule.fronts, schedule.messages):
        mine = {w: [] for w in range(p)}
        for i, j in front:
            mine[assign.worker_of(i)].append((i, j))
        out_by_worker = {w: [] for w in range(p)}
        for d in msgs:
            out_by_worker[d.src_worker].append(d)

        def work(w, mine=mine, out_by_worker=out_by_worker):
            if w >= p:
                return
            drain(w)
            ws = state.workers[w]
            for i, j in mine[w]:
                sweep_step(ws, kind, roles, outputs, i, j)
            for d in out_by_worker[w]:
                tp = ws.board(roles[d.role]).get(*d.src)
                queues[(w, d.dst_worker)].put((roles[d.role], d.src, tp))

        busy = runtime._run_all(work)
        critical += max(busy)
        sent[0] += len(msgs)
        volume[0] += sum(d.volume for d in msgs)
    runtime._run_all(lambda w: drain(w) if w < p else None)
    runtime._record(f"sweep:{kind.name}", time.perf_counter() - t0, sent[0], volume[0], critical)
    return state


@dataclass
class DistributedOperator:
    """Global operator and inner product bound to a runtime's row blocks."""

    runtime: Runtime
    stencil: Stencil
    row_splits: tuple[int, ...]
    nx: int = field(init=False)

    def __post_init__(self):
        self.nx = self.stencil.shape[1]

    def __call__(self, u: np.ndarray) -> np.ndarray:
        return self.runtime.matvec(self.stencil, u, self.row_splits)

    def dot(self, u: np.ndarray, v: np.ndarray) -> complex:
        return self.runtime.dot(u, v, self.row_splits, self.nx)
