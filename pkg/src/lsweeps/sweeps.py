"""L-sweeps preconditioner: traces, polarized fields and the eight sweeps.

A sweep visits subdomains front by front.  Each visited subdomain receives
traces from already-processed neighbours, solves its local problem with the
polarization right-hand side, adds the result to its field and records the
new traces on its boards.  Boards hold one :class:`TracePair` per subdomain;
an absent entry means zero.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .cdd import (
    HORIZONTAL,
    CDDLayout,
    WindowSet,
    build_windows,
    local_stencil,
    restrict_source,
    source_needs_windows,
)
from .discretization import PmlSpec
from .sparse_direct import Factorization, FactorizationCache, factorize, solve


@dataclass(frozen=True)
class TracePair:
    """Inner (owned) and outer (across the skeleton) line values on one side.

    Index arrays are global flat indices in increasing order and are shared,
    read-only, with the layout.
    """

    side: str
    inner: np.ndarray
    outer: np.ndarray
    inner_idx: np.ndarray
    outer_idx: np.ndarray
    nx: int

    def __post_init__(self):
        if self.inner.shape != self.inner_idx.shape or self.outer.shape != self.outer_idx.shape:
            raise ValueError("trace values do not match their index sets")

    def __add__(self, other: "TracePair") -> "TracePair":
        if other.side != self.side or other.inner_idx is not self.inner_idx and not np.array_equal(
            other.inner_idx, self.inner_idx
        ):
            raise ValueError("cannot add traces on different interfaces")
        return replace(self, inner=self.inner + other.inner, outer=self.outer + other.outer)

    @property
    def size(self) -> int:
        return self.inner.size + self.outer.size

    def is_zero(self) -> bool:
        return not (np.any(self.inner) or np.any(self.outer))

    @classmethod
    def zeros(cls, layout: CDDLayout, i: int, j: int, side: str) -> "TracePair":
        inner_idx, outer_idx = layout.trace_indices(i, j, side)
        return cls(side, np.zeros(inner_idx.size, complex), np.zeros(outer_idx.size, complex),
                   inner_idx, outer_idx, layout.grid.nx)


@dataclass(frozen=True)
class LTrace:
    """Two traces joined at a corner; overlapping points come from ``corner``."""

    sides: tuple[str, str]
    corner: str
    inner: np.ndarray
    outer: np.ndarray
    inner_idx: np.ndarray
    outer_idx: np.ndarray

    @property
    def size(self) -> int:
        return self.inner.size + self.outer.size

    def is_zero(self) -> bool:
        return not (np.any(self.inner) or np.any(self.outer))


def combine_L_trace(a: TracePair, b: TracePair) -> LTrace:
    """Join a horizontal and a vertical trace into the boundary of a quadrant.

    Each trace is cut at the corner so only the part bordering the receiving
    quadrant remains; the horizontal trace owns the corner points.
    """
    if (a.side in HORIZONTAL) == (b.side in HORIZONTAL):
        raise ValueError(f"sides {a.side} and {b.side} do not form a corner")
    h, v = (a, b) if a.side in HORIZONTAL else (b, a)
    nx = h.nx
    out_rows = h.outer_idx // nx
    out_cols = v.outer_idx % nx
    # receiving quadrant: beyond the outer lines of both traces
    if h.side == "T":
        row_ok = lambda idx: idx // nx >= out_rows.min()
    else:
        row_ok = lambda idx: idx // nx <= out_rows.max()
    if v.side == "R":
        col_ok = lambda idx: idx % nx >= out_cols.min()
    else:
        col_ok = lambda idx: idx % nx <= out_cols.max()

    def merge(hi, hv, vi, vv):
        hk = col_ok(hi)
        vk = row_ok(vi)
        hi, hv, vi, vv = hi[hk], hv[hk], vi[vk], vv[vk]
        keep = ~np.isin(vi, hi)
        idx = np.concatenate([hi, vi[keep]])
        val = np.concatenate([hv, vv[keep]])
        order = np.argsort(idx, kind="stable")
        return idx[order], val[order], int(keep.size - keep.sum())

    inner_idx, inner, _ = merge(h.inner_idx, h.inner, v.inner_idx, v.inner)
    outer_idx, outer, overlap = merge(h.outer_idx, h.outer, v.outer_idx, v.outer)
    if overlap == 0:
        raise ValueError(f"traces {h.side} and {v.side} do not meet at a corner")
    return LTrace((h.side, v.side), h.side, inner, outer, inner_idx, outer_idx)


def extract_traces(u_loc: np.ndarray, layout: CDDLayout, i: int, j: int) -> dict[str, TracePair]:
    """Inner/outer line values of a local field on every interior side."""
    out = {}
    for side in layout.interior_sides(i, j):
        gi, go = layout.trace_indices(i, j, side)
        li, lo = layout.local_trace_indices(i, j, side)
        out[side] = TracePair(side, u_loc[li], u_loc[lo], gi, go, layout.grid.nx)
    return out


class LocalProblem:
    """Local matrix of one subdomain, its factors and cached interface blocks."""

    def __init__(self, layout: CDDLayout, i: int, j: int, matrix: sp.csr_matrix,
                 factorization: Factorization):
        self.layout = layout
        self.i, self.j = i, j
        self.matrix = matrix
        self.factorization = factorization
        self._blocks: dict = {}

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def solve(self, b: np.ndarray) -> np.ndarray:
        return solve(self.factorization, b)

    def interface_blocks(self, trace):
        """Local index sets and the couplings A[G1, G2], A[G2, G1]."""
        key = (trace.inner_idx.size, trace.outer_idx.size,
               int(trace.inner_idx[0]), int(trace.outer_idx[0]))
        blk = self._blocks.get(key)
        if blk is None:
            lay, i, j = self.layout, self.i, self.j
            n = self.size
            g1 = lay.to_local(i, j, trace.inner_idx)
            g2 = lay.to_local(i, j, trace.outer_idx)
            if g1.min() < 0 or g2.min() < 0 or g1.max() >= n or g2.max() >= n:
                raise ValueError(f"trace does not fit local grid of ({i}, {j})")
            A = self.matrix
            blk = (g1, g2, A[g1][:, g2].tocsr(), A[g2][:, g1].tocsr())
            self._blocks[key] = blk
        return blk


def polarization_rhs(problem: LocalProblem, trace) -> np.ndarray:
    """Right-hand side whose solution reproduces the wave on the receiving
    side of the interface and vanishes on the source side.

    ``trace.inner`` lies on the source side (G1), ``trace.outer`` on the
    receiving side (G2): g[G1] = A12 u2, g[G2] = -A21 u1.
    """
    g1, g2, a12, a21 = problem.interface_blocks(trace)
    g = np.zeros(problem.size, dtype=np.complex128)
    g[g1] = a12 @ trace.outer
    g[g2] = -(a21 @ trace.inner)
    return g


def compute_pol_sol(problem: LocalProblem, trace) -> np.ndarray:
    if trace.is_zero():
        return np.zeros(problem.size, dtype=np.complex128)
    return problem.solve(polarization_rhs(problem, trace))


class CDDContext:
    """Local problems of one decomposition, factorized lazily and thread-safely."""

    def __init__(self, layout: CDDLayout, m_ext: np.ndarray, omega: float, spec: PmlSpec,
                 cache: FactorizationCache | None = None):
        self.layout = layout
        self.m_ext = m_ext
        self.omega = omega
        self.spec = spec
        self.cache = cache
        self._problems: dict = {}
        self._lock = threading.Lock()

    def problem(self, i: int, j: int) -> LocalProblem:
        P = self._problems.get((i, j))
        if P is None:
            A = local_stencil(self.layout, i, j, self.m_ext, self.omega, self.spec).to_csr()
            A, F = self.cache.shared(A) if self.cache is not None else (A, factorize(A))
            P = LocalProblem(self.layout, i, j, A, F)
            with self._lock:
                P = self._problems.setdefault((i, j), P)
        return P

    def factorize_all(self, subdomains=None) -> None:
        for i, j in subdomains or self.layout.subdomains():
            self.problem(i, j)

    @property
    def factorized(self) -> int:
        return len(self._problems)


class TraceBoard:
    """Optional trace per subdomain; absent entries read as zero."""

    def __init__(self, name: str = ""):
        self.name = name
        self._data: dict[tuple[int, int], TracePair] = {}

    def get(self, i: int, j: int) -> TracePair | None:
        return self._data.get((i, j))

    def set(self, i: int, j: int, tp: TracePair | None) -> None:
        if tp is None:
            self._data.pop((i, j), None)
        else:
            self._data[(i, j)] = tp

    def add(self, i: int, j: int, tp: TracePair) -> None:
        cur = self._data.get((i, j))
        self._data[(i, j)] = tp if cur is None else cur + tp

    def keys(self):
        return sorted(self._data)

    def __len__(self) -> int:
        return len(self._data)

    def copy(self) -> "TraceBoard":
        b = TraceBoard(self.name)
        b._data = dict(self._data)
        return b


@dataclass(frozen=True)
class SweepKind:
    """Data flow of one sweep direction.

    ``incoming`` lists ``(board role, di, dj)``: the trace on side ``role`` of
    neighbour ``(i+di, j+dj)`` drives subdomain ``(i, j)``.  Roles in
    ``accumulate`` are updated in place; roles in ``produce`` are written to
    fresh output boards from the increment alone.
    """

    name: str
    incoming: tuple[tuple[str, int, int], ...]
    accumulate: tuple[str, ...]
    produce: tuple[str, ...]
    # front index = si*i + sj*j + offset terms; signs flip for reverse sweeps
    di_sign: int
    dj_sign: int

    def active(self, i: int, j: int, q: int, r: int) -> bool:
        return all(0 <= i + di < q and 0 <= j + dj < r for _, di, dj in self.incoming)

    def front_index(self, i: int, j: int, q: int, r: int) -> int:
        a = {1: i, -1: q - 1 - i, 0: 0}[self.di_sign]
        b = {1: j, -1: r - 1 - j, 0: 0}[self.dj_sign]
        return a + b

    def dependencies(self, i: int, j: int, q: int, r: int):
        if not self.active(i, j, q, r):
            return []
        return [(i + di, j + dj) for _, di, dj in self.incoming]


SWEEP_KINDS: dict[str, SweepKind] = {
    k.name: k
    for k in (
        SweepKind("up", (("T", -1, 0),), ("T",), ("R", "L"), 1, 1),
        SweepKind("down", (("B", 1, 0),), ("B",), ("R", "L"), -1, -1),
        SweepKind("right", (("R", 0, -1),), ("R",), ("B", "T"), 0, 1),
        SweepKind("left", (("L", 0, 1),), ("L",), ("B", "T"), 0, -1),
        SweepKind("bl2tr", (("T", -1, 0), ("R", 0, -1)), ("R", "T"), (), 1, 1),
        SweepKind("tr2bl", (("B", 1, 0), ("L", 0, 1)), ("L", "B"), (), -1, -1),
        SweepKind("br2tl", (("T", -1, 0), ("L", 0, 1)), ("L", "T"), (), 1, -1),
        SweepKind("tl2br", (("B", 1, 0), ("R", 0, -1)), ("R", "B"), (), -1, 1),
    )
}

# Sweep order and board wiring of one scenario-3 application:
# (sweep, {role: board consumed and accumulated}, {role: board produced})
SWEEP_PLAN: tuple[tuple[str, dict, dict], ...] = (
    ("up", {"T": "T_loc"}, {"R": "R_up", "L": "L_up"}),
    ("down", {"B": "B_loc"}, {"R": "R_down", "L": "L_down"}),
    ("left", {"L": "L_loc"}, {"B": "B_left", "T": "T_left"}),
    ("right", {"R": "R_loc"}, {"B": "B_right", "T": "T_right"}),
    ("bl2tr", {"R": "R_up", "T": "T_right"}, {}),
    ("tr2bl", {"L": "L_down", "B": "B_left"}, {}),
    ("br2tl", {"L": "L_up", "T": "T_left"}, {}),
    ("tl2br", {"R": "R_down", "B": "B_right"}, {}),
)


def sweep_fronts(kind: SweepKind | str, q: int, r: int) -> list[list[tuple[int, int]]]:
    """Every subdomain grouped by front, fronts in execution order."""
    kind = SWEEP_KINDS[kind] if isinstance(kind, str) else kind
    fronts: dict[int, list] = {}
    for i in range(q):
        for j in range(r):
            fronts.setdefault(kind.front_index(i, j, q, r), []).append((i, j))
    return [fronts[k] for k in sorted(fronts)]


class SweepState:
    """Local fields and named trace boards of one preconditioner application."""

    def __init__(self, ctx: CDDContext, subdomains=None):
        self.ctx = ctx
        self.layout = ctx.layout
        self.subdomains = list(subdomains if subdomains is not None else self.layout.subdomains())
        self.u: dict[tuple[int, int], np.ndarray | None] = {ij: None for ij in self.subdomains}
        self.boards: dict[str, TraceBoard] = {}
        self.solves = 0

    def board(self, name: str) -> TraceBoard:
        b = self.boards.get(name)
        if b is None:
            b = self.boards[name] = TraceBoard(name)
        return b

    def add_field(self, i: int, j: int, du: np.ndarray) -> None:
        cur = self.u[(i, j)]
        self.u[(i, j)] = du if cur is None else cur + du


def local_solution_step(state: SweepState, f: np.ndarray, i: int, j: int) -> None:
    """Local solve with the restricted source; fills the four *_loc boards."""
    lay = state.layout
    rhs = restrict_source(f, lay, i, j)
    if not np.any(rhs):
        return
    u = state.ctx.problem(i, j).solve(rhs)
    state.solves += 1
    state.add_field(i, j, u)
    for side, tp in extract_traces(u, lay, i, j).items():
        state.board(f"{side}_loc").set(i, j, tp)


def gather_incoming(state: SweepState, kind: SweepKind, roles: dict, i: int, j: int):
    """Incoming trace data for ``(i, j)``, or None when there is nothing to do."""
    lay = state.layout
    if not kind.active(i, j, lay.q, lay.r):
        return None
    parts = []
    for role, di, dj in kind.incoming:
        parts.append((role, i + di, j + dj, state.board(roles[role]).get(i + di, j + dj)))
    if all(tp is None or tp.is_zero() for *_, tp in parts):
        return None
    filled = [tp if tp is not None else TracePair.zeros(lay, si, sj, role)
              for role, si, sj, tp in parts]
    if len(filled) == 1:
        return filled[0]
    return combine_L_trace(*filled)


def sweep_step(state: SweepState, kind: SweepKind, roles: dict, outputs: dict,
               i: int, j: int) -> bool:
    """Process one subdomain of a sweep; returns False for a no-op."""
    data = gather_incoming(state, kind, roles, i, j)
    if data is None:
        return False
    lay = state.layout
    du = compute_pol_sol(state.ctx.problem(i, j), data)
    state.solves += 1
    state.add_field(i, j, du)
    traces = extract_traces(du, lay, i, j)
    for role in kind.accumulate:
        if role in traces:
            state.board(roles[role]).add(i, j, traces[role])
    for role in kind.produce:
        if role in traces:
            state.board(outputs[role]).set(i, j, traces[role])
    return True


class SequentialExecutor:
    """Single-threaded reference execution of the sweep schedule."""

    def new_state(self, ctx: CDDContext) -> SweepState:
        return SweepState(ctx)

    def local_solutions(self, state: SweepState, f: np.ndarray) -> None:
        for i, j in state.subdomains:
            local_solution_step(state, f, i, j)

    def sweep(self, state: SweepState, name: str, roles: dict, outputs: dict) -> None:
        kind = SWEEP_KINDS[name]
        for out in outputs.values():
            state.boards[out] = TraceBoard(out)
        for front in sweep_fronts(kind, state.layout.q, state.layout.r):
            for i, j in front:
                sweep_step(state, kind, roles, outputs, i, j)

    def gather(self, state: SweepState) -> np.ndarray:
        return assemble_global(state.layout, state.u.items())


def assemble_global(layout: CDDLayout, fields) -> np.ndarray:
    out = np.zeros(layout.grid.size, dtype=np.complex128)
    for (i, j), u in fields:
        if u is not None:
            out[layout.owned_global_indices(i, j)] = u[layout.owned_local_indices(i, j)]
    return out


def _run_sweep(state, name, executor=None):
    executor = executor or SequentialExecutor()
    for sweep, roles, outputs in SWEEP_PLAN:
        if sweep == name:
            executor.sweep(state, sweep, roles, outputs)
            return state
    raise KeyError(name)


def add_loc_sols(f: np.ndarray, ctx: CDDContext, executor=None) -> SweepState:
    executor = executor or SequentialExecutor()
    state = executor.new_state(ctx)
    executor.local_solutions(state, f)
    return state


def sweep_up(state, executor=None):
    return _run_sweep(state, "up", executor)


def sweep_down(state, executor=None):
    return _run_sweep(state, "down", executor)


def sweep_left(state, executor=None):
    return _run_sweep(state, "left", executor)


def sweep_right(state, executor=None):
    return _run_sweep(state, "right", executor)


def sweep_bl2tr(state, executor=None):
    return _run_sweep(state, "bl2tr", executor)


def sweep_tr2bl(state, executor=None):
    return _run_sweep(state, "tr2bl", executor)


def sweep_br2tl(state, executor=None):
    return _run_sweep(state, "br2tl", executor)


def sweep_tl2br(state, executor=None):
    return _run_sweep(state, "tl2br", executor)


class SkeletonSourceError(ValueError):
    """Scenario 3 was asked to handle a source touching the skeleton."""


def compute_scenario3(f: np.ndarray, ctx: CDDContext, executor=None,
                      check: bool = True) -> np.ndarray:
    """Local solves, four cardinal and four diagonal sweeps, then assembly."""
    f = np.asarray(f).ravel()
    if check and source_needs_windows(f, ctx.layout):
        raise SkeletonSourceError("source is nonzero on the skeleton; use windowed sources")
    executor = executor or SequentialExecutor()
    state = executor.new_state(ctx)
    executor.local_solutions(state, f)
    for name, roles, outputs in SWEEP_PLAN:
        executor.sweep(state, name, roles, outputs)
    return executor.gather(state)


@dataclass
class LSweepsPreconditioner:
    """Approximate inverse of the global operator.

    ``mode`` picks the operator applied by :meth:`__call__`: ``"auto"``
    windows only sources that touch the skeleton, ``"scenario3"`` never
    windows and ``"windowed"`` always does.  Only the last two are fixed
    linear maps.
    """

    layout: CDDLayout
    m_ext: np.ndarray
    omega: float
    spec: PmlSpec
    executor: object = None
    mode: str = "auto"
    cache: FactorizationCache | None = field(default_factory=FactorizationCache)
    _windows: WindowSet | None = field(default=None, repr=False)
    _contexts: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.mode not in ("auto", "scenario3", "windowed"):
            raise ValueError(f"unknown preconditioner mode {self.mode!r}")

    @property
    def windows(self) -> WindowSet:
        if self._windows is None:
            self._windows = build_windows(self.layout)
        return self._windows

    def context(self, k: int = 0) -> CDDContext:
        ctx = self._contexts.get(k)
        if ctx is None:
            lay = self.layout if k == 0 else self.windows.layouts[k]
            ctx = self._contexts[k] = CDDContext(lay, self.m_ext, self.omega, self.spec, self.cache)
        return ctx

    def setup(self, windowed: bool | None = None) -> None:
        """Factorize eagerly (the original CDD, plus shifted ones if windowed)."""
        windowed = self.mode == "windowed" if windowed is None else windowed
        for k in range(4 if windowed else 1):
            ctx = self.context(k)
            factorize_context = getattr(self.executor, "factorize", None)
            if factorize_context is not None:
                factorize_context(ctx)
            else:
                ctx.factorize_all()

    def scenario3(self, f: np.ndarray, k: int = 0, check: bool = True) -> np.ndarray:
        return compute_scenario3(f, self.context(k), self.executor, check)

    def windowed(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f).ravel()
        out = np.zeros_like(f, dtype=np.complex128)
        for k, phi in enumerate(self.windows.phis):
            fk = phi.ravel() * f
            if np.any(fk):
                out += self.scenario3(fk, k, check=False)
        return out

    def __call__(self, f: np.ndarray) -> np.ndarray:
        if self.mode == "scenario3":
            return self.scenario3(f, 0, check=False)
        if self.mode == "windowed":
            return self.windowed(f)
        return apply_preconditioner(f, self)


def apply_preconditioner(f: np.ndarray, precond: LSweepsPreconditioner) -> np.ndarray:
    """Scenario 3 when ``f`` avoids the skeleton, otherwise the four windowed solves."""
    f = np.asarray(f).ravel()
    if not np.any(f):
        return np.zeros_like(f, dtype=np.complex128)
    if source_needs_windows(f, precond.layout):
        return precond.windowed(f)
    return precond.scenario3(f, 0, check=False)
