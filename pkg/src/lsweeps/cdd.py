"""Checkerboard domain decomposition on the extended grid.

Subdomain ``(i, j)`` is row ``i`` (counted from the bottom, y) and column
``j`` (from the left, x), both zero-based.  Skeleton lines sit between grid
lines, so a split at extended-grid index ``k`` separates lines ``k-1`` and
``k``.  Boundary subdomains own the adjacent global PML collar.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .discretization import Grid2D, PmlSpec, helmholtz_stencil

SIDES = ("B", "R", "T", "L")
HORIZONTAL = ("B", "T")


@dataclass(frozen=True)
class CDDLayout:
    grid: Grid2D
    row_splits: tuple[int, ...]
    col_splits: tuple[int, ...]
    delta: int = 1
    name: str = "original"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        g = self.grid
        rs, cs = self.row_splits, self.col_splits
        if rs[0] != 0 or rs[-1] != g.ny or cs[0] != 0 or cs[-1] != g.nx:
            raise ValueError("splits must span the extended grid")
        if self.delta < 1:
            raise ValueError("delta must be at least 1")
        for splits in (rs, cs):
            widths = np.diff(splits)
            if len(splits) > 2 and widths.min() < 2 * self.delta:
                raise ValueError("subdomains must be at least 2*delta lines wide")
            if np.any(widths <= 0):
                raise ValueError("splits must be strictly increasing")
        for i, j in self.subdomains():
            wr0, wr1, wc0, wc1 = self.window(i, j)
            if wr0 < 0 or wc0 < 0 or wr1 > g.ny or wc1 > g.nx:
                raise ValueError(f"local grid of ({i}, {j}) leaves the extended grid")

    @property
    def q(self) -> int:
        return len(self.row_splits) - 1

    @property
    def r(self) -> int:
        return len(self.col_splits) - 1

    @property
    def margin(self) -> int:
        """Lines a local problem adds beyond an interior skeleton line."""
        return 2 * self.delta + self.grid.n_pml

    def subdomains(self):
        return [(i, j) for i in range(self.q) for j in range(self.r)]

    def check(self, i: int, j: int) -> None:
        if not (0 <= i < self.q and 0 <= j < self.r):
            raise IndexError(f"subdomain ({i}, {j}) outside {self.q}x{self.r} layout")

    def omega_range(self, i: int, j: int) -> tuple[int, int, int, int]:
        """Extended-grid index ranges ``(r0, r1, c0, c1)`` of the owned set."""
        self.check(i, j)
        return (self.row_splits[i], self.row_splits[i + 1],
                self.col_splits[j], self.col_splits[j + 1])

    def interior_sides(self, i: int, j: int) -> list[str]:
        sides = []
        if i > 0:
            sides.append("B")
        if j < self.r - 1:
            sides.append("R")
        if i < self.q - 1:
            sides.append("T")
        if j > 0:
            sides.append("L")
        return sides

    def window(self, i: int, j: int) -> tuple[int, int, int, int]:
        """Index ranges of the local grid: owned set + 2*delta + local PML."""
        r0, r1, c0, c1 = self.omega_range(i, j)
        m = self.margin
        return (r0 - m if i > 0 else r0, r1 + m if i < self.q - 1 else r1,
                c0 - m if j > 0 else c0, c1 + m if j < self.r - 1 else c1)

    def local_box(self, i: int, j: int) -> tuple[tuple[int, int], tuple[int, int]]:
        """First/last column and row of the local bulk (no PML absorption)."""
        g = self.grid
        r0, r1, c0, c1 = self.omega_range(i, j)
        d = 2 * self.delta
        p = g.n_pml
        x0 = c0 - d if j > 0 else p
        x1 = c1 - 1 + d if j < self.r - 1 else p + g.nx_bulk - 1
        y0 = r0 - d if i > 0 else p
        y1 = r1 - 1 + d if i < self.q - 1 else p + g.ny_bulk - 1
        return ((x0, x1), (y0, y1))

    def local_shape(self, i: int, j: int) -> tuple[int, int]:
        wr0, wr1, wc0, wc1 = self.window(i, j)
        return (wr1 - wr0, wc1 - wc0)

    def to_local(self, i: int, j: int, flat_global: np.ndarray) -> np.ndarray:
        wr0, _, wc0, _ = self.window(i, j)
        nx = self.grid.nx
        rows, cols = np.divmod(np.asarray(flat_global), nx)
        return (rows - wr0) * self.local_shape(i, j)[1] + (cols - wc0)

    def trace_indices(self, i: int, j: int, side: str) -> tuple[np.ndarray, np.ndarray]:
        """Global flat indices of the inner and outer delta-lines on ``side``.

        The lines run across the whole local grid, through the collar and the
        local PML, so that they end in absorbing layers.  Inner lines lie on
        the owned side of the skeleton, outer lines across it.  Both are
        sorted by increasing global index.
        """
        key = ("trace", i, j, side)
        if key in self._cache:
            return self._cache[key]
        if side not in self.interior_sides(i, j):
            raise ValueError(f"side {side} of ({i}, {j}) is on the physical boundary")
        r0, r1, c0, c1 = self.omega_range(i, j)
        wr0, wr1, wc0, wc1 = self.window(i, j)
        d = self.delta
        nx = self.grid.nx
        if side == "B":
            inner = _block(r0, r0 + d, wc0, wc1, nx)
            outer = _block(r0 - d, r0, wc0, wc1, nx)
        elif side == "T":
            inner = _block(r1 - d, r1, wc0, wc1, nx)
            outer = _block(r1, r1 + d, wc0, wc1, nx)
        elif side == "L":
            inner = _block(wr0, wr1, c0, c0 + d, nx)
            outer = _block(wr0, wr1, c0 - d, c0, nx)
        elif side == "R":
            inner = _block(wr0, wr1, c1 - d, c1, nx)
            outer = _block(wr0, wr1, c1, c1 + d, nx)
        else:
            raise ValueError(f"unknown side {side!r}")
        inner.setflags(write=False)
        outer.setflags(write=False)
        self._cache[key] = (inner, outer)
        return inner, outer

    def local_trace_indices(self, i: int, j: int, side: str) -> tuple[np.ndarray, np.ndarray]:
        key = ("ltrace", i, j, side)
        if key not in self._cache:
            inner, outer = self.trace_indices(i, j, side)
            self._cache[key] = (self.to_local(i, j, inner), self.to_local(i, j, outer))
        return self._cache[key]

    def owned_local_indices(self, i: int, j: int) -> np.ndarray:
        """Local flat indices of the owned set, in global row-major order."""
        key = ("owned", i, j)
        if key not in self._cache:
            r0, r1, c0, c1 = self.omega_range(i, j)
            self._cache[key] = self.to_local(i, j, _block(r0, r1, c0, c1, self.grid.nx))
        return self._cache[key]

    def owned_global_indices(self, i: int, j: int) -> np.ndarray:
        key = ("gowned", i, j)
        if key not in self._cache:
            r0, r1, c0, c1 = self.omega_range(i, j)
            self._cache[key] = _block(r0, r1, c0, c1, self.grid.nx)
        return self._cache[key]

    @cached_property
    def skeleton_mask(self) -> np.ndarray:
        """Points within ``delta`` lines of an interior skeleton line (union of all traces)."""
        return self.band_mask(self.delta)

    def band_mask(self, width: int) -> np.ndarray:
        ny, nx = self.grid.shape
        rows = np.zeros(ny, dtype=bool)
        cols = np.zeros(nx, dtype=bool)
        for k in self.row_splits[1:-1]:
            rows[max(k - width, 0):k + width] = True
        for k in self.col_splits[1:-1]:
            cols[max(k - width, 0):k + width] = True
        return rows[:, None] | cols[None, :]


def _block(r0, r1, c0, c1, nx) -> np.ndarray:
    rr, cc = np.meshgrid(np.arange(r0, r1), np.arange(c0, c1), indexing="ij")
    return (rr * nx + cc).ravel()


def build_cdd(grid: Grid2D, q: int, r: int, delta: int = 1) -> CDDLayout:
    """Uniform ``q`` x ``r`` decomposition of the bulk into equal blocks."""
    if q < 1 or r < 1:
        raise ValueError("q and r must be positive")
    if grid.ny_bulk % q or grid.nx_bulk % r:
        raise ValueError(
            f"bulk {grid.ny_bulk}x{grid.nx_bulk} is not divisible into {q}x{r} equal blocks"
        )
    by, bx = grid.ny_bulk // q, grid.nx_bulk // r
    p = grid.n_pml
    rows = (0, *(p + k * by for k in range(1, q)), grid.ny)
    cols = (0, *(p + k * bx for k in range(1, r)), grid.nx)
    return CDDLayout(grid, rows, cols, delta)


def shifted_splits(splits: tuple[int, ...], n_pml: int, n_bulk: int) -> tuple[int, ...]:
    """Skeleton shifted by half a subdomain, clamped at the physical boundary."""
    nb = len(splits) - 1
    b = n_bulk // nb
    s = b // 2
    total = splits[-1]
    return (0, *(n_pml + s + k * b for k in range(nb)), total)


def shifted_layouts(base: CDDLayout) -> list[CDDLayout]:
    """Original layout followed by its x-, y- and xy-shifted companions."""
    g = base.grid
    rows_s = shifted_splits(base.row_splits, g.n_pml, g.ny_bulk)
    cols_s = shifted_splits(base.col_splits, g.n_pml, g.nx_bulk)
    return [
        base,
        CDDLayout(g, base.row_splits, cols_s, base.delta, "shift_x"),
        CDDLayout(g, rows_s, base.col_splits, base.delta, "shift_y"),
        CDDLayout(g, rows_s, cols_s, base.delta, "shift_xy"),
    ]


def local_slowness(layout: CDDLayout, i: int, j: int, m_ext: np.ndarray) -> np.ndarray:
    """Global extended slowness on the local grid; clamped outside the global grid."""
    wr0, wr1, wc0, wc1 = layout.window(i, j)
    ny, nx = m_ext.shape
    rows = np.clip(np.arange(wr0, wr1), 0, ny - 1)
    cols = np.clip(np.arange(wc0, wc1), 0, nx - 1)
    return m_ext[np.ix_(rows, cols)]


def build_local_problem(layout: CDDLayout, i: int, j: int, m_ext: np.ndarray,
                        omega: float, spec: PmlSpec) -> sp.csr_matrix:
    """Local matrix on the (2*delta)-extended grid with its own PML."""
    return local_stencil(layout, i, j, m_ext, omega, spec).to_csr()


def local_stencil(layout: CDDLayout, i: int, j: int, m_ext: np.ndarray,
                  omega: float, spec: PmlSpec):
    layout.check(i, j)
    wr0, wr1, wc0, wc1 = layout.window(i, j)
    return helmholtz_stencil(
        layout.grid, (wr0, wr1), (wc0, wc1),
        local_slowness(layout, i, j, m_ext), omega, spec, layout.local_box(i, j),
    )


def restrict_source(f: np.ndarray, layout: CDDLayout, i: int, j: int) -> np.ndarray:
    """Local right-hand side: ``f`` on the owned set, zero elsewhere."""
    f = np.asarray(f).reshape(layout.grid.shape)
    r0, r1, c0, c1 = layout.omega_range(i, j)
    out = np.zeros(layout.local_shape(i, j), dtype=np.complex128)
    wr0, _, wc0, _ = layout.window(i, j)
    out[r0 - wr0:r1 - wr0, c0 - wc0:c1 - wc0] = f[r0:r1, c0:c1]
    return out.ravel()


def source_needs_windows(f: np.ndarray, layout: CDDLayout, threshold: float = 0.0) -> bool:
    """True iff ``f`` is nonzero on some trace line of ``layout``."""
    f = np.asarray(f).reshape(layout.grid.shape)
    return bool(np.any(np.abs(f[layout.skeleton_mask]) > threshold))


def smoothstep5(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (t * (6.0 * t - 15.0) + 10.0)


def window_profile(n: int, zero_lines, one_lines, width: float) -> np.ndarray:
    """1D profile: 0 within ``width`` of ``zero_lines``, 1 within ``width`` of
    ``one_lines``, quintic smoothstep between neighbouring anchors and constant
    beyond the outermost anchor.  Line positions are half-integer indices."""
    anchors = sorted([(float(p), 0.0) for p in zero_lines] + [(float(p), 1.0) for p in one_lines])
    x = np.arange(n, dtype=float)
    if not anchors:
        return np.ones(n)
    out = np.full(n, anchors[0][1])
    out[x >= anchors[-1][0]] = anchors[-1][1]
    for (p0, v0), (p1, v1) in zip(anchors, anchors[1:]):
        a, b = p0 + width, p1 - width
        if b <= a:
            raise ValueError("window band too wide for subdomain size")
        seg = (x >= p0) & (x < p1)
        t = (x[seg] - a) / (b - a)
        out[seg] = v0 + (v1 - v0) * smoothstep5(t)
    return out


@dataclass(frozen=True)
class WindowSet:
    phis: tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]
    layouts: tuple[CDDLayout, CDDLayout, CDDLayout, CDDLayout]
    band: int

    def __iter__(self):
        return iter(zip(self.phis, self.layouts))


def build_windows(layout: CDDLayout, grid: Grid2D | None = None) -> WindowSet:
    """Partition of unity whose members vanish on the skeleton band of one of
    the four (original and half-shifted) decompositions."""
    grid = grid or layout.grid
    layouts = shifted_layouts(layout)
    band = layout.delta + 1
    min_width = 4 * band
    for lay in layouts[1:]:
        for splits in (lay.row_splits, lay.col_splits):
            inner = np.diff(splits[1:-1])
            if inner.size and inner.min() < min_width:
                raise ValueError("window band too wide for subdomain size")
    # skeleton lines at half-integer positions k - 1/2
    orig_x = [k - 0.5 for k in layout.col_splits[1:-1]]
    orig_y = [k - 0.5 for k in layout.row_splits[1:-1]]
    shift_x = [k - 0.5 for k in layouts[1].col_splits[1:-1]]
    shift_y = [k - 0.5 for k in layouts[2].row_splits[1:-1]]
    # points at distance <= band from a line: |k - p| <= band
    width = band
    tx = window_profile(grid.nx, orig_x, shift_x, width)
    ty = window_profile(grid.ny, orig_y, shift_y, width)
    phis = (
        ty[:, None] * tx[None, :],
        ty[:, None] * (1.0 - tx)[None, :],
        (1.0 - ty)[:, None] * tx[None, :],
        (1.0 - ty)[:, None] * (1.0 - tx)[None, :],
    )
    return WindowSet(phis, tuple(layouts), band)
