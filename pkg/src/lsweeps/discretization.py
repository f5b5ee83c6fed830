"""PML-truncated Helmholtz operator on regular 2D grids.

Grid points sit at ``x_p = p*h`` for bulk indices ``p = 0..nx_bulk-1``; the
extended grid adds ``n_pml`` points on every side.  Arrays are row-major with
row = y index.  Out-of-domain neighbours are eliminated (homogeneous Dirichlet).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class Grid2D:
    nx_bulk: int
    ny_bulk: int
    h: float
    n_pml: int

    def __post_init__(self):
        if self.nx_bulk < 1 or self.ny_bulk < 1:
            raise ValueError("bulk dimensions must be positive")
        if not self.h > 0:
            raise ValueError("grid spacing must be positive")
        if self.n_pml < 1:
            raise ValueError("n_pml must be at least 1")

    @classmethod
    def unit_square(cls, n: int, n_pml: int) -> "Grid2D":
        """``n`` x ``n`` bulk points spanning [0, 1]^2 (both ends included)."""
        return cls(n, n, 1.0 / (n - 1), n_pml)

    @property
    def nx(self) -> int:
        return self.nx_bulk + 2 * self.n_pml

    @property
    def ny(self) -> int:
        return self.ny_bulk + 2 * self.n_pml

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def size(self) -> int:
        return self.nx * self.ny

    @property
    def origin(self) -> tuple[int, int]:
        """(row, col) of the first bulk point inside the extended grid."""
        return (self.n_pml, self.n_pml)

    @property
    def bulk_box(self) -> tuple[tuple[float, float], tuple[float, float]]:
        """((x_lo, x_hi), (y_lo, y_hi)) of the physical bulk domain."""
        return ((0.0, (self.nx_bulk - 1) * self.h), (0.0, (self.ny_bulk - 1) * self.h))

    def xcoord(self, col) -> np.ndarray:
        """Physical x of extended-grid column index (may lie outside the grid)."""
        return (np.asarray(col, dtype=float) - self.n_pml) * self.h

    def ycoord(self, row) -> np.ndarray:
        return (np.asarray(row, dtype=float) - self.n_pml) * self.h


@dataclass(frozen=True)
class SlownessModel:
    """Squared slowness ``1/c^2`` on the bulk grid, shape (ny_bulk, nx_bulk)."""

    values: np.ndarray
    m0: float | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 2:
            raise ValueError("slowness must be a 2D array")
        object.__setattr__(self, "values", values)
        m0 = float(values.min()) if self.m0 is None else float(self.m0)
        if m0 <= 0:
            raise ValueError("m0 must be positive")
        if values.min() < m0 * (1 - 1e-12) or values.max() > 1 + 1e-12:
            raise ValueError("slowness must satisfy m0 <= m <= 1")
        object.__setattr__(self, "m0", m0)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


ABSORPTION_SCALINGS = ("per_point", "literal")


@dataclass(frozen=True)
class PmlSpec:
    """Cubic PML with width ``delta_pml`` and absorption constant ``C``."""

    delta_pml: float
    C: float

    @classmethod
    def for_problem(cls, grid: Grid2D, omega: float, scaling: str = "per_point") -> "PmlSpec":
        """``C = ln(omega)`` per PML grid cell (``"per_point"``) or in total (``"literal"``).

        With ``"literal"`` the one-way attenuation ``exp(-C/4)`` does not depend
        on the layer thickness; ``"per_point"`` makes it grow with ``n_pml``.
        """
        if not omega > 1:
            raise ValueError("omega must exceed 1 so that ln(omega) > 0")
        if scaling not in ABSORPTION_SCALINGS:
            raise ValueError(f"unknown absorption scaling {scaling!r}")
        C = math.log(omega)
        if scaling == "per_point":
            C *= grid.n_pml
        return cls(delta_pml=grid.n_pml * grid.h, C=C)


def pml_points(ppw: float, wavelengths: float, m0: float = 1.0) -> int:
    """PML thickness in points: ``wavelengths`` slowest wavelengths at ``ppw``.

    For 10 points per wavelength and 2 wavelengths this is ceil(20/sqrt(m0)).
    """
    return int(math.ceil(round(wavelengths * ppw / math.sqrt(m0), 9)))


def pml_sigma(coord, axis_extent=(0.0, 1.0), spec: PmlSpec | None = None):
    """Cubic absorption profile; zero inside ``axis_extent``."""
    lo, hi = axis_extent
    x = np.asarray(coord, dtype=float)
    dist = np.where(x < lo, lo - x, np.where(x > hi, x - hi, 0.0))
    d = spec.delta_pml
    out = spec.C / d * (dist / d) ** 3
    return out if out.ndim else float(out)


def pml_alpha(coord, omega: float, spec: PmlSpec, axis_extent=(0.0, 1.0)):
    """Coordinate stretch ``1 / (1 + i sigma/omega)``.

    ``omega = 0`` is accepted only for a non-absorbing layer (``C = 0``).
    """
    if omega < 0:
        raise ValueError("omega must be non-negative")
    sigma = np.asarray(pml_sigma(coord, axis_extent, spec))
    if omega == 0:
        if np.any(sigma):
            raise ValueError("an absorbing PML needs omega > 0")
        ratio = np.zeros_like(sigma)
    else:
        ratio = sigma / omega
    out = 1.0 / (1.0 + 1j * ratio)
    return out if np.ndim(out) else complex(out)


def extend_slowness(bulk: SlownessModel, grid: Grid2D) -> np.ndarray:
    """Normal extension of the bulk slowness into the PML collar."""
    if bulk.shape != (grid.ny_bulk, grid.nx_bulk):
        raise ValueError(
            f"slowness shape {bulk.shape} does not match bulk grid "
            f"{(grid.ny_bulk, grid.nx_bulk)}"
        )
    return np.pad(bulk.values, grid.n_pml, mode="edge")


@dataclass(frozen=True)
class Stencil:
    """Five-point coefficients of a grid operator on an ``(ny, nx)`` window.

    ``west[r, c]`` couples point (r, c) to (r, c-1), and so on.  Couplings that
    leave the window are stored but never applied.
    """

    diag: np.ndarray
    west: np.ndarray
    east: np.ndarray
    south: np.ndarray
    north: np.ndarray
    _csr: list = field(default_factory=list, repr=False, compare=False)

    @property
    def shape(self) -> tuple[int, int]:
        return self.diag.shape

    def apply(self, u: np.ndarray) -> np.ndarray:
        """Apply to a field of the window shape (Dirichlet outside)."""
        return _apply_rows(self, u.reshape(self.shape), 0, self.shape[0], None, None)

    def to_csr(self) -> sp.csr_matrix:
        if self._csr:
            return self._csr[0]
        ny, nx = self.shape
        idx = np.arange(ny * nx).reshape(ny, nx)
        rows = [idx.ravel()]
        cols = [idx.ravel()]
        vals = [self.diag.ravel()]
        for coef, rsl, shift in (
            (self.west, np.s_[:, 1:], -1),
            (self.east, np.s_[:, :-1], 1),
            (self.south, np.s_[1:, :], -nx),
            (self.north, np.s_[:-1, :], nx),
        ):
            r = idx[rsl].ravel()
            rows.append(r)
            cols.append(r + shift)
            vals.append(coef[rsl].ravel())
        A = sp.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(ny * nx, ny * nx),
        )
        A.sum_duplicates()
        A.sort_indices()
        self._csr.append(A)
        return A


def helmholtz_stencil(
    grid: Grid2D,
    rows: tuple[int, int],
    cols: tuple[int, int],
    m_window: np.ndarray,
    omega: float,
    spec: PmlSpec,
    box: tuple[tuple[int, int], tuple[int, int]],
) -> Stencil:
    """Stencil on the extended-grid index window ``rows`` x ``cols``.

    ``box = ((c_lo, c_hi), (r_lo, r_hi))`` holds the first and last column and
    row index where the PML profile vanishes; the global problem uses the
    bulk, local problems their own (2*delta)-extended bulk.  Distances into the
    PML are formed in index units, so windows with the same geometry relative
    to their box give bitwise-identical stencils.  Half-point stretches are
    evaluated at the half-point positions.
    """
    r0, r1 = rows
    c0, c1 = cols
    if m_window.shape != (r1 - r0, c1 - c0):
        raise ValueError("slowness window does not match index window")
    h = grid.h
    (xlo, xhi), (ylo, yhi) = box
    cx = np.arange(c0, c1, dtype=float)
    ry = np.arange(r0, r1, dtype=float)
    ax = _stretch(cx, xlo, xhi, h, omega, spec)
    ay = _stretch(ry, ylo, yhi, h, omega, spec)
    # half points p - 1/2 for p = c0..c1 (one more than the nodes)
    axh = _stretch(np.arange(c0, c1 + 1) - 0.5, xlo, xhi, h, omega, spec)
    ayh = _stretch(np.arange(r0, r1 + 1) - 0.5, ylo, yhi, h, omega, spec)

    # s1 = a1/a2 at (x_{p-1/2}, y_q); s2 = a2/a1 at (x_p, y_{q-1/2})
    s1 = axh[None, :] / ay[:, None]
    s2 = ayh[:, None] / ax[None, :]
    inv_h2 = 1.0 / (h * h)
    west = -s1[:, :-1] * inv_h2
    east = -s1[:, 1:] * inv_h2
    south = -s2[:-1, :] * inv_h2
    north = -s2[1:, :] * inv_h2
    mass = omega**2 * m_window / (ax[None, :] * ay[:, None])
    diag = (s1[:, :-1] + s1[:, 1:] + s2[:-1, :] + s2[1:, :]) * inv_h2 - mass
    return Stencil(diag, west, east, south, north)


def _stretch(idx, lo, hi, h, omega, spec):
    dist = np.where(idx < lo, lo - idx, np.where(idx > hi, idx - hi, 0.0)) * h
    return pml_alpha(dist, omega, spec, (0.0, 0.0))


def bulk_index_box(grid: Grid2D) -> tuple[tuple[int, int], tuple[int, int]]:
    p = grid.n_pml
    return ((p, p + grid.nx_bulk - 1), (p, p + grid.ny_bulk - 1))


def global_stencil(grid: Grid2D, m_ext: np.ndarray, omega: float, spec: PmlSpec) -> Stencil:
    if m_ext.shape != grid.shape:
        raise ValueError(f"extended slowness shape {m_ext.shape} != grid {grid.shape}")
    return helmholtz_stencil(
        grid, (0, grid.ny), (0, grid.nx), m_ext, omega, spec, bulk_index_box(grid)
    )


def assemble_helmholtz(grid: Grid2D, m_ext: np.ndarray, omega: float, spec: PmlSpec) -> sp.csr_matrix:
    """Global symmetric (non-Hermitian) Helmholtz matrix in CSR layout."""
    return global_stencil(grid, m_ext, omega, spec).to_csr()


def apply_global_operator(blocks, stencil: Stencil, row_splits, halos=None):
    """Distributed matvec over horizontal row blocks.

    ``blocks[k]`` holds rows ``row_splits[k]:row_splits[k+1]`` of ``u``.
    ``halos[k]`` is ``(below, above)``: the grid line just under and just over
    block ``k`` (``None`` on the physical boundary).  When ``halos`` is omitted
    the exchange is performed here from the blocks themselves.
    """
    nb = len(blocks)
    if len(row_splits) != nb + 1:
        raise ValueError("row_splits must have one more entry than blocks")
    if halos is None:
        halos = exchange_halos(blocks)
    out = []
    for k in range(nb):
        a, b = row_splits[k], row_splits[k + 1]
        below, above = halos[k]
        if (below is None) != (k == 0) or (above is None) != (k == nb - 1):
            raise ValueError(f"halo of block {k} not synchronized")
        out.append(_apply_rows(stencil, blocks[k], a, b, below, above))
    return out


def exchange_halos(blocks):
    """Boundary lines each block needs from its vertical neighbours."""
    nb = len(blocks)
    return [
        (
            blocks[k - 1][-1].copy() if k > 0 else None,
            blocks[k + 1][0].copy() if k < nb - 1 else None,
        )
        for k in range(nb)
    ]


def _apply_rows(st: Stencil, u: np.ndarray, a: int, b: int, below, above) -> np.ndarray:
    # zero-padded frame so every row sums its terms in the same order
    ny, nx = u.shape
    ext = np.zeros((ny + 2, nx + 2), dtype=np.result_type(u, st.diag))
    ext[1:-1, 1:-1] = u
    if below is not None:
        ext[0, 1:-1] = below
    if above is not None:
        ext[-1, 1:-1] = above
    return (
        st.diag[a:b] * u
        + st.west[a:b] * ext[1:-1, :-2]
        + st.east[a:b] * ext[1:-1, 2:]
        + st.south[a:b] * ext[:-2, 1:-1]
        + st.north[a:b] * ext[2:, 1:-1]
    )
