"""Squared-slowness models and source distributions on the unit square."""
from __future__ import annotations

import math

import numpy as np
from scipy.ndimage import gaussian_filter

from .discretization import Grid2D, SlownessModel
from .io import read_model

MODEL_KINDS = ("constant", "two_layer", "checkerboard", "waveguide", "smooth_random", "file")

STANDARD_SOURCE_POSITIONS = ((0.125, 0.125), (0.125, 0.875), (0.875, 0.125), (0.875, 0.875))


def bulk_coords(grid: Grid2D) -> tuple[np.ndarray, np.ndarray]:
    """Meshgrid ``(X, Y)`` of the bulk points, shape ``(ny_bulk, nx_bulk)``."""
    x = np.arange(grid.nx_bulk) * grid.h
    y = np.arange(grid.ny_bulk) * grid.h
    return np.meshgrid(x, y)


def generate_model(kind: str, params: dict | None, grid: Grid2D) -> SlownessModel:
    """Build a bulk slowness model.

    ``params`` keys: ``contrast`` (speed ratio, default 2), ``seed``,
    ``m0`` (smooth_random floor), ``cells`` (checkerboard cells per side),
    ``interface`` (two_layer discontinuity height), ``path`` (file).
    """
    params = dict(params or {})
    X, Y = bulk_coords(grid)
    contrast = float(params.get("contrast", 2.0))
    if kind != "file" and kind != "constant" and contrast < 1:
        raise ValueError("contrast must be >= 1")
    low = 1.0 / contrast**2
    if kind == "constant":
        values = np.ones_like(X)
    elif kind == "two_layer":
        # fast layer on top, discontinuity inside the upper subdomain row
        y0 = float(params.get("interface", 0.75))
        values = np.where(Y > y0, low, 1.0)
    elif kind == "checkerboard":
        cells = int(params.get("cells", 9))
        ix = np.minimum((X * cells).astype(int), cells - 1)
        iy = np.minimum((Y * cells).astype(int), cells - 1)
        values = np.where((ix + iy) % 2 == 0, 1.0, low)
    elif kind == "waveguide":
        # slow channel guides the waves; the background is faster
        width = float(params.get("width", 0.2))
        values = np.where(np.abs(Y - 0.5) <= width / 2, 1.0, low)
    elif kind == "smooth_random":
        m0 = float(params.get("m0", 0.25))
        if not 0 < m0 < 1:
            raise ValueError("m0 must lie in (0, 1)")
        rng = np.random.default_rng(int(params.get("seed", 0)))
        noise = gaussian_filter(rng.uniform(size=X.shape), float(params.get("smoothing", 10.0)))
        lo, hi = noise.min(), noise.max()
        values = m0 + (1 - m0) * (noise - lo) / (hi - lo) if hi > lo else np.ones_like(X)
        return SlownessModel(values, m0)
    elif kind == "file":
        path = params.get("path")
        if not path:
            raise ValueError("file model needs a path")
        values, _ = read_model(path)
        if values.shape != X.shape:
            raise ValueError(f"model file has shape {values.shape}, grid needs {X.shape}")
    else:
        raise ValueError(f"unknown model kind {kind!r}; choose from {', '.join(MODEL_KINDS)}")
    return SlownessModel(values)


def point_sources(grid: Grid2D, positions) -> np.ndarray:
    """Sum of narrow Gaussians ``n^2/pi exp(-n^2 |x - x_i|^2)`` on the
    extended grid (zero in the PML collar); ``n`` is the bulk size."""
    n = max(grid.nx_bulk, grid.ny_bulk)
    X, Y = bulk_coords(grid)
    f = np.zeros_like(X)
    for xs, ys in positions:
        f += n * n / math.pi * np.exp(-n * n * ((X - xs) ** 2 + (Y - ys) ** 2))
    return np.pad(f, grid.n_pml).ravel()


def standard_sources(grid: Grid2D) -> np.ndarray:
    return point_sources(grid, STANDARD_SOURCE_POSITIONS)
