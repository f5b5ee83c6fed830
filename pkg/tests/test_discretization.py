import math

import numpy as np
import pytest
from conftest import small_config
from hypothesis import given, settings
from hypothesis import strategies as st

from lsweeps.discretization import (
    Grid2D,
    PmlSpec,
    SlownessModel,
    apply_global_operator,
    assemble_helmholtz,
    extend_slowness,
    global_stencil,
    pml_alpha,
    pml_points,
    pml_sigma,
)
from lsweeps.experiments import build_problem, direct_solve


def test_grid_dimensions():
    g = Grid2D.unit_square(202, 20)
    assert g.shape == (242, 242)
    assert g.h == pytest.approx(1 / 201)
    with pytest.raises(ValueError):
        Grid2D(10, 10, 0.1, 0)


def test_pml_points_rule():
    assert pml_points(10, 2) == 20
    assert pml_points(10, 2, m0=0.25) == 40
    assert pml_points(20, 1) == 20


class TestProfile:
    spec = PmlSpec(delta_pml=0.1, C=3.0)

    def test_zero_in_bulk(self):
        assert pml_sigma(0.5, spec=self.spec) == 0.0

    def test_cubic_end(self):
        d = self.spec.delta_pml
        assert pml_sigma(1 + d, spec=self.spec) == pytest.approx(self.spec.C / d)
        assert pml_sigma(-d, spec=self.spec) == pytest.approx(self.spec.C / d)

    def test_cubic_midpoint(self):
        d = self.spec.delta_pml
        assert pml_sigma(1 + d / 2, spec=self.spec) == pytest.approx(self.spec.C / (8 * d))

    def test_alpha_values(self):
        assert pml_alpha(0.3, 5.0, self.spec) == 1 + 0j
        d = self.spec.delta_pml
        omega = self.spec.C / d  # sigma at the outer edge equals omega
        assert pml_alpha(1 + d, omega, self.spec) == pytest.approx((1 - 1j) / 2)

    def test_alpha_mid_pml_standard_setup(self):
        omega = 2 * math.pi * 20.1
        grid = Grid2D.unit_square(202, pml_points(10, 2))
        spec = PmlSpec.for_problem(grid, omega, scaling="literal")
        d = spec.delta_pml
        sigma = math.log(omega) / d * 0.5**3
        assert pml_alpha(1 + d / 2, omega, spec) == pytest.approx(1 / (1 + 1j * sigma / omega), rel=1e-14)

    def test_absorption_scalings(self):
        grid = Grid2D.unit_square(101, 20)
        lit = PmlSpec.for_problem(grid, 60.0, "literal")
        per = PmlSpec.for_problem(grid, 60.0, "per_point")
        assert per.C == pytest.approx(20 * lit.C)
        assert lit.delta_pml == pytest.approx(20 * grid.h)
        with pytest.raises(ValueError):
            PmlSpec.for_problem(grid, 60.0, "bogus")
        with pytest.raises(ValueError):
            PmlSpec.for_problem(grid, 0.5)

    @given(st.floats(-2, 3), st.floats(0.1, 500))
    def test_alpha_modulus_bounded(self, x, omega):
        a = pml_alpha(x, omega, self.spec)
        assert abs(a) <= 1 + 1e-15
        if 0 <= x <= 1:
            assert a == 1


def test_extend_slowness_constant_and_edges():
    g = Grid2D(6, 5, 0.2, 3)
    vals = np.arange(30, dtype=float).reshape(5, 6) / 40 + 0.1
    m = extend_slowness(SlownessModel(vals), g)
    assert m.shape == g.shape
    np.testing.assert_array_equal(m[3:-3, 3:-3], vals)
    # left collar replicates the first bulk column
    for c in range(3):
        np.testing.assert_array_equal(m[3:-3, c], vals[:, 0])
    ones = extend_slowness(SlownessModel(np.ones((5, 6))), g)
    assert np.all(ones == 1)


def test_extend_slowness_two_layer_nearest_boundary():
    g = Grid2D(8, 8, 1 / 7, 4)
    vals = np.where(np.arange(8)[:, None] >= 4, 0.25, 1.0) * np.ones((8, 8))
    m = extend_slowness(SlownessModel(vals), g)
    rows = np.clip(np.arange(g.ny) - 4, 0, 7)
    cols = np.clip(np.arange(g.nx) - 4, 0, 7)
    np.testing.assert_array_equal(m, vals[np.ix_(rows, cols)])


def test_slowness_model_validation():
    with pytest.raises(ValueError):
        SlownessModel(np.full((3, 3), 1.5))
    with pytest.raises(ValueError):
        SlownessModel(np.ones(4))
    with pytest.raises(ValueError):
        extend_slowness(SlownessModel(np.ones((3, 3))), Grid2D(4, 4, 0.25, 1))


def test_laplacian_limit():
    g = Grid2D(5, 5, 1.0, 1)
    A = assemble_helmholtz(g, np.ones(g.shape), 0.0, PmlSpec(1.0, 0.0))
    k = 3 * g.nx + 3
    row = A.getrow(k).toarray().ravel()
    assert row[k] == 4
    for nb in (k - 1, k + 1, k - g.nx, k + g.nx):
        assert row[nb] == -1
    assert np.count_nonzero(row) == 5


def test_interior_diagonal():
    g = Grid2D.unit_square(11, 2)
    omega = 2 * math.pi
    A = assemble_helmholtz(g, np.ones(g.shape), omega, PmlSpec.for_problem(g, omega))
    k = 7 * g.nx + 7
    assert A[k, k] == pytest.approx(4 / g.h**2 - omega**2, rel=1e-14)


def test_matrix_symmetric(small2):
    A = small2.stencil.to_csr()
    diff = abs(A - A.T).max()
    assert diff <= 1e-15 * abs(A).max()


def test_matrix_symmetric_heterogeneous():
    g = Grid2D.unit_square(30, 8)
    rng = np.random.default_rng(3)
    m = extend_slowness(SlownessModel(rng.uniform(0.3, 1, (30, 30))), g)
    A = assemble_helmholtz(g, m, 40.0, PmlSpec.for_problem(g, 40.0))
    assert abs(A - A.T).max() <= 1e-15 * abs(A).max()


def test_stencil_apply_matches_csr(small2, rng):
    st_ = small2.stencil
    u = rng.standard_normal(small2.grid.size) + 1j * rng.standard_normal(small2.grid.size)
    ref = st_.to_csr() @ u
    out = st_.apply(u).ravel()
    assert np.linalg.norm(out - ref) <= 1e-14 * np.linalg.norm(ref)


@pytest.mark.parametrize("nb", [1, 2, 3, 5])
def test_distributed_matvec(small2, rng, nb):
    g = small2.grid
    st_ = small2.stencil
    u = (rng.standard_normal(g.size) + 1j * rng.standard_normal(g.size)).reshape(g.shape)
    splits = np.linspace(0, g.ny, nb + 1).astype(int)
    blocks = [u[a:b] for a, b in zip(splits[:-1], splits[1:])]
    out = np.concatenate(apply_global_operator(blocks, st_, splits))
    ref = (st_.to_csr() @ u.ravel()).reshape(g.shape)
    assert np.linalg.norm(out - ref) <= 1e-14 * np.linalg.norm(ref)
    single = apply_global_operator([u], st_, [0, g.ny])[0]
    np.testing.assert_array_equal(out, single)
    zero = apply_global_operator([np.zeros_like(b) for b in blocks], st_, splits)
    assert all(not np.any(z) for z in zero)


def test_distributed_matvec_rejects_bad_halo(small2):
    g = small2.grid
    u = np.zeros(g.shape)
    with pytest.raises(ValueError):
        apply_global_operator([u[:10], u[10:]], small2.stencil, [0, 10, g.ny], halos=[(None, None)] * 2)


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31))
def test_distributed_matvec_property(nb, seed):
    g = Grid2D.unit_square(14, 3)
    omega = 12.0
    st_ = global_stencil(g, np.ones(g.shape), omega, PmlSpec.for_problem(g, omega))
    u = np.random.default_rng(seed).standard_normal(g.shape) + 0j
    splits = np.linspace(0, g.ny, nb + 1).astype(int)
    blocks = [u[a:b] for a, b in zip(splits[:-1], splits[1:])]
    out = np.concatenate(apply_global_operator(blocks, st_, splits))
    np.testing.assert_array_equal(out, st_.apply(u))


def test_pml_decay():
    """|u| of a centred source decays monotonically across the collar."""
    problem = build_problem(small_config(2, source="point:0.5,0.5", pml_wavelengths=2))
    g = problem.grid
    u = np.abs(direct_solve(problem).reshape(g.shape))
    p = g.n_pml
    mid = p + (g.ny_bulk - 1) // 2
    for line in (u[mid, :], u[:, mid]):
        outward = (line[p + g.nx_bulk - 1:], line[:p + 1][::-1])
        for prof in outward:
            assert np.all(np.diff(prof) < 0)
            assert prof[-1] < 1e-3 * prof[0]
