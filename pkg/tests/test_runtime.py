import dataclasses
import json

import numpy as np
import pytest
from conftest import small_config

from lsweeps.experiments import build_problem, solve_problem
from lsweeps.krylov import SolveReport
from lsweeps.runtime import (
    ENV_WORKERS,
    DistributedOperator,
    Runtime,
    ScheduleError,
    WorkerAssignment,
    build_schedule,
    check_schedule,
    instrument,
    resolve_workers,
)
from lsweeps.sweeps import SWEEP_KINDS, CDDContext, compute_scenario3

DIRECTIONS = sorted(SWEEP_KINDS)


def test_resolve_workers(monkeypatch):
    monkeypatch.delenv(ENV_WORKERS, raising=False)
    assert resolve_workers(None, 4) == 1
    assert resolve_workers(9, 4) == 4
    assert resolve_workers(0, 4) == 1
    monkeypatch.setenv(ENV_WORKERS, "3")
    assert resolve_workers(1, 4) == 3
    monkeypatch.setenv(ENV_WORKERS, "x")
    with pytest.raises(ValueError):
        resolve_workers(1, 4)


def test_row_assignment():
    a = WorkerAssignment(3, 8, 2)
    assert a.rows_of(0) == [0, 3, 6]
    assert a.worker_of(7) == 1
    assert a.subdomains_of(2) == [(2, 0), (2, 1), (5, 0), (5, 1)]
    with pytest.raises(ValueError):
        WorkerAssignment(5, 4, 4)


class TestSchedules:
    def test_single_subdomain(self):
        for d in DIRECTIONS:
            assert build_schedule((1, 1), d).fronts == (((0, 0),),)

    def test_up_sweep_2x2(self):
        s = build_schedule((2, 2), "up")
        assert [set(f) for f in s.fronts] == [{(0, 0)}, {(0, 1), (1, 0)}, {(1, 1)}]

    def test_diagonal_fronts_3x3(self):
        for d in ("bl2tr", "tr2bl", "br2tl", "tl2br"):
            assert build_schedule((3, 3), d).front_sizes == [1, 2, 3, 2, 1]

    def test_horizontal_sweeps_have_no_messages(self):
        for d in ("left", "right"):
            s = build_schedule((4, 4), d, p=4)
            assert s.predicted_messages() == 0
            assert len(s.fronts) == 4

    @pytest.mark.parametrize("direction", DIRECTIONS)
    def test_all_sizes_valid(self, direction):
        for q in range(1, 9):
            for r in range(1, 9):
                for p in {1, 2, q}:
                    if p <= q:
                        check_schedule(build_schedule((q, r), direction, p))

    def test_detects_bad_order(self):
        s = build_schedule((3, 3), "bl2tr")
        bad = dataclasses.replace(s, fronts=s.fronts[::-1])
        with pytest.raises(ScheduleError):
            check_schedule(bad)
        merged = dataclasses.replace(s, fronts=(sum(s.fronts, ()),))
        with pytest.raises(ScheduleError):
            check_schedule(merged)
        missing = dataclasses.replace(s, fronts=s.fronts[1:])
        with pytest.raises(ScheduleError):
            check_schedule(missing)

    def test_message_volume(self):
        pr = build_problem(small_config(4, pps=16))
        lay = pr.layout
        s = build_schedule(lay, "up", p=4)
        for msgs in s.messages:
            for d in msgs:
                wr0, wr1, wc0, wc1 = lay.window(*d.src)
                assert d.volume == 2 * lay.delta * (wc1 - wc0)
                assert d.src_worker != d.dst_worker
        # every subdomain below the top row feeds the one above it
        assert s.predicted_messages() == (lay.q - 1) * lay.r


@pytest.fixture(scope="module")
def problem4():
    return build_problem(small_config(4, pps=16))


def _apply(problem, p, f):
    with Runtime(problem.layout.q, problem.layout.r, p) as rt:
        ctx = CDDContext(problem.layout, problem.m_ext, problem.omega, problem.spec)
        rt.factorize(ctx)
        x = compute_scenario3(f, ctx, executor=rt)
        return x, rt.records


def test_sweeps_bitwise_across_workers(problem4):
    f = np.random.default_rng(3).standard_normal(problem4.grid.size)
    f[problem4.layout.skeleton_mask.ravel()] = 0
    ref, _ = _apply(problem4, 1, f)
    for p in (2, 3, 4):
        x, _ = _apply(problem4, p, f)
        np.testing.assert_array_equal(x, ref)


def test_message_counts_match_schedule(problem4):
    f = np.random.default_rng(4).standard_normal(problem4.grid.size)
    f[problem4.layout.skeleton_mask.ravel()] = 0
    _, records = _apply(problem4, 4, f)
    by_phase = {r.phase: r for r in records}
    for d in DIRECTIONS:
        s = build_schedule(problem4.layout, d, p=4)
        assert by_phase[f"sweep:{d}"].messages == s.predicted_messages()
        assert by_phase[f"sweep:{d}"].volume_complex == s.predicted_volume()


def test_zero_sweep_sends_empty_payloads(problem4):
    from lsweeps.sweeps import SWEEP_PLAN

    with Runtime(4, 4, 4) as rt:
        ctx = CDDContext(problem4.layout, problem4.m_ext, problem4.omega, problem4.spec)
        state = rt.new_state(ctx)
        rt.local_solutions(state, np.zeros(problem4.grid.size))
        seen = []
        orig = rt._queues[(0, 1)].put
        rt._queues[(0, 1)].put = lambda item: (seen.append(item), orig(item))
        for name, roles, outputs in SWEEP_PLAN:
            rt.sweep(state, name, roles, outputs)
        assert seen and all(tp is None or tp.is_zero() for _, _, tp in seen)
        assert not rt.gather(state).any()


def test_matvec_and_dot_bitwise(problem4):
    g = problem4.grid
    rng = np.random.default_rng(5)
    u = rng.standard_normal(g.size) + 1j * rng.standard_normal(g.size)
    v = rng.standard_normal(g.size) + 1j * rng.standard_normal(g.size)
    outs, dots = [], []
    for p in (1, 2, 4):
        with Runtime(4, 4, p) as rt:
            A = DistributedOperator(rt, problem4.stencil, problem4.layout.row_splits)
            outs.append(A(u))
            dots.append(A.dot(u, v))
    ref = problem4.stencil.to_csr() @ u
    assert np.linalg.norm(outs[0] - ref) <= 1e-14 * np.linalg.norm(ref)
    for o in outs[1:]:
        np.testing.assert_array_equal(o, outs[0])
    assert dots[0] == dots[1] == dots[2]
    assert dots[0] == pytest.approx(np.vdot(u, v), rel=1e-12)


def test_solve_deterministic_across_workers(problem4):
    results = [solve_problem(problem4, p) for p in (1, 2, 4)]
    for res in results[1:]:
        np.testing.assert_array_equal(res.solution, results[0].solution)
        assert res.report.residual_history == results[0].report.residual_history
        assert res.report.iterations == results[0].report.iterations


def test_instrument_and_records(tmp_path, problem4):
    rep = SolveReport()
    instrument(rep, "a", 1.0)
    instrument(rep, "b", 1.0, messages=3, volume=12)
    assert rep.T_total >= 2.0
    assert rep.messages["b"] == 3 and rep.volume["b"] == 12
    res = solve_problem(problem4, 2)
    path = tmp_path / "rec.jsonl"
    res.runtime.dump_records(path)
    lines = [json.loads(l) for l in path.read_text().splitlines()]
    assert {"factorize", "local", "matvec", "sweep:up"} <= {l["phase"] for l in lines}
    assert res.report.T_it == pytest.approx(res.report.T_solve / res.report.iterations)


def test_schedule_mismatch_rejected(problem4):
    from lsweeps.runtime import run_sweep

    with Runtime(4, 4, 1) as rt:
        ctx = CDDContext(problem4.layout, problem4.m_ext, problem4.omega, problem4.spec)
        state = rt.new_state(ctx)
        with pytest.raises(ScheduleError):
            run_sweep(build_schedule((3, 3), "up"), state, {"T": "T_loc"}, {}, rt)
