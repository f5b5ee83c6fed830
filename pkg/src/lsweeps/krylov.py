"""Left-preconditioned restarted GMRES with deterministic reductions."""
from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np


def dot(u: np.ndarray, v: np.ndarray, blocks=None) -> complex:
    """Conjugate-linear in ``u``; partial sums over ``blocks`` (index
    boundaries) are reduced in ascending order.

    With the same ``blocks`` the result does not depend on who computes the
    partial sums, so any worker count gives the same bits.
    """
    u = np.asarray(u).ravel()
    v = np.asarray(v).ravel()
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    if blocks is None:
        return complex(np.vdot(u, v))
    total = 0j
    for a, b in zip(blocks[:-1], blocks[1:]):
        total += complex(np.vdot(u[a:b], v[a:b]))
    return total


@dataclass
class SolveReport:
    iterations: int = 0
    residual_history: list[float] = field(default_factory=list)
    converged: bool = False
    true_residual: float | None = None
    phase_timings: dict[str, float] = field(default_factory=dict)
    messages: dict[str, int] = field(default_factory=dict)
    volume: dict[str, int] = field(default_factory=dict)

    @property
    def T_fact(self) -> float:
        return self.phase_timings.get("factorize", 0.0)

    @property
    def T_solve(self) -> float:
        return self.phase_timings.get("solve", 0.0)

    @property
    def T_it(self) -> float:
        return self.T_solve / self.iterations if self.iterations else 0.0

    @property
    def T_total(self) -> float:
        return sum(self.phase_timings.values())


def gmres(
    apply_A: Callable[[np.ndarray], np.ndarray],
    apply_M: Callable[[np.ndarray], np.ndarray],
    b: np.ndarray,
    tol: float = 1e-6,
    restart: int = 50,
    maxit: int = 200,
    dot_fn: Callable[[np.ndarray, np.ndarray], complex] | None = None,
    report: SolveReport | None = None,
) -> tuple[np.ndarray, SolveReport]:
    """Solve ``M A x = M b`` from a zero initial guess.

    ``apply_M`` applies the approximate inverse.  Iterates until the
    preconditioned residual relative to ``||M b||`` is at most ``tol`` or
    ``maxit`` iterations have run.
    """
    if not tol > 0:
        raise ValueError("tol must be positive")
    if restart < 1 or maxit < 0:
        raise ValueError("restart must be >= 1 and maxit >= 0")
    b = np.asarray(b, dtype=np.complex128).ravel()
    n = b.size
    ip = dot_fn or dot
    norm = lambda x: float(np.sqrt(max(ip(x, x).real, 0.0)))
    report = report or SolveReport()
    t0 = time.perf_counter()

    def op(x):
        y = np.asarray(apply_M(np.asarray(apply_A(x)).ravel())).ravel()
        if y.size != n:
            raise ValueError(f"operator returned length {y.size}, expected {n}")
        return y

    x = np.zeros(n, dtype=np.complex128)
    r = np.asarray(apply_M(b), dtype=np.complex128).ravel()
    if r.size != n:
        raise ValueError(f"preconditioner returned length {r.size}, expected {n}")
    bnorm = norm(r)
    if bnorm == 0.0:
        report.converged = True
        report.phase_timings["solve"] = report.phase_timings.get("solve", 0.0) + time.perf_counter() - t0
        return x, report

    beta = bnorm
    while report.iterations < maxit:
        m = min(restart, maxit - report.iterations)
        V = np.zeros((m + 1, n), dtype=np.complex128)
        H = np.zeros((m + 1, m), dtype=np.complex128)
        cs = np.zeros(m, dtype=np.complex128)
        sn = np.zeros(m, dtype=np.complex128)
        g = np.zeros(m + 1, dtype=np.complex128)
        V[0] = r / beta
        g[0] = beta
        k_used = 0
        done = False
        for k in range(m):
            w = op(V[k])
            for jj in range(k + 1):
                H[jj, k] = ip(V[jj], w)
                w = w - H[jj, k] * V[jj]
            H[k + 1, k] = norm(w)
            if H[k + 1, k] != 0:
                V[k + 1] = w / H[k + 1, k]
            for jj in range(k):
                t = cs[jj] * H[jj, k] + sn[jj] * H[jj + 1, k]
                H[jj + 1, k] = -np.conj(sn[jj]) * H[jj, k] + np.conj(cs[jj]) * H[jj + 1, k]
                H[jj, k] = t
            cs[k], sn[k] = _givens(H[k, k], H[k + 1, k])
            H[k, k] = cs[k] * H[k, k] + sn[k] * H[k + 1, k]
            H[k + 1, k] = 0.0
            g[k + 1] = -np.conj(sn[k]) * g[k]
            g[k] = cs[k] * g[k]
            report.iterations += 1
            k_used = k + 1
            rel = abs(g[k + 1]) / bnorm
            report.residual_history.append(float(rel))
            if rel <= tol or H[k, k] == 0:
                done = True
                break
        y = _back_substitute(H[:k_used, :k_used], g[:k_used])
        x = x + y @ V[:k_used]
        if done and report.residual_history[-1] <= tol:
            report.converged = True
            break
        r = np.asarray(apply_M(b - np.asarray(apply_A(x)).ravel())).ravel()
        beta = norm(r)
        if beta / bnorm <= tol:
            report.converged = True
            break
        if done:
            break
    report.phase_timings["solve"] = report.phase_timings.get("solve", 0.0) + time.perf_counter() - t0
    return x, report


def _givens(a: complex, b: complex) -> tuple[complex, complex]:
    """Rotation with ``c a + s b = rho`` and ``-conj(s) a + conj(c) b = 0``."""
    if b == 0:
        return 1.0 + 0j, 0j
    if a == 0:
        return 0j, np.conj(b) / abs(b)
    t = np.hypot(abs(a), abs(b))
    c = abs(a) / t
    s = (a / abs(a)) * np.conj(b) / t
    return complex(c), complex(s)


def _back_substitute(R: np.ndarray, g: np.ndarray) -> np.ndarray:
    k = len(g)
    y = np.zeros(k, dtype=np.complex128)
    for i in range(k - 1, -1, -1):
        y[i] = (g[i] - R[i, i + 1:] @ y[i + 1:]) / R[i, i]
    return y


def true_residual(apply_A, x: np.ndarray, b: np.ndarray) -> float:
    b = np.asarray(b).ravel()
    return float(np.linalg.norm(b - np.asarray(apply_A(x)).ravel()) / np.linalg.norm(b))
