"""Restarted GMRES with the sweeping preconditioner, and the end-to-end scattering solve."""

import logging
import math
import time
from collections.abc import Callable
from dataclasses import dataclass, field
from typing import Any

import numpy as np
import scipy.linalg

from .kernel import DenseOperator, build_kernel_table, build_rhs
from .problem import ComplexField, GridSpec, PerturbationField
from .sparsify import (
    BoundaryPmlTable,
    InteriorStencil,
    assemble_f,
    assemble_H,
    build_boundary_pml_table,
    compute_interior_stencil,
)
from .sweep import setup

logger = logging.getLogger(__name__)

LinearMap = Callable[[np.ndarray], np.ndarray]


@dataclass
class SolverConfig:
    tol: float = 1e-6
    restart: int = 20
    maxit: int = 50
    side: str = "left"

    def __post_init__(self) -> None:
        if not 0 < self.tol < 1:
            raise ValueError(f"tol must lie in (0, 1), got {self.tol}")
        if self.restart < 1:
            raise ValueError(f"restart must be >= 1, got {self.restart}")
        if self.maxit < 1:
            raise ValueError(f"maxit must be >= 1, got {self.maxit}")
        if self.side != "left":
            raise ValueError(f"only left preconditioning is supported, got '{self.side}'")


@dataclass
class SolveReport:
    iterations: int = 0
    restarts: int = 0
    residual_history: list[float] = field(default_factory=list)
    converged: bool = False
    setup_time: float = 0.0
    apply_time: float = 0.0
    solve_time: float = 0.0
    true_residual: float = 0.0
    N: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "N": self.N,
            "N_iter": self.iterations,
            "T_setup": self.setup_time,
            "T_apply": self.apply_time,
            "T_solve": self.solve_time,
            "restarts": self.restarts,
            "converged": self.converged,
            "true_residual": self.true_residual,
            "residual_history": self.residual_history,
        }


def _givens(a: complex, b: complex) -> tuple[float, complex]:
    """(c, s) with [[c, s], [-conj(s), c]] @ [a, b] = [r, 0]."""
    t = math.hypot(abs(a), abs(b))
    if t == 0:
        return 1.0, 0j
    if a == 0:
        return 0.0, complex(np.conj(b)) / abs(b)
    return abs(a) / t, (a / abs(a)) * complex(np.conj(b)) / t


def gmres(
    apply_op: LinearMap, precond: LinearMap, rhs: ComplexField, cfg: SolverConfig
) -> tuple[ComplexField, SolveReport]:
    """Left-preconditioned GMRES(restart) on M^{-1} A x = M^{-1} b.

    Arnoldi uses modified Gram-Schmidt with one reorthogonalization pass. The
    residual history holds preconditioned relative residuals, starting at 1.
    """
    shape = rhs.data.shape
    b = rhs.data.ravel()
    x = np.zeros_like(b, dtype=np.complex128)
    report = SolveReport(N=b.size)

    def op(v: np.ndarray) -> np.ndarray:
        return precond(apply_op(v.reshape(shape))).ravel()

    if not np.any(b):
        report.converged = True
        report.residual_history = [0.0]
        return ComplexField(rhs.index_set, x.reshape(shape)), report

    def residual(x: np.ndarray) -> np.ndarray:
        return precond((b - apply_op(x.reshape(shape)).ravel()).reshape(shape)).ravel()

    r = precond(rhs.data).ravel()
    beta0 = float(np.linalg.norm(r))
    report.residual_history.append(1.0)
    m = cfg.restart

    for outer in range(cfg.maxit):
        beta = float(np.linalg.norm(r))
        if beta / beta0 <= cfg.tol:
            report.converged = True
            break
        if outer > 0:
            report.restarts += 1

        V = np.zeros((m + 1, b.size), dtype=np.complex128)
        H = np.zeros((m + 1, m), dtype=np.complex128)
        cs = np.zeros(m)
        sn = np.zeros(m, dtype=np.complex128)
        g = np.zeros(m + 1, dtype=np.complex128)
        g[0] = beta
        V[0] = r / beta

        k = 0
        for j in range(m):
            w = op(V[j])
            for _ in range(2):
                for i in range(j + 1):
                    hij = np.vdot(V[i], w)
                    H[i, j] += hij
                    w -= hij * V[i]
            H[j + 1, j] = np.linalg.norm(w)
            breakdown = abs(H[j + 1, j]) <= 1e-14 * beta0
            if not breakdown:
                V[j + 1] = w / H[j + 1, j]

            for i in range(j):
                top = cs[i] * H[i, j] + sn[i] * H[i + 1, j]
                H[i + 1, j] = -np.conj(sn[i]) * H[i, j] + cs[i] * H[i + 1, j]
                H[i, j] = top
            cs[j], sn[j] = _givens(complex(H[j, j]), complex(H[j + 1, j]))
            H[j, j] = cs[j] * H[j, j] + sn[j] * H[j + 1, j]
            H[j + 1, j] = 0
            g[j + 1] = -np.conj(sn[j]) * g[j]
            g[j] = cs[j] * g[j]

            k = j + 1
            report.iterations += 1
            report.residual_history.append(abs(g[j + 1]) / beta0)
            if report.residual_history[-1] <= cfg.tol or breakdown:
                break

        y = scipy.linalg.solve_triangular(H[:k, :k], g[:k])
        x = x + V[:k].T @ y
        r = residual(x)
    else:
        report.converged = float(np.linalg.norm(r)) / beta0 <= cfg.tol

    if report.converged:
        logger.info(f"GMRES converged in {report.iterations} iterations")
    else:
        logger.warning(
            f"GMRES did not converge: {report.iterations} iterations, "
            f"residual {report.residual_history[-1]:.2e}"
        )
    return ComplexField(rhs.index_set, x.reshape(shape)), report


@dataclass(frozen=True)
class Stencils:
    """Velocity-independent stencils of one grid; reusable across media."""

    interior: InteriorStencil
    boundary: BoundaryPmlTable


def prepare_stencils(grid: GridSpec) -> Stencils:
    started = time.perf_counter()
    interior = compute_interior_stencil(grid.omega, grid.h, grid.n)
    boundary = build_boundary_pml_table(grid)
    logger.info(
        f"Stencils ready in {time.perf_counter() - started:.2f}s "
        f"(interior relative residual {interior.relative_residual:.2e})"
    )
    return Stencils(interior, boundary)


def solve_scattering(
    grid: GridSpec,
    velocity: PerturbationField,
    incoming: ComplexField,
    cfg: SolverConfig,
    stencils: Stencils | None = None,
    threads: int = 1,
) -> tuple[ComplexField, SolveReport]:
    """Scattered field u on I for (I + omega^2 K M) u = -omega^2 K (m u_I).

    The total field is u + u_I.
    """
    interior_set = grid.index_set("I")
    if velocity.m.shape != interior_set.shape or incoming.data.shape != interior_set.shape:
        raise ValueError("velocity and incoming wave must both live on I")
    if velocity.is_zero:
        logger.info("m = 0: the scattered field vanishes")
        report = SolveReport(converged=True, residual_history=[0.0], N=interior_set.size)
        return ComplexField.zeros(interior_set), report

    started = time.perf_counter()
    op = DenseOperator(build_kernel_table(grid, workers=threads), velocity, workers=threads)
    g = build_rhs(op, incoming)
    stencils = stencils or prepare_stencils(grid)
    system = assemble_H(grid, velocity, stencils.interior, stencils.boundary)
    precond = setup(system, velocity, threads=threads)
    setup_time = time.perf_counter() - started

    alpha = stencils.interior.alpha
    durations: list[float] = []

    def apply_precond(v: np.ndarray) -> np.ndarray:
        t0 = time.perf_counter()
        f = assemble_f(grid, ComplexField(interior_set, v), alpha)
        out = precond.apply(f).data
        durations.append(time.perf_counter() - t0)
        return out

    started = time.perf_counter()
    u, report = gmres(op.matvec, apply_precond, g, cfg)
    report.solve_time = time.perf_counter() - started
    report.setup_time = setup_time
    # first application is a warm-up
    timed = durations[1:] or durations
    report.apply_time = float(np.mean(timed)) if timed else 0.0
    report.true_residual = float(np.linalg.norm(op.matvec(u.data) - g.data) / g.norm())
    logger.info(
        f"Solve: N = {report.N}, N_iter = {report.iterations}, T_setup = {report.setup_time:.2f}s, "
        f"T_apply = {report.apply_time:.3f}s, T_solve = {report.solve_time:.2f}s, "
        f"true residual {report.true_residual:.2e}"
    )
    return u, report
