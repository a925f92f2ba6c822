"""Brute-force oracle checks of the fast paths on small grids."""

import logging
import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg

from .kernel import KernelTable, build_kernel_table, central_weight, convolve, convolve_direct
from .problem import ComplexField, GridSpec, gaussian_velocity
from .sparsify import (
    StencilError,
    assemble_H,
    build_boundary_pml_table,
    build_frequency_samples,
    compute_interior_stencil,
    off_neighborhood_rows,
)
from .sweep import SlicePartition, partition_slices, setup

logger = logging.getLogger(__name__)

TableHook = Callable[[KernelTable], KernelTable]


@dataclass
class CheckResult:
    name: str
    value: float
    threshold: float

    @property
    def passed(self) -> bool:
        return bool(self.value <= self.threshold)


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def _random_complex(rng: np.random.Generator, shape: tuple[int, ...]) -> np.ndarray:
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def check_fft_convolution(n: int = 16, table_hook: TableHook | None = None) -> CheckResult:
    grid = GridSpec(omega=2 * math.pi * 2, n=n, b=2)
    kt = build_kernel_table(grid)
    if table_hook is not None:
        kt = table_hook(kt)
    v = _random_complex(_rng(1), (n, n))
    fast, slow = convolve(kt, v), convolve_direct(kt, v)
    return CheckResult(
        "fft convolution = direct sum",
        float(np.linalg.norm(fast - slow) / np.linalg.norm(slow)),
        1e-12,
    )


def check_gram_stencil(n: int = 16) -> CheckResult:
    omega, h = 2 * math.pi * 2, 1.0 / (n + 1)
    k0 = central_weight(omega, h)
    stencil = compute_interior_stencil(omega, h, n, central=k0)
    sigma_min = np.linalg.svd(off_neighborhood_rows(omega, h, n, k0), compute_uv=False)[-1]
    return CheckResult(
        "gram eigenvector residual = dense svd sigma_min",
        abs(stencil.residual - sigma_min) / sigma_min,
        1e-8,
    )


def check_exact_sweep(n: int = 22, b: int = 4) -> CheckResult:
    grid = GridSpec(omega=2 * math.pi * 3, n=n, b=b)
    m = gaussian_velocity(grid, [[0.5, 0.5]], [-0.2], [0.1])
    interior = compute_interior_stencil(grid.omega, grid.h, grid.n)
    system = assemble_H(grid, m, interior, build_boundary_pml_table(grid))
    f = ComplexField(grid.index_set("I_h_eta"), _random_complex(_rng(2), (grid.nx, grid.nx)))

    swept = setup(system, m, partition=partition_slices(grid), exact=True).apply_extended(f).data
    direct = scipy.sparse.linalg.splu(system.matrix.tocsc()).solve(f.data.ravel())
    direct = direct.reshape(grid.nx, grid.nx)
    return CheckResult(
        "exact-schur sweep = direct lu",
        float(np.linalg.norm(swept - direct) / np.linalg.norm(direct)),
        1e-8,
    )


def check_single_slice(n: int = 20, b: int = 4) -> CheckResult:
    grid = GridSpec(omega=2 * math.pi * 3, n=n, b=b)
    m = gaussian_velocity(grid, [[0.5, 0.5]], [0.15], [0.1])
    interior = compute_interior_stencil(grid.omega, grid.h, grid.n)
    system = assemble_H(grid, m, interior, build_boundary_pml_table(grid))
    f = ComplexField(grid.index_set("I_h_eta"), _random_complex(_rng(3), (grid.nx, grid.nx)))

    banded = setup(system, m, partition=SlicePartition.single(grid)).apply_extended(f).data
    dense = np.linalg.solve(system.matrix.toarray(), f.data.ravel()).reshape(grid.nx, grid.nx)
    return CheckResult(
        "single-slice sweep = dense lu",
        float(np.linalg.norm(banded - dense) / np.linalg.norm(dense)),
        1e-10,
    )


def check_gamma_annihilation(n: int = 18, b: int = 4) -> CheckResult:
    """Boundary and frequency-sampled gamma: annihilation residual and deviation from unit norm."""
    name = "gamma annihilation residual and unit norm"
    grid = GridSpec(omega=2 * math.pi * 3, n=n, b=b)
    m = gaussian_velocity(grid, [[0.5, 0.5]], [-0.2], [0.1])
    try:
        table = build_boundary_pml_table(grid)
        samples = build_frequency_samples(grid, m, partition_slices(grid).aux_depths())
        sampled = [samples.table(depth) for depth in samples.depths]
    except StencilError as e:
        logger.error(f"gamma fit failed: {e}")
        return CheckResult(name, math.inf, 1e-10)
    mask = np.ones(table.residuals.shape, dtype=bool)
    mask[b, b] = False
    norms = np.concatenate(
        [np.linalg.norm(table.stencils[mask], axis=-1)]
        + [np.linalg.norm(s, axis=-1).ravel() for s in sampled]
    )
    worst = max(
        float(table.residuals[mask].max()),
        samples.max_residual,
        float(np.max(np.abs(norms - 1))),
    )
    return CheckResult(name, worst, 1e-10)


def run_selftest(table_hook: TableHook | None = None) -> list[CheckResult]:
    results = [
        check_fft_convolution(table_hook=table_hook),
        check_gram_stencil(),
        check_exact_sweep(),
        check_single_slice(),
        check_gamma_annihilation(),
    ]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        logger.info(f"[{status}] {r.name}: {r.value:.3e} (threshold {r.threshold:.0e})")
    return results
