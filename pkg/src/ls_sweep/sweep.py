"""Moving-PML sweeping factorization of H.

The extended grid is cut into x1 slices D_0..D_{l-1}. Each slice gets a quasi-1D
subproblem: its own rows of H plus an auxiliary PML laid over the previous slice,
factored once by banded LU. Application is a block forward/backward substitution.
"""

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse
import scipy.sparse.linalg
from scipy.linalg import lapack

from .problem import ComplexField, GridSpec, PerturbationField
from .sparsify import OFFSETS, FrequencySamples, SparseSystem, build_frequency_samples, point_class

logger = logging.getLogger(__name__)

PIVOT_RTOL = 1e-14


class FactorizationError(Exception):
    """A slab factor is numerically singular."""

    def __init__(self, slice_index: int, message: str):
        super().__init__(f"slice {slice_index}: {message}")
        self.slice_index = slice_index


@dataclass(frozen=True)
class SlicePartition:
    """Inclusive x1 layer ranges, left to right, covering -b..n+1+b."""

    grid: GridSpec
    slices: tuple[tuple[int, int], ...]

    @classmethod
    def single(cls, grid: GridSpec) -> "SlicePartition":
        """One slice over the whole grid: the sweep becomes a direct solve."""
        return cls(grid, ((-grid.b, grid.n + 1 + grid.b),))

    @property
    def count(self) -> int:
        return len(self.slices)

    @property
    def widths(self) -> list[int]:
        return [hi - lo + 1 for lo, hi in self.slices]

    def aux_layers(self, k: int) -> tuple[int, int] | None:
        """Layers covered by the auxiliary PML of slice k.

        Slice 1 only pads over the normal layers of slice 0; its PML layers stay out.
        """
        if k == 0:
            return None
        if k == 1:
            return (0, self.grid.b - 1)
        return self.slices[k - 1]

    def aux_depths(self) -> list[int]:
        depths = set()
        for k in range(1, self.count):
            aux = self.aux_layers(k)
            assert aux is not None
            depths.add(aux[1] - aux[0] + 1)
        return sorted(depths)


def partition_slices(grid: GridSpec) -> SlicePartition:
    """2b-layer end slices, b-layer middle slices, remainder merged into the last middle one."""
    b, n = grid.b, grid.n
    middle = n + 2 - 2 * b
    if middle < 1:
        raise ValueError(f"no middle slice fits: n = {n}, b = {b}")
    count = max(1, middle // b)
    slices = [(-b, b - 1)]
    start = b
    for k in range(count):
        hi = start + b - 1 if k < count - 1 else n + 1 - b
        slices.append((start, hi))
        start = hi + 1
    slices.append((n + 2 - b, n + 1 + b))
    return SlicePartition(grid, tuple(slices))


# ---------------------------------------------------------------------------
# slab factorizations
# ---------------------------------------------------------------------------


@dataclass
class SubproblemFactorization:
    """Banded LU of the slab matrix over aux layers + D_k.

    Unknowns are ordered x1-fastest, p = (i2 + b) * width + (layer - lo), so the
    half bandwidth is width + 1.
    """

    slice_index: int
    layers: tuple[int, int]
    own: tuple[int, int]
    nx: int
    lu: np.ndarray
    ipiv: np.ndarray

    @property
    def width(self) -> int:
        return self.layers[1] - self.layers[0] + 1

    @property
    def bandwidth(self) -> int:
        return self.width + 1

    @property
    def nnz(self) -> int:
        return int(self.lu.size)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """rhs and result shaped (width, nx), layer-major."""
        column = rhs.T.reshape(-1, 1)
        x, info = lapack.zgbtrs(self.lu, self.bandwidth, self.bandwidth, column, self.ipiv)
        if info != 0:
            raise FactorizationError(self.slice_index, f"zgbtrs returned info = {info}")
        return x.reshape(self.nx, self.width).T

    def apply(self, v: np.ndarray) -> np.ndarray:
        """T~_k v: zero-pad on the aux layers, solve, keep D_k."""
        skip = self.own[0] - self.layers[0]
        rhs = np.zeros((self.width, self.nx), dtype=np.complex128)
        rhs[skip:] = v
        return self.solve(rhs)[skip:]


@dataclass
class ExactSchurFactor:
    """T_k = S_k^{-1} taken from a direct factorization of H over layers -b..hi_k."""

    slice_index: int
    own: tuple[int, int]
    nx: int
    lu: scipy.sparse.linalg.SuperLU

    @property
    def nnz(self) -> int:
        return int(self.lu.L.nnz + self.lu.U.nnz)

    def apply(self, v: np.ndarray) -> np.ndarray:
        size = self.lu.shape[0]
        rhs = np.zeros(size, dtype=np.complex128)
        rhs[size - v.size :] = v.ravel()
        return self.lu.solve(rhs)[size - v.size :].reshape(v.shape)


def _aux_mesh(grid: GridSpec, aux: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    layers = np.arange(aux[0], aux[1] + 1)
    i2 = np.arange(-grid.b, grid.n + 2 + grid.b)
    l_mesh, i2_mesh = np.meshgrid(layers, i2, indexing="ij")
    return l_mesh, i2_mesh


def _aux_request(
    grid: GridSpec, samples: FrequencySamples, m: PerturbationField, aux: tuple[int, int]
) -> tuple[int, np.ndarray, np.ndarray, np.ndarray]:
    """(depth, sample, j, c2) of every point on layers aux, in _aux_mesh order."""
    b = grid.b
    l_mesh, i2_mesh = _aux_mesh(grid, aux)
    m_ext = np.pad(m.m, b + 1)[l_mesh + b, i2_mesh + b]
    sample = samples.lookup(grid.omega**2 * (1 - m_ext))
    return aux[1] - aux[0] + 1, sample, aux[1] + 1 - l_mesh, point_class(i2_mesh, grid.n)


def prefetch_aux_stencils(
    samples: FrequencySamples, m: PerturbationField, partition: SlicePartition
) -> int:
    """Fit every sampled stencil the slabs of partition will read, one batch per depth."""
    grid = partition.grid
    wanted: dict[int, list[tuple[np.ndarray, ...]]] = {}
    for k in range(1, partition.count):
        aux = partition.aux_layers(k)
        assert aux is not None
        depth, *request = _aux_request(grid, samples, m, aux)
        wanted.setdefault(depth, []).append(tuple(r.ravel() for r in request))
    for depth, requests in wanted.items():
        samples.stencils(depth, *(np.concatenate(parts) for parts in zip(*requests, strict=True)))
    return samples.fitted_count


def _aux_rows(
    system: SparseSystem,
    samples: FrequencySamples,
    m: PerturbationField,
    aux: tuple[int, int],
    lo: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """COO triplets (slab-local H order) of the auxiliary PML rows on layers aux."""
    grid = system.grid
    b, n, nx = grid.b, grid.n, grid.nx
    l_mesh, i2_mesh = _aux_mesh(grid, aux)
    gamma = samples.stencils(*_aux_request(grid, samples, m, aux))

    rows = (l_mesh - lo) * nx + (i2_mesh + b)
    data, row_idx, col_idx = [], [], []
    for k, (d1, d2) in enumerate(OFFSETS):
        j1, j2 = l_mesh + d1, i2_mesh + d2
        # the aux ring sits one layer left of the aux region
        keep = (j1 >= aux[0]) & (j2 >= -b) & (j2 <= n + 1 + b)
        row_idx.append(rows[keep])
        col_idx.append(((j1 - lo) * nx + (j2 + b))[keep])
        data.append(gamma[..., k].conj()[keep])
    return np.concatenate(data), np.concatenate(row_idx), np.concatenate(col_idx)


def _banded(
    data: np.ndarray, rows: np.ndarray, cols: np.ndarray, width: int, nx: int
) -> tuple[np.ndarray, int]:
    """LAPACK band storage ab[kl + ku + i - j, j] of the slab matrix in x1-fastest order."""

    def reorder(q: np.ndarray) -> np.ndarray:
        return (q % nx) * width + q // nx

    kl = ku = width + 1
    size = width * nx
    ab = np.zeros((2 * kl + ku + 1, size), dtype=np.complex128)
    p_row, p_col = reorder(rows), reorder(cols)
    np.add.at(ab, (kl + ku + p_row - p_col, p_col), data)
    return ab, kl


def build_subproblem(
    system: SparseSystem,
    partition: SlicePartition,
    samples: FrequencySamples | None,
    m: PerturbationField,
    k: int,
) -> SubproblemFactorization:
    """Slab over aux(k) + D_k: aux PML rows, then H's rows of D_k restricted to the slab."""
    if not 0 <= k < partition.count:
        raise ValueError(f"slice index {k} out of range 0..{partition.count - 1}")
    grid = system.grid
    nx = grid.nx
    own = partition.slices[k]
    aux = partition.aux_layers(k)
    lo = aux[0] if aux is not None else own[0]
    width = own[1] - lo + 1

    block = system.matrix[system.layers(*own), system.layers(lo, own[1])].tocoo()
    data = [block.data]
    rows = [block.row + (own[0] - lo) * nx]
    cols = [block.col]
    if aux is not None:
        if samples is None:
            raise ValueError("auxiliary rows need a frequency-sample table")
        d, r, c = _aux_rows(system, samples, m, aux, lo)
        data.append(d)
        rows.append(r)
        cols.append(c)

    ab, kl = _banded(np.concatenate(data), np.concatenate(rows), np.concatenate(cols), width, nx)
    scale = float(np.max(np.abs(ab)))
    lu, ipiv, info = lapack.zgbtrf(ab, kl, kl)
    if info < 0:
        raise FactorizationError(k, f"zgbtrf rejected argument {-info}")
    pivots = np.abs(lu[2 * kl])
    if info > 0 or float(pivots.min()) < PIVOT_RTOL * scale:
        raise FactorizationError(
            k,
            f"singular banded factor: min |u_ii| = {float(pivots.min()):.2e}, "
            f"max |a_ij| = {scale:.2e}",
        )
    return SubproblemFactorization(k, (lo, own[1]), own, nx, lu, ipiv)


def _exact_factor(system: SparseSystem, partition: SlicePartition, k: int) -> ExactSchurFactor:
    own = partition.slices[k]
    lead = system.layers(-system.grid.b, own[1])
    block = system.matrix[lead, lead].tocsc()
    return ExactSchurFactor(k, own, system.grid.nx, scipy.sparse.linalg.splu(block))


# ---------------------------------------------------------------------------
# preconditioner
# ---------------------------------------------------------------------------


@dataclass
class SweepPreconditioner:
    system: SparseSystem
    partition: SlicePartition
    factors: list[SubproblemFactorization | ExactSchurFactor]
    lower: list[scipy.sparse.csr_matrix | None] = field(repr=False)
    upper: list[scipy.sparse.csr_matrix | None] = field(repr=False)
    setup_time: float = 0.0

    @property
    def factor_nnz(self) -> int:
        return sum(f.nnz for f in self.factors)

    def apply_extended(self, f: ComplexField) -> ComplexField:
        """Forward then backward block substitution; returns u~ on I^{h+eta}."""
        grid = self.system.grid
        b, nx = grid.b, grid.nx
        if f.data.shape != (nx, nx):
            raise ValueError(f"f must live on I^(h+eta), got shape {f.data.shape}")

        parts: list[np.ndarray] = []
        for k, (lo, hi) in enumerate(self.partition.slices):
            rhs = f.data[lo + b : hi + b + 1].astype(np.complex128, copy=True)
            lower = self.lower[k]
            if lower is not None:
                rhs -= (lower @ parts[-1].ravel()).reshape(rhs.shape)
            parts.append(self.factors[k].apply(rhs))

        for k in range(self.partition.count - 2, -1, -1):
            upper = self.upper[k]
            assert upper is not None
            coupling = (upper @ parts[k + 1].ravel()).reshape(parts[k].shape)
            parts[k] = parts[k] - self.factors[k].apply(coupling)

        return ComplexField(grid.index_set("I_h_eta"), np.concatenate(parts, axis=0))

    def apply(self, f: ComplexField) -> ComplexField:
        grid = self.system.grid
        b, n = grid.b, grid.n
        u = self.apply_extended(f).data
        return ComplexField(grid.index_set("I"), u[b + 1 : b + 1 + n, b + 1 : b + 1 + n])


def setup(
    system: SparseSystem,
    m: PerturbationField,
    samples: FrequencySamples | None = None,
    partition: SlicePartition | None = None,
    exact: bool = False,
    threads: int = 1,
) -> SweepPreconditioner:
    """Factor every slab. `exact=True` swaps in true Schur complement inverses (testing only)."""
    grid = system.grid
    partition = partition or partition_slices(grid)
    started = time.perf_counter()
    if samples is None and not exact and partition.count > 1:
        samples = build_frequency_samples(grid, m, partition.aux_depths())
    if samples is not None and not exact and partition.count > 1:
        fitted = prefetch_aux_stencils(samples, m, partition)
        logger.debug(f"{fitted} sampled aux stencils fitted")

    def build(k: int) -> SubproblemFactorization | ExactSchurFactor:
        if exact:
            return _exact_factor(system, partition, k)
        return build_subproblem(system, partition, samples, m, k)

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        factors = list(pool.map(build, range(partition.count)))

    slices = partition.slices
    lower: list[scipy.sparse.csr_matrix | None] = [None]
    upper: list[scipy.sparse.csr_matrix | None] = []
    for k in range(partition.count):
        rows = system.layers(*slices[k])
        if k > 0:
            lower.append(system.matrix[rows, system.layers(*slices[k - 1])])
        if k < partition.count - 1:
            upper.append(system.matrix[rows, system.layers(*slices[k + 1])])
    upper.append(None)

    elapsed = time.perf_counter() - started
    precond = SweepPreconditioner(system, partition, factors, lower, upper, elapsed)
    logger.info(
        f"Sweep setup: {partition.count} slices {partition.widths}, "
        f"{precond.factor_nnz} factor entries, {elapsed:.2f}s"
    )
    return precond
