"""Compact-stencil surrogate H u = f of the dense Lippmann-Schwinger system.

Interior rows carry (alpha, beta) stencils fitted to the Green's kernel, boundary
rows carry gamma stencils annihilating modified plane waves under complex
coordinate stretching. All stencils live on the 3x3 neighborhood, offsets in
row-major order (-1,-1), (-1,0), ..., (1,1).
"""

import logging
import math
import threading
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
import scipy.sparse

from .kernel import central_weight, green2d_radial, kernel_weights
from .problem import ComplexField, GridSpec, PerturbationField

logger = logging.getLogger(__name__)

OFFSETS: tuple[tuple[int, int], ...] = tuple((d1, d2) for d1 in (-1, 0, 1) for d2 in (-1, 0, 1))
_OFFSET_ARRAY = np.array(OFFSETS)

_DIAG = 1 / math.sqrt(2)
# north, south, west, east, northwest, northeast, southwest, southeast
PLANE_WAVE_DIRECTIONS = np.array(
    [
        (0.0, 1.0),
        (0.0, -1.0),
        (-1.0, 0.0),
        (1.0, 0.0),
        (-_DIAG, _DIAG),
        (_DIAG, _DIAG),
        (-_DIAG, -_DIAG),
        (_DIAG, -_DIAG),
    ]
)

GRAM_GAP_RTOL = 1e-14
DENSE_WINDOW_MAX = 128
RANK_RTOL = 1e-8
ANNIHILATION_TOL = 1e-10


class StencilError(Exception):
    """A stencil fit has no unique solution."""


def _fix_phase(v: np.ndarray) -> np.ndarray:
    """Rotate each stencil (last axis) so its largest-modulus entry is real and positive."""
    k = np.argmax(np.abs(v), axis=-1)
    lead = np.take_along_axis(v, k[..., None], axis=-1)
    return v * (np.abs(lead) / lead)


# ---------------------------------------------------------------------------
# interior stencils
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InteriorStencil:
    alpha: np.ndarray
    beta: np.ndarray
    residual: float
    # residual / ||K_{mu,mu^c}||_2
    relative_residual: float


def off_neighborhood_rows(omega: float, h: float, n: int, central: complex) -> np.ndarray:
    """Rows of K_{mu,mu^c}: one (2n+1)^2 window of kernel weights per offset a in mu.

    Column c' holds k_{a + c'}; mu^c = {-n..n}^2 minus mu, so the central 3x3 is zeroed.
    """
    kk = kernel_weights(omega, h, n + 1, central)
    side = 2 * n + 1
    windows = np.empty((9, side, side), dtype=np.complex128)
    for a, (a1, a2) in enumerate(OFFSETS):
        windows[a] = kk[a1 + 1 : a1 + 1 + side, a2 + 1 : a2 + 1 + side]
    windows[:, n - 1 : n + 2, n - 1 : n + 2] = 0
    return windows.reshape(9, -1)


def _neighborhood_block(omega: float, h: float, central: complex) -> np.ndarray:
    """K_{mu,mu}[a, b] = k_{a-b}."""
    kk = kernel_weights(omega, h, 2, central)
    diff = _OFFSET_ARRAY[:, None, :] - _OFFSET_ARRAY[None, :, :] + 2
    return kk[diff[..., 0], diff[..., 1]]


# offset (a1, a2) -> (-a1, a2) in row-major order
_FLIP_FIRST = np.array([6, 7, 8, 3, 4, 5, 0, 1, 2])


def _kernel_row(omega: float, h: float, j1: int, radius: int, central: complex) -> np.ndarray:
    """k_{(j1, j2)} for j2 in [-radius, radius]."""
    d = np.arange(radius + 1)
    r2 = j1 * j1 + d * d
    half = green2d_radial(omega, h * np.sqrt(np.where(r2 == 0, 1, r2))) * h**2
    if j1 == 0:
        half[0] = central
    return np.concatenate([half[:0:-1], half])


def streamed_gram(omega: float, h: float, window: int, central: complex) -> np.ndarray:
    """K_{mu,mu^c} K_{mu,mu^c}^* over mu^c = {-window..window}^2 minus mu, one column row at a time.

    Only columns with c1 >= 0 are formed; the mirrored column (-c1, c2) contributes
    the same block with offsets a1 -> -a1.
    """
    radius = window + 1
    side = 2 * window + 1
    rows: dict[int, np.ndarray] = {}
    gram = np.zeros((9, 9), dtype=np.complex128)
    block = np.empty((9, side), dtype=np.complex128)
    for c1 in range(window + 1):
        for j1 in (abs(c1 - 1), c1, c1 + 1):
            if j1 not in rows:
                rows[j1] = _kernel_row(omega, h, j1, radius, central)
        rows.pop(c1 - 2, None)
        for a, (a1, a2) in enumerate(OFFSETS):
            block[a] = rows[abs(c1 + a1)][a2 + 1 : a2 + 1 + side]
        if c1 <= 1:
            block[:, window - 1 : window + 2] = 0
        part = block @ block.conj().T
        gram += part
        if c1 > 0:
            gram += part[np.ix_(_FLIP_FIRST, _FLIP_FIRST)]
    return gram


def compute_interior_stencil(
    omega: float, h: float, n: int, central: complex | None = None, window: int | None = None
) -> InteriorStencil:
    """alpha minimizes ||alpha^* K_{mu,mu^c}|| over unit vectors; beta^* = alpha^* K_{mu,mu}.

    mu^c ranges over {-window..window}^2 minus mu, window defaulting to n. Windows
    above DENSE_WINDOW_MAX stream the Gram matrix instead of forming K_{mu,mu^c}; the
    residual is then sqrt(alpha^* G alpha) and only accurate to about sqrt(eps) ||G||.
    """
    if not 0 < omega * h < math.pi:
        raise ValueError(f"omega*h must lie in (0, pi), got {omega * h}")
    if n < 2:
        raise ValueError(f"n must be >= 2, got {n}")
    window = n if window is None else window
    if window < 2:
        raise ValueError(f"window must be >= 2, got {window}")
    k0 = central_weight(omega, h) if central is None else central
    rows = None
    if window <= DENSE_WINDOW_MAX:
        rows = off_neighborhood_rows(omega, h, window, k0)
        gram = rows @ rows.conj().T
    else:
        gram = streamed_gram(omega, h, window, k0)
    eigvals, eigvecs = scipy.linalg.eigh(gram)
    if eigvals[1] - eigvals[0] <= GRAM_GAP_RTOL * eigvals[-1]:
        raise StencilError(
            f"interior stencil not unique: lambda_0 = {eigvals[0]:.3e}, lambda_1 = {eigvals[1]:.3e}"
        )
    alpha = _fix_phase(eigvecs[:, 0])
    if rows is not None:
        residual = float(np.linalg.norm(alpha.conj() @ rows))
    else:
        residual = math.sqrt(max(float(np.real(alpha.conj() @ gram @ alpha)), 0.0))
    beta = np.conj(_neighborhood_block(omega, h, k0)) @ alpha
    if window != n:
        logger.debug(f"interior stencil fitted on window {window} (n = {n})")
    return InteriorStencil(
        alpha=alpha,
        beta=beta,
        residual=residual,
        relative_residual=residual / math.sqrt(eigvals[-1]),
    )


# ---------------------------------------------------------------------------
# complex stretching and plane-wave stencils
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SigmaProfile:
    """Quadratic stretching ramps of width eta outside [-h, 1+h], reaching -+C/omega."""

    c_pml: float
    omega: float
    h: float
    eta: float

    @classmethod
    def for_grid(cls, grid: GridSpec) -> "SigmaProfile":
        return cls(grid.c_pml, grid.omega, grid.h, grid.eta)

    def with_depth(self, layers: int) -> "SigmaProfile":
        return replace(self, eta=layers * self.h)

    @property
    def lower(self) -> float:
        return -self.h - self.eta

    @property
    def upper(self) -> float:
        return 1 + self.h + self.eta

    def sigma(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        left = np.clip(-self.h - x, 0, None) / self.eta
        right = np.clip(x - 1 - self.h, 0, None) / self.eta
        return (self.c_pml / self.omega) * (right**2 - left**2)

    def stretch(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x, dtype=float) + 1j * self.sigma(x)


def stretched_coords(profile: SigmaProfile, p: Sequence[float]) -> tuple[complex, complex]:
    """x^sigma = (x1 + i sigma(x1), x2 + i sigma(x2))."""
    slack = 1e-12 * max(1.0, profile.upper)
    for x in p:
        if not profile.lower - slack <= x <= profile.upper + slack:
            raise ValueError(f"point {tuple(p)} outside [{profile.lower}, {profile.upper}]^2")
    z1, z2 = profile.stretch(np.asarray(p, dtype=float))
    return complex(z1), complex(z2)


def modified_plane_wave_matrix(
    points: np.ndarray,
    omega_local: float | np.ndarray,
    directions: np.ndarray = PLANE_WAVE_DIRECTIONS,
) -> np.ndarray:
    """F[..., k, r] = exp(i omega_loc r . x_k^sigma); points has shape (..., 9, 2), complex."""
    phase = points @ directions.T
    return np.exp(1j * np.asarray(omega_local)[..., None, None] * phase)


def _pml_stencils(F: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Batched gamma fit for F of shape (..., 9, 8); returns (gamma, residual)."""
    scaled = F / np.max(np.abs(F), axis=-2, keepdims=True)
    u, s, _ = np.linalg.svd(scaled, full_matrices=True)
    if np.any(s[..., 7] <= RANK_RTOL * s[..., 0]):
        worst = float(np.min(s[..., 7] / s[..., 0]))
        raise StencilError(f"plane-wave matrix is rank deficient (sigma_8/sigma_1 = {worst:.2e})")
    gamma = _fix_phase(u[..., :, 8])
    residual = np.linalg.norm(np.einsum("...k,...kr->...r", gamma.conj(), scaled), axis=-1)
    if np.any(residual > ANNIHILATION_TOL):
        raise StencilError(f"gamma annihilation residual {float(residual.max()):.2e} too large")
    return gamma, residual


def compute_pml_stencil(F: np.ndarray) -> np.ndarray:
    """Unit gamma with gamma^* F = 0 for a 9x8 plane-wave matrix."""
    if F.shape != (9, 8):
        raise ValueError(f"expected a 9x8 plane-wave matrix, got {F.shape}")
    gamma, _ = _pml_stencils(F)
    return gamma


def _neighborhood_points(
    x1: np.ndarray, x2: np.ndarray, h: float, profile1: SigmaProfile, profile2: SigmaProfile
) -> np.ndarray:
    """Stretched 3x3 neighborhoods around (x1, x2); output shape (..., 9, 2)."""
    p1 = np.asarray(x1, dtype=float)[..., None] + _OFFSET_ARRAY[:, 0] * h
    p2 = np.asarray(x2, dtype=float)[..., None] + _OFFSET_ARRAY[:, 1] * h
    return np.stack([profile1.stretch(p1), profile2.stretch(p2)], axis=-1)


# ---------------------------------------------------------------------------
# boundary PML table
# ---------------------------------------------------------------------------


def point_class(i: np.ndarray, n: int) -> np.ndarray:
    """Per-axis position class: -t at layer -t, +t at layer n+1+t, 0 inside I^h."""
    i = np.asarray(i)
    return np.where(i < 0, i, np.where(i > n + 1, i - (n + 1), 0))


def _class_coordinate(c: np.ndarray, n: int) -> np.ndarray:
    """Representative layer of a class; class 0 uses layer 1, whose neighborhood is unstretched."""
    c = np.asarray(c)
    return np.where(c < 0, c, np.where(c > 0, n + 1 + c, 1))


@dataclass(frozen=True)
class BoundaryPmlTable:
    """gamma stencils for I^{h+eta} minus I^h, indexed by (class_1 + b, class_2 + b)."""

    grid: GridSpec
    stencils: np.ndarray
    residuals: np.ndarray

    def stencil(self, i1: int, i2: int) -> np.ndarray:
        b, n = self.grid.b, self.grid.n
        c1, c2 = int(point_class(i1, n)), int(point_class(i2, n))
        if c1 == 0 and c2 == 0:
            raise ValueError(f"({i1}, {i2}) lies in I^h, not in the PML")
        return self.stencils[c1 + b, c2 + b]

    def boundary_points(self) -> list[tuple[int, int]]:
        g = self.grid
        full = g.index_set("I_h_eta")
        inner = g.index_set("I_h")
        return [
            (i1, i2)
            for i1 in range(full.lo, full.hi + 1)
            for i2 in range(full.lo, full.hi + 1)
            if not inner.contains(i1, i2)
        ]


def direct_pml_stencils(
    grid: GridSpec,
    classes: np.ndarray,
    omega_local: float | np.ndarray | None = None,
    profile1: SigmaProfile | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """gamma computed from scratch for an array of (class_1, class_2) pairs, shape (..., 2)."""
    profile = SigmaProfile.for_grid(grid)
    profile1 = profile1 or profile
    classes = np.asarray(classes)
    x1 = _class_coordinate(classes[..., 0], grid.n) * grid.h
    x2 = _class_coordinate(classes[..., 1], grid.n) * grid.h
    points = _neighborhood_points(x1, x2, grid.h, profile1, profile)
    omega = grid.omega if omega_local is None else omega_local
    return _pml_stencils(modified_plane_wave_matrix(points, np.broadcast_to(omega, x1.shape)))


def build_boundary_pml_table(grid: GridSpec) -> BoundaryPmlTable:
    """Corner block computed directly, the other three by mirroring the stretching profile."""
    b = grid.b
    side = 2 * b + 1
    stencils = np.zeros((side, side, 9), dtype=np.complex128)
    residuals = np.zeros((side, side))

    c = np.arange(-b, 1)
    c1, c2 = np.meshgrid(c, c, indexing="ij")
    # class (0, 0) is interior
    corner = (c1 != 0) | (c2 != 0)
    gamma, res = direct_pml_stencils(grid, np.stack([c1[corner], c2[corner]], axis=-1))
    stencils[: b + 1, : b + 1][corner] = gamma
    residuals[: b + 1, : b + 1][corner] = res

    # right side: class +t mirrors -t with offsets reversed along axis 1
    for t in range(1, b + 1):
        src = stencils[b - t, : b + 1].reshape(-1, 3, 3)
        stencils[b + t, : b + 1] = src[:, ::-1, :].reshape(-1, 9)
        residuals[b + t, : b + 1] = residuals[b - t, : b + 1]
    for t in range(1, b + 1):
        src = stencils[:, b - t].reshape(-1, 3, 3)
        stencils[:, b + t] = src[:, :, ::-1].reshape(-1, 9)
        residuals[:, b + t] = residuals[:, b - t]

    logger.info(
        f"Boundary PML table: {side**2 - 1} classes, max residual {float(residuals.max()):.2e}"
    )
    return BoundaryPmlTable(grid, stencils, residuals)


# ---------------------------------------------------------------------------
# frequency-sampled auxiliary stencils
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FrequencySamples:
    """Auxiliary-PML gamma stencils on a grid of local square frequencies.

    Entry (s, j, c2) of depth w serves the aux point j layers left of the slice it
    pads, x2 class c2, under a left ramp of w layers at sample s. Entries are fitted
    the first time a slab asks for them; `table(w)` forces the whole family.
    """

    grid: GridSpec
    omega2: np.ndarray
    depths: tuple[int, ...]
    _fitted: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = field(
        default_factory=dict, init=False, repr=False, compare=False
    )
    _lock: threading.Lock = field(
        default_factory=threading.Lock, init=False, repr=False, compare=False
    )

    def lookup(self, omega2_local: np.ndarray | float) -> np.ndarray:
        """Nearest sample index; ties go to the lower sample."""
        q = np.asarray(omega2_local, dtype=float)
        if len(self.omega2) == 1:
            return np.zeros(q.shape, dtype=int)
        step = self.omega2[1] - self.omega2[0]
        x = (q - self.omega2[0]) / step
        return np.clip(np.ceil(x - 0.5), 0, len(self.omega2) - 1).astype(int)

    def _family(self, depth: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        if depth not in self.depths:
            raise ValueError(f"no frequency-sampled stencils for aux depth {depth}")
        if depth not in self._fitted:
            shape = (len(self.omega2), depth, 2 * self.grid.b + 1)
            self._fitted[depth] = (
                np.zeros((*shape, 9), dtype=np.complex128),
                np.full(shape, np.nan),
                np.zeros(shape, dtype=bool),
            )
        return self._fitted[depth]

    def stencils(
        self, depth: int, sample: np.ndarray, j: np.ndarray, c2: np.ndarray
    ) -> np.ndarray:
        """gamma for broadcast arrays of (sample, aux layer j >= 1, x2 class); shape (..., 9)."""
        b = self.grid.b
        idx = np.broadcast_arrays(np.asarray(sample), np.asarray(j) - 1, np.asarray(c2) + b)
        with self._lock:
            gamma, residual, ready = self._family(depth)
            missing = ~ready[tuple(idx)]
            if np.any(missing):
                flat = np.unique(np.ravel_multi_index(tuple(a[missing] for a in idx), ready.shape))
                s, jj, cc = np.unravel_index(flat, ready.shape)
                profile1 = SigmaProfile.for_grid(self.grid).with_depth(depth)
                classes = np.stack([-(jj + 1), cc - b], axis=-1)
                omega_local = np.sqrt(self.omega2[s])
                fit, res = direct_pml_stencils(self.grid, classes, omega_local, profile1)
                gamma[s, jj, cc] = fit
                residual[s, jj, cc] = res
                ready[s, jj, cc] = True
            return gamma[tuple(idx)]

    def table(self, depth: int) -> np.ndarray:
        """The full (samples, depth, 2b+1, 9) family."""
        s, j, c2 = np.meshgrid(
            np.arange(len(self.omega2)),
            np.arange(1, depth + 1),
            np.arange(-self.grid.b, self.grid.b + 1),
            indexing="ij",
        )
        return self.stencils(depth, s, j, c2)

    @property
    def fitted_count(self) -> int:
        return sum(int(ready.sum()) for _, _, ready in self._fitted.values())

    @property
    def max_residual(self) -> float:
        """Largest annihilation residual among the entries fitted so far (0 if none)."""
        values = [float(np.nanmax(res)) for _, res, ready in self._fitted.values() if ready.any()]
        return max(values, default=0.0)


def frequency_range(grid: GridSpec, m: PerturbationField) -> tuple[float, float]:
    w2 = grid.omega**2
    return w2 * (1 - float(m.m.max(initial=0.0))), w2 * (1 - float(m.m.min(initial=0.0)))


def build_frequency_samples(
    grid: GridSpec, m: PerturbationField, depths: Iterable[int] | None = None
) -> FrequencySamples:
    """n samples of omega^2 (1 - m) over its range, a single one when m is constant."""
    lo, hi = frequency_range(grid, m)
    count = 1 if math.isclose(lo, hi, rel_tol=0, abs_tol=1e-14 * grid.omega**2) else grid.n
    omega2 = np.linspace(lo, hi, count) if count > 1 else np.array([lo])
    wanted = tuple(sorted(set(depths or (grid.b,))))
    logger.info(f"Frequency samples: {count} over [{lo:.4g}, {hi:.4g}], depths {list(wanted)}")
    return FrequencySamples(grid, omega2, wanted)


def aux_stencil_exact(
    grid: GridSpec, omega2_local: float, depth: int, j: int, c2: int
) -> np.ndarray:
    """Aux stencil for the exact local frequency, bypassing the sample table."""
    samples = FrequencySamples(grid, np.array([omega2_local]), (depth,))
    return samples.stencils(depth, np.array(0), np.array(j), np.array(c2))


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SparseSystem:
    """H over I^{h+eta}; unknown (i1, i2) sits at (i1+b)*nx + (i2+b), x1 layers contiguous."""

    grid: GridSpec
    matrix: scipy.sparse.csr_matrix

    def linear_index(self, i1: int, i2: int) -> int:
        b, nx = self.grid.b, self.grid.nx
        return (i1 + b) * nx + (i2 + b)

    def layers(self, lo: int, hi: int) -> slice:
        """Row/column range of the x1 layers lo..hi."""
        b, nx = self.grid.b, self.grid.nx
        return slice((lo + b) * nx, (hi + b + 1) * nx)


def _extended_mesh(grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    idx = np.arange(-grid.b, grid.n + 2 + grid.b)
    return np.meshgrid(idx, idx, indexing="ij")


def _neighbor_values(values: np.ndarray, grid: GridSpec) -> np.ndarray:
    """values on I (n x n), zero-extended; result[..., d] = values at (i + d) over I^{h+eta}."""
    nx = grid.nx
    padded = np.pad(values, grid.b + 2)
    return np.stack(
        [padded[1 + d1 : 1 + d1 + nx, 1 + d2 : 1 + d2 + nx] for d1, d2 in OFFSETS], axis=-1
    )


def assemble_rows(grid: GridSpec, interior_rows: np.ndarray, pml: BoundaryPmlTable) -> SparseSystem:
    """H from per-point row coefficients on I^h (shape (n+2, n+2, 9)) plus PML rows."""
    b, n, nx = grid.b, grid.n, grid.nx
    i1, i2 = _extended_mesh(grid)
    coeff = pml.stencils[point_class(i1, n) + b, point_class(i2, n) + b].conj()
    coeff[b : b + n + 2, b : b + n + 2] = interior_rows

    rows = np.arange(nx * nx).reshape(nx, nx)
    data, row_idx, col_idx = [], [], []
    for k, (d1, d2) in enumerate(OFFSETS):
        j1, j2 = i1 + d1, i2 + d2
        # couplings to the Dirichlet ring are dropped
        keep = (j1 >= -b) & (j1 <= n + 1 + b) & (j2 >= -b) & (j2 <= n + 1 + b)
        row_idx.append(rows[keep])
        col_idx.append(((j1 + b) * nx + (j2 + b))[keep])
        data.append(coeff[..., k][keep])
    matrix = scipy.sparse.csr_matrix(
        (np.concatenate(data), (np.concatenate(row_idx), np.concatenate(col_idx))),
        shape=(nx * nx, nx * nx),
    )
    return SparseSystem(grid, matrix)


def assemble_H(
    grid: GridSpec, m: PerturbationField, interior: InteriorStencil, pml: BoundaryPmlTable
) -> SparseSystem:
    """Interior rows conj(alpha_d) + omega^2 conj(beta_d) m_{i+d}; PML rows conj(gamma_i)."""
    if m.m.shape != (grid.n, grid.n):
        raise ValueError(f"m has shape {m.m.shape}, grid needs {(grid.n, grid.n)}")
    b, n = grid.b, grid.n
    m_near = _neighbor_values(m.m, grid)[b : b + n + 2, b : b + n + 2]
    interior_rows = interior.alpha.conj() + grid.omega**2 * interior.beta.conj() * m_near
    return assemble_rows(grid, interior_rows, pml)


def assemble_f(grid: GridSpec, g: ComplexField, alpha: np.ndarray) -> ComplexField:
    """f_i = sum_d conj(alpha_d) g_{i+d}; supported in I^h."""
    if g.index_set.kind != "I":
        raise ValueError(f"g must live on I, got {g.index_set.kind}")
    f = _neighbor_values(g.data, grid) @ alpha.conj()
    return ComplexField(grid.index_set("I_h_eta"), f)
