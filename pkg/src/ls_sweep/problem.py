"""Computational grid, index sets, velocity fields and incoming waves."""

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np
from scipy.ndimage import gaussian_filter

logger = logging.getLogger(__name__)

INDEX_SET_KINDS = ("I", "I_h", "I_h_eta", "boundary_ring")

# |m| below this is treated as exact zero so supp(m) stays inside I
M_TRUNCATION = 1e-12


@dataclass(frozen=True)
class GridSpec:
    """Discretization of the unit square with a PML extension of b layers per side."""

    omega: float
    n: int
    b: int
    c_pml: float = 10.0

    def __post_init__(self) -> None:
        if not self.omega > 0:
            raise ValueError(f"omega must be positive, got {self.omega}")
        if self.b < 2:
            raise ValueError(f"PML depth b must be >= 2, got {self.b}")
        if self.n < 2 * self.b + 2:
            raise ValueError(
                f"n = {self.n} too small for b = {self.b}: slicing needs n >= 2b + 2"
            )
        if self.c_pml < 0:
            raise ValueError(f"C_pml must be non-negative, got {self.c_pml}")

    @property
    def h(self) -> float:
        return 1.0 / (self.n + 1)

    @property
    def eta(self) -> float:
        """PML width."""
        return self.b * self.h

    @property
    def nx(self) -> int:
        """Points per side of the extended grid I^{h+eta}."""
        return self.n + 2 + 2 * self.b

    def index_set(self, kind: str) -> "IndexSet":
        if kind == "I":
            return IndexSet(kind, 1, self.n)
        if kind == "I_h":
            return IndexSet(kind, 0, self.n + 1)
        if kind == "I_h_eta":
            return IndexSet(kind, -self.b, self.n + 1 + self.b)
        if kind == "boundary_ring":
            return IndexSet(kind, -self.b - 1, self.n + 2 + self.b, ring=True)
        raise ValueError(f"Unknown index set kind: {kind}")


@dataclass(frozen=True)
class IndexSet:
    """A square block of 2D indices lo..hi (inclusive) per axis, or its outer ring."""

    kind: str
    lo: int
    hi: int
    ring: bool = False

    @property
    def side(self) -> int:
        return self.hi - self.lo + 1

    @property
    def shape(self) -> tuple[int, int]:
        return (self.side, self.side)

    @property
    def size(self) -> int:
        if self.ring:
            return self.side**2 - (self.side - 2) ** 2
        return self.side**2

    def contains(self, i1: int, i2: int) -> bool:
        inside = self.lo <= i1 <= self.hi and self.lo <= i2 <= self.hi
        if not self.ring:
            return inside
        return inside and (i1 in (self.lo, self.hi) or i2 in (self.lo, self.hi))

    def coords(self, h: float) -> np.ndarray:
        """Grid coordinates p_i = i*h along one axis."""
        return np.arange(self.lo, self.hi + 1) * h


@dataclass(frozen=True)
class ComplexField:
    """Complex samples over a rectangular index set, indexed data[i1 - lo, i2 - lo]."""

    index_set: IndexSet
    data: np.ndarray

    def __post_init__(self) -> None:
        if self.index_set.ring:
            raise ValueError("ComplexField cannot live on the boundary ring")
        if self.data.shape != self.index_set.shape:
            raise ValueError(
                f"data shape {self.data.shape} does not match {self.index_set.kind} "
                f"shape {self.index_set.shape}"
            )

    @classmethod
    def zeros(cls, index_set: IndexSet) -> "ComplexField":
        return cls(index_set, np.zeros(index_set.shape, dtype=np.complex128))

    def norm(self) -> float:
        return float(np.linalg.norm(self.data))


@dataclass(frozen=True)
class PerturbationField:
    """m = 1 - 1/c^2 sampled on I; zero everywhere else by construction."""

    m: np.ndarray

    def __post_init__(self) -> None:
        if self.m.ndim != 2 or self.m.shape[0] != self.m.shape[1]:
            raise ValueError(f"m must be a square 2D array, got shape {self.m.shape}")
        if self.m.size and float(np.max(np.abs(self.m))) >= 1.0:
            raise ValueError(f"max |m| must be < 1, got {float(np.max(np.abs(self.m)))}")

    @classmethod
    def from_velocity(cls, c: np.ndarray) -> "PerturbationField":
        if np.any(c <= 0):
            raise ValueError(f"velocity must be positive everywhere, min c = {float(c.min())}")
        m = 1.0 - 1.0 / c**2
        m[np.abs(m) < M_TRUNCATION] = 0.0
        return cls(m)

    @classmethod
    def zeros(cls, grid: GridSpec) -> "PerturbationField":
        return cls(np.zeros((grid.n, grid.n)))

    def padded(self, pad: int) -> np.ndarray:
        """m extended by zeros with `pad` extra points per side."""
        return np.pad(self.m, pad)

    @property
    def is_zero(self) -> bool:
        return not np.any(self.m)


def make_grid(omega: float, ppw: float = 8, b: int = 8, c_pml: float = 10.0) -> GridSpec:
    """Smallest grid with at least `ppw` points per wavelength."""
    if not omega > 0:
        raise ValueError(f"omega must be positive, got {omega}")
    if ppw < 3:
        raise ValueError(f"ppw must be >= 3, got {ppw}")
    points_per_unit = ppw * omega / (2 * math.pi)
    n = math.ceil(points_per_unit - 1e-9) - 1
    return GridSpec(omega=omega, n=n, b=b, c_pml=c_pml)


def _interior_mesh(grid: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    x = grid.index_set("I").coords(grid.h)
    return np.meshgrid(x, x, indexing="ij")


def gaussian_velocity(
    grid: GridSpec,
    centers: Sequence[Sequence[float]],
    amplitudes: Sequence[float],
    widths: Sequence[float],
) -> PerturbationField:
    """c(x) = 1 + sum_k a_k exp(-|x - c_k|^2 / (2 w_k^2)); negative a_k converge."""
    if not len(centers) == len(amplitudes) == len(widths):
        raise ValueError(
            f"centers/amplitudes/widths lengths differ: "
            f"{len(centers)}/{len(amplitudes)}/{len(widths)}"
        )
    x1, x2 = _interior_mesh(grid)
    c = np.ones_like(x1)
    edge = 0.0
    for (c1, c2), a, w in zip(centers, amplitudes, widths, strict=True):
        if w <= 0:
            raise ValueError(f"Gaussian width must be positive, got {w}")
        c += a * np.exp(-((x1 - c1) ** 2 + (x2 - c2) ** 2) / (2 * w**2))
        # distance from the center to the nearest side of the unit square
        d = min(c1, 1 - c1, c2, 1 - c2)
        edge += abs(a) * math.exp(-(d**2) / (2 * w**2))
    if edge >= 1e-8:
        logger.warning(f"Gaussian velocity not decayed at the boundary (residual {edge:.2e})")
    return PerturbationField.from_velocity(c)


def _boundary_taper(grid: GridSpec) -> np.ndarray:
    x1, x2 = _interior_mesh(grid)
    return (np.sin(np.pi * x1) * np.sin(np.pi * x2)) ** 2


def random_velocity(
    grid: GridSpec, seed: int, contrast: float, correlation_length: float
) -> PerturbationField:
    """Smoothed white noise (PCG64 generator), tapered so that c = 1 on the boundary."""
    if correlation_length <= 0:
        raise ValueError(f"correlation_length must be positive, got {correlation_length}")
    rng = np.random.Generator(np.random.PCG64(seed))
    noise = rng.standard_normal((grid.n, grid.n))
    smooth = gaussian_filter(noise, sigma=correlation_length / grid.h, mode="reflect")
    peak = float(np.max(np.abs(smooth)))
    if peak > 0:
        smooth /= peak
    c = 1.0 + contrast * _boundary_taper(grid) * smooth
    return PerturbationField.from_velocity(c)


def plane_wave(grid: GridSpec, direction: Sequence[float]) -> ComplexField:
    """u_I(p) = exp(i omega r.p) on I."""
    r1, r2 = float(direction[0]), float(direction[1])
    if abs(math.hypot(r1, r2) - 1.0) > 1e-12:
        raise ValueError(f"direction must be a unit vector, got ({r1}, {r2})")
    x1, x2 = _interior_mesh(grid)
    return ComplexField(grid.index_set("I"), np.exp(1j * grid.omega * (r1 * x1 + r2 * x2)))


DOWNWARD = (0.0, -1.0)


@dataclass
class VelocitySpec:
    """Velocity field description as read from a JSON document."""

    kind: str = "free"
    centers: list[list[float]] = field(default_factory=list)
    amplitudes: list[float] = field(default_factory=list)
    widths: list[float] = field(default_factory=list)
    seed: int | None = None
    contrast: float = 0.2
    correlation_length: float = 0.05


VELOCITY_KINDS = (
    "free",
    "gaussian",
    "converging_gaussian",
    "diverging_gaussian",
    "gaussian_cloud",
    "random",
)

# gaussian_cloud defaults: 32 converging bumps about half a wavelength wide at omega/2pi = 16
CLOUD_COUNT = 32
CLOUD_AMPLITUDE = -0.25
CLOUD_WIDTH = 0.03
# centers at least this many widths apart keep overlaps from pushing |m| to 1
CLOUD_GAP = 3.0


def parse_velocity_spec(data: dict[str, Any]) -> VelocitySpec:
    """Build a VelocitySpec, rejecting unknown keys and kinds."""
    allowed = set(VelocitySpec.__dataclass_fields__)
    unknown = set(data) - allowed
    if unknown:
        raise ValueError(f"Unknown velocity keys: {sorted(unknown)}")
    spec = VelocitySpec(**data)
    if spec.kind not in VELOCITY_KINDS:
        raise ValueError(f"Unknown velocity kind '{spec.kind}', expected one of {VELOCITY_KINDS}")
    return spec


def _scatter_centers(seed: int, count: int, min_gap: float) -> list[list[float]]:
    """Seeded centers in [0.2, 0.8]^2, at least min_gap apart so bumps never stack."""
    rng = np.random.Generator(np.random.PCG64(seed))
    centers: list[np.ndarray] = []
    while len(centers) < count:
        p = rng.uniform(0.2, 0.8, size=2)
        if all(np.hypot(*(p - q)) >= min_gap for q in centers):
            centers.append(p)
    return [p.tolist() for p in centers]


def velocity_from_spec(
    grid: GridSpec, spec: VelocitySpec, default_seed: int = 0
) -> PerturbationField:
    """Evaluate a velocity description on the grid."""
    seed = spec.seed if spec.seed is not None else default_seed

    if spec.kind == "free":
        return PerturbationField.zeros(grid)

    if spec.kind == "gaussian":
        return gaussian_velocity(grid, spec.centers, spec.amplitudes, spec.widths)

    if spec.kind in ("converging_gaussian", "diverging_gaussian"):
        sign = -1.0 if spec.kind == "converging_gaussian" else 1.0
        amplitude = spec.amplitudes[0] if spec.amplitudes else sign * 0.25
        width = spec.widths[0] if spec.widths else 0.1
        center = spec.centers[0] if spec.centers else [0.5, 0.5]
        return gaussian_velocity(grid, [center], [amplitude], [width])

    if spec.kind == "gaussian_cloud":
        count = len(spec.centers) or CLOUD_COUNT
        widths = spec.widths or [CLOUD_WIDTH] * count
        centers = spec.centers or _scatter_centers(seed, count, min_gap=CLOUD_GAP * max(widths))
        amplitudes = spec.amplitudes or [CLOUD_AMPLITUDE] * count
        return gaussian_velocity(grid, centers, amplitudes, widths)

    return random_velocity(grid, seed, spec.contrast, spec.correlation_length)
