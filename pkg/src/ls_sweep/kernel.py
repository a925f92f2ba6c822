"""Free-space Green's function and the FFT-applied dense operator I + omega^2 K M."""

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.fft
from scipy.special import hankel1, roots_legendre

from .problem import ComplexField, GridSpec, PerturbationField

logger = logging.getLogger(__name__)

CENTRAL_WEIGHT_ORDER = 32
CENTRAL_WEIGHT_RTOL = 1e-10


def green2d(omega: float, x: np.ndarray) -> np.ndarray:
    """G(x) = (i/4) H0^(1)(omega |x|) for points x of shape (..., 2)."""
    r = np.hypot(np.asarray(x)[..., 0], np.asarray(x)[..., 1])
    if np.any(r == 0):
        raise ValueError("green2d is singular at x = 0")
    return 0.25j * hankel1(0, omega * r)


def green2d_radial(omega: float, r: np.ndarray) -> np.ndarray:
    """G as a function of |x|; r must be positive."""
    return 0.25j * hankel1(0, omega * np.asarray(r))


def _cell_primitive(omega: float, radius: np.ndarray) -> np.ndarray:
    """int_0^R G(r) r dr, using d/dz [z H1(z)] = z H0(z) and z H1(z) -> -2i/pi at 0."""
    z = omega * radius
    return 0.25j * radius * hankel1(1, z) / omega - 1.0 / (2 * math.pi * omega**2)


def _central_weight_at_order(omega: float, h: float, order: int) -> complex:
    # square = 8 triangles 0 <= theta <= pi/4, 0 <= r <= (h/2)/cos(theta)
    nodes, weights = roots_legendre(order)
    theta = (nodes + 1) * (math.pi / 8)
    radius = (h / 2) / np.cos(theta)
    return complex(8 * (math.pi / 8) * np.sum(weights * _cell_primitive(omega, radius)))


def central_weight(omega: float, h: float) -> complex:
    """k_0 = integral of G over the cell [-h/2, h/2]^2."""
    if not 0 < omega * h < math.pi:
        raise ValueError(f"omega*h must lie in (0, pi), got {omega * h}")
    k0 = _central_weight_at_order(omega, h, CENTRAL_WEIGHT_ORDER)
    check = _central_weight_at_order(omega, h, 2 * CENTRAL_WEIGHT_ORDER)
    if abs(k0 - check) > CENTRAL_WEIGHT_RTOL * abs(check):
        drift = abs(k0 - check) / abs(check)
        logger.warning(f"central weight not converged: |dk0|/|k0| = {drift:.2e}")
    return check


def kernel_weights(omega: float, h: float, radius: int, central: complex) -> np.ndarray:
    """k_d = G(d h) h^2 for d in [-radius, radius]^2, with k_0 = central.

    Built from d1^2 + d2^2 only, so k_d = k_{-d} holds bit for bit.
    """
    d = np.arange(-radius, radius + 1)
    r2 = d[:, None] ** 2 + d[None, :] ** 2
    r = h * np.sqrt(np.where(r2 == 0, 1, r2))
    weights = green2d_radial(omega, r) * h**2
    weights[radius, radius] = central
    return weights


@dataclass(frozen=True)
class KernelTable:
    """Nystrom weights k_d for |d|_inf <= n-1 plus their zero-padded spectrum."""

    omega: float
    h: float
    n: int
    weights: np.ndarray
    fft_size: int
    spectrum: np.ndarray

    @property
    def central(self) -> complex:
        return complex(self.weights[self.n - 1, self.n - 1])

    def weight(self, d1: int, d2: int) -> complex:
        return complex(self.weights[d1 + self.n - 1, d2 + self.n - 1])


def _spectrum(weights: np.ndarray, n: int, size: int, workers: int) -> np.ndarray:
    # circular placement: offset d lands at d mod size
    padded = np.zeros((size, size), dtype=np.complex128)
    idx = np.arange(-(n - 1), n) % size
    padded[np.ix_(idx, idx)] = weights
    return scipy.fft.fft2(padded, workers=workers)


def build_kernel_table(grid: GridSpec, workers: int = 1) -> KernelTable:
    return kernel_table_from_weights(
        grid.omega,
        grid.h,
        grid.n,
        kernel_weights(grid.omega, grid.h, grid.n - 1, central_weight(grid.omega, grid.h)),
        workers=workers,
    )


def kernel_table_from_weights(
    omega: float, h: float, n: int, weights: np.ndarray, workers: int = 1
) -> KernelTable:
    size = scipy.fft.next_fast_len(2 * n - 1, real=True)
    spectrum = _spectrum(weights, n, size, workers)
    weights = weights.copy()
    weights.setflags(write=False)
    spectrum.setflags(write=False)
    return KernelTable(omega, h, n, weights, size, spectrum)


def apply_K(kt: KernelTable, v: ComplexField, workers: int = 1) -> ComplexField:
    """(Kv)_i = sum_j k_{i-j} v_j by zero-padded FFT convolution."""
    return ComplexField(v.index_set, convolve(kt, v.data, workers))


def convolve(kt: KernelTable, v: np.ndarray, workers: int = 1) -> np.ndarray:
    n = kt.n
    if v.shape != (n, n):
        raise ValueError(f"expected a {n}x{n} array on I, got {v.shape}")
    size = kt.fft_size
    padded = scipy.fft.fft2(v, s=(size, size), workers=workers)
    return scipy.fft.ifft2(padded * kt.spectrum, workers=workers)[:n, :n]


def convolve_direct(kt: KernelTable, v: np.ndarray) -> np.ndarray:
    """O(N^2) reference for `convolve`."""
    n = kt.n
    out = np.zeros((n, n), dtype=np.complex128)
    for j1 in range(n):
        for j2 in range(n):
            if v[j1, j2] != 0:
                window = kt.weights[n - 1 - j1 : 2 * n - 1 - j1, n - 1 - j2 : 2 * n - 1 - j2]
                out += v[j1, j2] * window
    return out


@dataclass(frozen=True)
class DenseOperator:
    """A = I + omega^2 K M on I. Stateless apply: safe to call from several threads."""

    kernel: KernelTable
    m: PerturbationField
    workers: int = 1

    @property
    def omega(self) -> float:
        return self.kernel.omega

    def matvec(self, u: np.ndarray) -> np.ndarray:
        return u + self.omega**2 * convolve(self.kernel, self.m.m * u, self.workers)


def apply_A(op: DenseOperator, u: ComplexField) -> ComplexField:
    """u + omega^2 K (m . u)."""
    return ComplexField(u.index_set, op.matvec(u.data))


def build_rhs(op: DenseOperator, u_incoming: ComplexField) -> ComplexField:
    """g = -omega^2 K (m . u_I)."""
    source = ComplexField(u_incoming.index_set, op.m.m * u_incoming.data)
    g = apply_K(op.kernel, source, op.workers)
    return ComplexField(u_incoming.index_set, -(op.omega**2) * g.data)


