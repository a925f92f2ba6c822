"""Tests for interior/PML stencils and assembly of the sparse system H."""

import math

import numpy as np
import pytest

from ls_sweep import sparsify
from ls_sweep.kernel import central_weight, kernel_weights
from ls_sweep.problem import ComplexField, GridSpec, PerturbationField, gaussian_velocity
from ls_sweep.sparsify import (
    OFFSETS,
    PLANE_WAVE_DIRECTIONS,
    FrequencySamples,
    SigmaProfile,
    StencilError,
    assemble_f,
    assemble_H,
    aux_stencil_exact,
    build_boundary_pml_table,
    build_frequency_samples,
    compute_interior_stencil,
    compute_pml_stencil,
    direct_pml_stencils,
    frequency_range,
    modified_plane_wave_matrix,
    off_neighborhood_rows,
    point_class,
    streamed_gram,
    stretched_coords,
)


def _same_up_to_phase(a: np.ndarray, b: np.ndarray) -> float:
    """1 - |<a, b>| for unit vectors."""
    return float(1 - abs(np.vdot(a, b)))


class TestInteriorStencil:
    def test_unit_norm_and_eigen_residual(self):
        omega, h, n = 2 * math.pi * 2, 1 / 17, 16
        k0 = central_weight(omega, h)
        stencil = compute_interior_stencil(omega, h, n, central=k0)
        assert np.linalg.norm(stencil.alpha) == pytest.approx(1.0, abs=1e-12)
        sigma_min = np.linalg.svd(off_neighborhood_rows(omega, h, n, k0), compute_uv=False)[-1]
        assert stencil.residual == pytest.approx(sigma_min, rel=1e-8)
        assert 0 < stencil.relative_residual < 1

    def test_square_symmetry(self, small_grid: GridSpec):
        alpha = compute_interior_stencil(small_grid.omega, small_grid.h, small_grid.n).alpha
        a = alpha.reshape(3, 3)
        np.testing.assert_allclose(a, a[::-1, :], atol=1e-8)
        np.testing.assert_allclose(a, a[:, ::-1], atol=1e-8)
        np.testing.assert_allclose(a, a.T, atol=1e-8)

    def test_largest_entry_is_real_positive(self, small_grid: GridSpec):
        alpha = compute_interior_stencil(small_grid.omega, small_grid.h, small_grid.n).alpha
        lead = alpha[np.argmax(np.abs(alpha))]
        assert lead.imag == pytest.approx(0.0, abs=1e-14)
        assert lead.real > 0

    def test_beta_matches_neighborhood_kernel(self, small_grid: GridSpec):
        omega, h = small_grid.omega, small_grid.h
        stencil = compute_interior_stencil(omega, h, small_grid.n)
        kk = kernel_weights(omega, h, 2, central_weight(omega, h))
        for b_idx, (b1, b2) in enumerate(OFFSETS):
            expected = sum(
                np.conj(stencil.alpha[a]) * kk[a1 - b1 + 2, a2 - b2 + 2]
                for a, (a1, a2) in enumerate(OFFSETS)
            )
            assert np.conj(stencil.beta[b_idx]) == pytest.approx(expected, rel=1e-10, abs=1e-14)

    def test_streamed_gram_matches_dense(self):
        omega, h, window = 2 * math.pi * 3, 1 / 19, 20
        k0 = central_weight(omega, h)
        rows = off_neighborhood_rows(omega, h, window, k0)
        dense = rows @ rows.conj().T
        streamed = streamed_gram(omega, h, window, k0)
        np.testing.assert_allclose(streamed, dense, rtol=0, atol=1e-12 * np.abs(dense).max())

    def test_streamed_path_matches_dense_path(self, monkeypatch: pytest.MonkeyPatch):
        omega, h, n = 2 * math.pi * 5, 1 / 25, 24
        dense = compute_interior_stencil(omega, h, n)
        monkeypatch.setattr(sparsify, "DENSE_WINDOW_MAX", 8)
        streamed = compute_interior_stencil(omega, h, n)
        np.testing.assert_allclose(streamed.alpha, dense.alpha, atol=1e-9)
        assert streamed.residual == pytest.approx(dense.residual, rel=1e-4)

    def test_explicit_window_n_is_default(self, small_grid: GridSpec):
        omega, h, n = small_grid.omega, small_grid.h, small_grid.n
        default = compute_interior_stencil(omega, h, n)
        explicit = compute_interior_stencil(omega, h, n, window=n)
        np.testing.assert_array_equal(default.alpha, explicit.alpha)

    def test_wider_window_shrinks_imaginary_part(self):
        # 5 points per wavelength; a window of n truncates the kernel tail
        omega, h, n = 2 * math.pi * 5, 1 / 25, 24
        narrow = compute_interior_stencil(omega, h, n).alpha
        wide = compute_interior_stencil(omega, h, n, window=8 * n).alpha
        assert np.abs(wide.imag).max() < 0.3 * np.abs(narrow.imag).max()

    def test_residual_nonincreasing_in_n(self):
        omega = 2 * math.pi * 2
        residuals = [compute_interior_stencil(omega, 1 / (n + 1), n).residual for n in (8, 16, 32)]
        assert residuals[0] >= residuals[1] >= residuals[2]

    def test_rejects_small_window(self):
        with pytest.raises(ValueError, match="window"):
            compute_interior_stencil(2 * math.pi * 2, 1 / 17, 16, window=1)

    def test_rejects_under_resolved(self):
        with pytest.raises(ValueError, match="omega\\*h"):
            compute_interior_stencil(200.0, 0.05, 19)


class TestStretching:
    def test_sigma_profile(self, small_grid: GridSpec):
        p = SigmaProfile.for_grid(small_grid)
        w = small_grid.omega
        np.testing.assert_array_equal(p.sigma(np.linspace(-p.h + 1e-9, 1 + p.h - 1e-9, 11)), 0.0)
        assert p.sigma(p.lower) == pytest.approx(-small_grid.c_pml / w)
        assert p.sigma(p.upper) == pytest.approx(small_grid.c_pml / w)

    def test_stretched_coords(self, small_grid: GridSpec):
        p = SigmaProfile.for_grid(small_grid)
        z1, z2 = stretched_coords(p, (0.5, p.upper))
        assert z1 == 0.5
        assert z2 == pytest.approx(p.upper + 1j * small_grid.c_pml / small_grid.omega)

    def test_stretched_coords_outside_domain(self, small_grid: GridSpec):
        p = SigmaProfile.for_grid(small_grid)
        with pytest.raises(ValueError, match="outside"):
            stretched_coords(p, (0.5, p.upper + 0.1))


class TestPmlStencil:
    def test_annihilates_plane_waves(self, small_grid: GridSpec):
        profile = SigmaProfile.for_grid(small_grid)
        h = small_grid.h
        x = np.array([[-2 * h + d1 * h, 0.3 + d2 * h] for d1, d2 in OFFSETS])
        points = np.stack([profile.stretch(x[:, 0]), profile.stretch(x[:, 1])], axis=-1)
        F = modified_plane_wave_matrix(points, small_grid.omega)
        gamma = compute_pml_stencil(F)
        assert np.linalg.norm(gamma) == pytest.approx(1.0, abs=1e-12)
        column_scale = np.max(np.abs(F), axis=0)
        assert np.all(np.abs(gamma.conj() @ F) <= 1e-9 * column_scale)

    def test_shape_checked(self):
        with pytest.raises(ValueError, match="9x8"):
            compute_pml_stencil(np.ones((8, 8), dtype=complex))

    def test_rank_deficient_matrix(self):
        F = np.ones((9, 8), dtype=complex)
        with pytest.raises(StencilError, match="rank deficient"):
            compute_pml_stencil(F)

    def test_point_class(self):
        np.testing.assert_array_equal(
            point_class(np.array([-3, -1, 0, 5, 11, 12, 14]), 10), [-3, -1, 0, 0, 0, 1, 3]
        )


class TestBoundaryTable:
    def test_mirrored_classes_match_direct(self, small_grid: GridSpec):
        table = build_boundary_pml_table(small_grid)
        b = small_grid.b
        c = np.arange(-b, b + 1)
        c1, c2 = np.meshgrid(c, c, indexing="ij")
        mask = (c1 != 0) | (c2 != 0)
        classes = np.stack([c1[mask], c2[mask]], axis=-1)
        direct, residual = direct_pml_stencils(small_grid, classes)
        mapped = table.stencils[mask]
        for a, d in zip(mapped, direct, strict=True):
            assert _same_up_to_phase(a, d) <= 1e-10
        assert residual.max() <= 1e-10
        assert table.residuals[mask].max() <= 1e-10

    def test_stencil_lookup(self, small_grid: GridSpec):
        table = build_boundary_pml_table(small_grid)
        n, b = small_grid.n, small_grid.b
        np.testing.assert_array_equal(table.stencil(-2, 5), table.stencils[b - 2, b])
        np.testing.assert_array_equal(table.stencil(n + 3, n + 1 + b), table.stencils[b + 2, 2 * b])
        with pytest.raises(ValueError, match="not in the PML"):
            table.stencil(0, n + 1)

    def test_boundary_point_count(self, small_grid: GridSpec):
        table = build_boundary_pml_table(small_grid)
        assert len(table.boundary_points()) == small_grid.nx**2 - (small_grid.n + 2) ** 2


class TestFrequencySamples:
    def test_constant_medium_gives_one_sample(self, small_grid: GridSpec):
        samples = build_frequency_samples(small_grid, PerturbationField.zeros(small_grid))
        assert samples.omega2.tolist() == [small_grid.omega**2]
        assert samples.table(small_grid.b).shape == (1, small_grid.b, 2 * small_grid.b + 1, 9)

    def test_lookup_ties_to_lower(self, small_grid: GridSpec):
        samples = FrequencySamples(small_grid, np.array([0.0, 1.0, 2.0]), ())
        np.testing.assert_array_equal(
            samples.lookup(np.array([-1.0, 0.5, 0.51, 1.5, 1.6, 9.0])), [0, 0, 1, 1, 2, 2]
        )

    def test_range_spans_medium(self, small_grid: GridSpec):
        m = gaussian_velocity(small_grid, [[0.5, 0.5]], [-0.2], [0.1])
        lo, hi = frequency_range(small_grid, m)
        assert lo == pytest.approx(small_grid.omega**2)
        assert hi == pytest.approx(small_grid.omega**2 * (1 - m.m.min()))
        samples = build_frequency_samples(small_grid, m, depths=[4, 8])
        assert len(samples.omega2) == small_grid.n
        assert samples.depths == (4, 8)
        assert samples.fitted_count == 0

    def test_sample_agrees_with_exact_stencil(self, small_grid: GridSpec):
        m = gaussian_velocity(small_grid, [[0.5, 0.5]], [-0.2], [0.1])
        samples = build_frequency_samples(small_grid, m)
        s = 5
        exact = aux_stencil_exact(small_grid, float(samples.omega2[s]), small_grid.b, 2, -1)
        sampled = samples.table(small_grid.b)[s, 1, small_grid.b - 1]
        assert _same_up_to_phase(sampled, exact) <= 1e-12

    def test_entries_fitted_on_demand(self, small_grid: GridSpec):
        m = gaussian_velocity(small_grid, [[0.5, 0.5]], [-0.2], [0.1])
        samples = build_frequency_samples(small_grid, m)
        b = small_grid.b
        first = samples.stencils(b, np.array([3, 3, 7]), np.array([1, 1, 2]), np.array([0, 0, -b]))
        assert first.shape == (3, 9)
        np.testing.assert_array_equal(first[0], first[1])
        assert samples.fitted_count == 2
        again = samples.stencils(b, np.array(7), np.array(2), np.array(-b))
        np.testing.assert_array_equal(again, first[2])
        assert samples.fitted_count == 2
        assert 0 <= samples.max_residual <= 1e-10

    def test_lazy_entries_match_full_table(self, small_grid: GridSpec):
        m = gaussian_velocity(small_grid, [[0.5, 0.5]], [-0.2], [0.1])
        lazy = build_frequency_samples(small_grid, m)
        b = small_grid.b
        picked = lazy.stencils(b, np.array(11), np.array(3), np.array(2))
        full = build_frequency_samples(small_grid, m).table(b)
        assert _same_up_to_phase(picked, full[11, 2, b + 2]) <= 1e-12

    def test_free_medium_aux_matches_left_boundary(self, small_grid: GridSpec):
        samples = build_frequency_samples(small_grid, PerturbationField.zeros(small_grid))
        b = small_grid.b
        aux = samples.table(b)[0]
        pml = build_boundary_pml_table(small_grid)
        for j in range(1, b + 1):
            np.testing.assert_allclose(aux[j - 1], pml.stencils[b - j], rtol=0, atol=1e-12)

    def test_unknown_depth(self, small_grid: GridSpec):
        samples = build_frequency_samples(small_grid, PerturbationField.zeros(small_grid))
        with pytest.raises(ValueError, match="aux depth 3"):
            samples.stencils(3, np.array(0), np.array(1), np.array(0))


class TestAssembly:
    def test_free_medium_interior_rows(self, small_grid: GridSpec):
        interior = compute_interior_stencil(small_grid.omega, small_grid.h, small_grid.n)
        system = assemble_H(
            small_grid,
            PerturbationField.zeros(small_grid),
            interior,
            build_boundary_pml_table(small_grid),
        )
        H = system.matrix
        assert H.shape == (small_grid.nx**2, small_grid.nx**2)
        row = system.linear_index(5, 7)
        for k, (d1, d2) in enumerate(OFFSETS):
            assert H[row, system.linear_index(5 + d1, 7 + d2)] == pytest.approx(
                np.conj(interior.alpha[k])
            )

    def test_medium_enters_interior_rows(self, small_grid: GridSpec):
        interior = compute_interior_stencil(small_grid.omega, small_grid.h, small_grid.n)
        m = gaussian_velocity(small_grid, [[0.5, 0.5]], [-0.2], [0.1])
        system = assemble_H(small_grid, m, interior, build_boundary_pml_table(small_grid))
        row = system.linear_index(9, 9)
        # offset (1, 0) is entry 7 in row-major order
        expected = np.conj(interior.alpha[7]) + small_grid.omega**2 * np.conj(
            interior.beta[7]
        ) * m.m[9, 8]
        assert system.matrix[row, system.linear_index(10, 9)] == pytest.approx(expected)

    def test_outer_rows_drop_ring(self, small_grid: GridSpec):
        interior = compute_interior_stencil(small_grid.omega, small_grid.h, small_grid.n)
        system = assemble_H(
            small_grid,
            PerturbationField.zeros(small_grid),
            interior,
            build_boundary_pml_table(small_grid),
        )
        b = small_grid.b
        assert system.matrix[system.linear_index(-b, 5)].nnz == 6
        assert system.matrix[system.linear_index(-b, -b)].nnz == 4

    @pytest.mark.parametrize("k", range(8))
    def test_pml_rows_annihilate_modified_plane_waves(self, small_grid: GridSpec, k: int):
        interior = compute_interior_stencil(small_grid.omega, small_grid.h, small_grid.n)
        pml = build_boundary_pml_table(small_grid)
        system = assemble_H(small_grid, PerturbationField.zeros(small_grid), interior, pml)
        b, n = small_grid.b, small_grid.n
        idx = np.arange(-b, n + 2 + b)
        z = SigmaProfile.for_grid(small_grid).stretch(idx * small_grid.h)
        r1, r2 = PLANE_WAVE_DIRECTIONS[k]
        wave = np.exp(1j * small_grid.omega * (r1 * z[:, None] + r2 * z[None, :]))
        out = (system.matrix @ wave.ravel()).reshape(wave.shape)

        i1, i2 = np.meshgrid(idx, idx, indexing="ij")
        in_pml = (point_class(i1, n) != 0) | (point_class(i2, n) != 0)
        # rows next to the Dirichlet ring lose couplings the wave needs
        off_ring = (np.abs(i1 - (n + 1) / 2) < (n + 1) / 2 + b) & (
            np.abs(i2 - (n + 1) / 2) < (n + 1) / 2 + b
        )
        rows = in_pml & off_ring
        assert rows.sum() > 0
        assert np.max(np.abs(out[rows])) <= 1e-8 * np.linalg.norm(wave)

    def test_f_supported_in_i_h(self, small_grid: GridSpec):
        alpha = compute_interior_stencil(small_grid.omega, small_grid.h, small_grid.n).alpha
        rng = np.random.Generator(np.random.PCG64(0))
        g = ComplexField(small_grid.index_set("I"), rng.standard_normal((18, 18)) + 0j)
        f = assemble_f(small_grid, g, alpha).data
        b, n = small_grid.b, small_grid.n
        inner = np.zeros(f.shape, dtype=bool)
        inner[b : b + n + 2, b : b + n + 2] = True
        assert not np.any(f[~inner])
        assert f[b + 5, b + 5] == pytest.approx(
            sum(np.conj(alpha[k]) * g.data[4 + d1, 4 + d2] for k, (d1, d2) in enumerate(OFFSETS))
        )
