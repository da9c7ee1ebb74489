import numpy as np
import pytest

from qchom.cutproject import golden_ratio_map, identity_map, unit_cell
from qchom.errors import InvalidInputError, MapValidationError
from qchom.fourier import (SpectralField, evaluate_at_fractional,
                           field_from_coeffs, forward_transform,
                           frequency_lattice, load_field, project_AR_free,
                           rms, save_field, synthesize_G_R, truncate,
                           trig_scalar_field)
from qchom.operators import preset

from conftest import rational_map


def dft_oracle(values):
    """O(N^2) direct DFT with the cell-mean normalization, 2-D scalar only."""
    n1, n2 = values.shape
    out = np.zeros((n1, n2), dtype=complex)
    for k1 in range(n1):
        for k2 in range(n2):
            acc = 0.0 + 0.0j
            for j1 in range(n1):
                for j2 in range(n2):
                    acc += values[j1, j2] * np.exp(-2j * np.pi * (k1 * j1 / n1 + k2 * j2 / n2))
            out[k1, k2] = acc / (n1 * n2)
    return out


def random_vector_field(cell, d, seed):
    rng = np.random.default_rng(seed)
    return SpectralField(cell, rng.standard_normal(cell.grid_shape + (d,)))


class TestForwardTransform:
    def test_constant_field(self):
        cell = unit_cell(2, (8, 8))
        f = forward_transform(trig_scalar_field(cell, 2.5))
        assert f.coeffs[0, 0] == pytest.approx(2.5)
        rest = np.abs(f.coeffs).ravel()[1:]
        assert rest.max() <= 1e-14

    def test_single_cosine(self):
        cell = unit_cell(2, (16, 16))
        f = forward_transform(trig_scalar_field(cell, 0.0, [((1, 0), 1.0, 0.0)]))
        assert f.coeffs[1, 0] == pytest.approx(0.5, abs=1e-14)
        assert f.coeffs[-1, 0] == pytest.approx(0.5, abs=1e-14)
        mask = np.ones((16, 16), dtype=bool)
        mask[1, 0] = mask[-1, 0] = False
        assert np.abs(f.coeffs[mask]).max() <= 1e-14

    def test_matches_direct_dft_oracle(self):
        cell = unit_cell(2, (8, 8))
        rng = np.random.default_rng(11)
        field = SpectralField(cell, rng.standard_normal((8, 8)))
        got = forward_transform(field).coeffs
        want = dft_oracle(field.values)
        assert np.abs(got - want).max() <= 1e-12

    def test_conjugate_symmetry_and_parseval(self):
        cell = unit_cell(2, (12, 10))
        rng = np.random.default_rng(12)
        field = SpectralField(cell, rng.standard_normal((12, 10)))
        c = forward_transform(field).coeffs
        for k1 in range(12):
            for k2 in range(10):
                assert c[-k1 % 12, -k2 % 10] == pytest.approx(np.conj(c[k1, k2]), abs=1e-12)
        assert np.sqrt((np.abs(c) ** 2).sum()) == pytest.approx(rms(field), abs=1e-12)

    def test_roundtrip_identity(self):
        cell = unit_cell(3, (8, 6, 4))
        rng = np.random.default_rng(13)
        field = SpectralField(cell, rng.standard_normal((8, 6, 4, 2)))
        back = field_from_coeffs(cell, forward_transform(field).coeffs)
        assert np.abs(back.values - field.values).max() <= 1e-12 * max(1.0, np.abs(field.values).max())


class TestEvaluateAtFractional:
    def test_band_limited_exactness(self):
        cell = unit_cell(2, (16, 16))
        field = trig_scalar_field(cell, 1.5, [((2, -1), 0.7, 0.0), ((0, 1), 0.0, -0.3)])
        rng = np.random.default_rng(14)
        frac = rng.uniform(0.0, 1.0, size=(50, 2))
        got = evaluate_at_fractional(field, frac)
        want = (1.5
                + 0.7 * np.cos(2 * np.pi * (2 * frac[:, 0] - frac[:, 1]))
                - 0.3 * np.sin(2 * np.pi * frac[:, 1]))
        assert np.abs(got - want).max() <= 1e-12


class TestProjectARFree:
    def test_requires_validated_map(self):
        m = golden_ratio_map((8, 8))  # fresh map, never validated
        field = random_vector_field(m.cell, 1, 0)
        with pytest.raises(MapValidationError):
            project_AR_free(field, preset("curl1"), m)

    def test_refuses_resonant_map(self):
        m = rational_map((8, 8))
        m.validate(k_max=4)
        field = random_vector_field(m.cell, 1, 0)
        with pytest.raises(MapValidationError):
            project_AR_free(field, preset("curl1"), m)

    def test_constant_field_maps_to_zero(self, periodic2):
        vals = np.zeros((32, 32, 2))
        vals[..., 0] = 3.0
        vals[..., 1] = -1.0
        field = SpectralField(periodic2.cell, vals)
        projected, stats = project_AR_free(field, preset("curl2"), periodic2)
        assert np.abs(projected.values).max() <= 1e-12
        assert stats.removed_mean == pytest.approx([3.0, -1.0])

    def test_idempotent_linear_contraction(self, periodic2):
        op = preset("curl2")
        u = random_vector_field(periodic2.cell, 2, 21)
        v = random_vector_field(periodic2.cell, 2, 22)
        pu, stats = project_AR_free(u, op, periodic2)
        ppu, _ = project_AR_free(pu, op, periodic2)
        assert np.abs(ppu.values - pu.values).max() <= 1e-12
        assert rms(pu) <= rms(u) + 1e-12
        assert stats.residual_norm <= 1e-10 * max(rms(pu), 1e-300)
        a, b = 0.7, -2.3
        combo = SpectralField(periodic2.cell, a * u.values + b * v.values)
        pcombo, _ = project_AR_free(combo, op, periodic2)
        pv, _ = project_AR_free(v, op, periodic2)
        want = a * pu.values + b * pv.values
        assert np.abs(pcombo.values - want).max() <= 1e-12 * max(1.0, np.abs(want).max())

    def test_gradient_mode_fixed_orthogonal_mode_killed(self, slab3):
        # single mode w_k = c R*k is fixed; a coefficient orthogonal to R*k dies
        op = preset("curl2")
        k = (1, 0, 1)
        w = slab3.dual_frequency(np.array(k, dtype=float))
        perp = np.array([-w[1], w[0]])
        grid = slab3.cell.grid_shape
        coeffs = np.zeros(grid + (2,), dtype=complex)
        idx = tuple(np.mod(k, grid))
        nidx = tuple(np.mod([-v for v in k], grid))
        coeffs[idx] = 0.5 * w
        coeffs[nidx] = 0.5 * w
        aligned = field_from_coeffs(slab3.cell, coeffs)
        p_aligned, _ = project_AR_free(aligned, op, slab3)
        assert np.abs(p_aligned.values - aligned.values).max() <= 1e-12

        coeffs2 = np.zeros(grid + (2,), dtype=complex)
        coeffs2[idx] = 0.5 * perp
        coeffs2[nidx] = 0.5 * perp
        ortho = field_from_coeffs(slab3.cell, coeffs2)
        p_ortho, _ = project_AR_free(ortho, op, slab3)
        assert np.abs(p_ortho.values).max() <= 1e-12

    def test_div_projection_kills_gradients(self, periodic2):
        # divergence-free projection annihilates gradient fields
        op = preset("div2")
        grid = periodic2.cell.grid_shape
        t = np.stack(np.meshgrid(*[np.arange(g) / g for g in grid], indexing="ij"), axis=-1)
        phase = 2 * np.pi * (2 * t[..., 0] + t[..., 1])
        grad = np.stack([2 * np.cos(phase), np.cos(phase)], axis=-1)
        field = SpectralField(periodic2.cell, grad)
        projected, _ = project_AR_free(field, op, periodic2)
        assert np.abs(projected.values).max() <= 1e-12

    def test_component_mismatch(self, periodic2):
        field = random_vector_field(periodic2.cell, 3, 1)
        with pytest.raises(InvalidInputError):
            project_AR_free(field, preset("curl2"), periodic2)


class TestSynthesizeGR:
    def test_empty_lambdas_zero_field(self, golden16):
        field = synthesize_G_R(golden16, {}, 1)
        assert not field.values.any()

    def test_single_pair_cosine_times_frequency(self, golden16):
        k = (1, -2)
        field = synthesize_G_R(golden16, {k: 0.5, (-1, 2): 0.5}, 1)
        w = golden16.dual_frequency(np.array(k, dtype=float))
        t = np.stack(np.meshgrid(*[np.arange(16) / 16] * 2, indexing="ij"), axis=-1)
        want = np.cos(2 * np.pi * (t[..., 0] - 2 * t[..., 1]))[..., None] * w
        assert np.abs(field.values - want).max() <= 1e-12

    def test_three_random_pairs_are_projection_fixed_points(self, slab3):
        rng = np.random.default_rng(31)
        lambdas = {}
        for k in [(1, 0, 0), (0, 1, 1), (2, -1, 0)]:
            lam = complex(rng.standard_normal(), rng.standard_normal())
            lambdas[k] = lam
            lambdas[tuple(-v for v in k)] = np.conj(lam)
        field = synthesize_G_R(slab3, lambdas, 2)
        projected, _ = project_AR_free(field, preset("curl2"), slab3)
        scale = max(np.abs(field.values).max(), 1.0)
        assert np.abs(projected.values - field.values).max() <= 1e-12 * scale

    def test_non_conjugate_symmetric_rejected(self, golden16):
        with pytest.raises(InvalidInputError):
            synthesize_G_R(golden16, {(1, 0): 1.0, (-1, 0): 1.0 + 0.5j}, 1)

    def test_nonzero_lambda0_rejected(self, golden16):
        with pytest.raises(InvalidInputError):
            synthesize_G_R(golden16, {(0, 0): 1.0}, 1)

    def test_beyond_nyquist_rejected(self, golden16):
        with pytest.raises(InvalidInputError):
            synthesize_G_R(golden16, {(8, 0): 1.0, (-8, 0): 1.0}, 1)


class TestTruncate:
    def test_zero_order_on_zero_mean(self, golden16):
        field = trig_scalar_field(golden16.cell, 0.0, [((1, 0), 1.0, 0.0)])
        assert np.abs(truncate(field, 0).values).max() <= 1e-14

    def test_identity_beyond_nyquist(self):
        cell = unit_cell(2, (16, 16))
        rng = np.random.default_rng(41)
        field = SpectralField(cell, rng.standard_normal((16, 16)))
        out = truncate(field, 8)
        assert np.abs(out.values - field.values).max() <= 1e-12

    def test_monotone_and_geometric_decay_for_analytic_field(self):
        cell = unit_cell(2, (32, 32))
        t = np.stack(np.meshgrid(*[np.arange(32) / 32] * 2, indexing="ij"), axis=-1)
        field = SpectralField(cell, np.exp(np.sin(2 * np.pi * t[..., 0])))
        errors = []
        for N in range(2, 9):
            diff = truncate(field, N).values - field.values
            errors.append(np.sqrt((diff ** 2).mean()))
        for a, b in zip(errors, errors[1:]):
            assert b <= a + 1e-16
            if a > 1e-13:
                assert b <= 0.6 * a  # at least geometric

    def test_negative_order_rejected(self, golden16):
        field = trig_scalar_field(golden16.cell, 1.0)
        with pytest.raises(InvalidInputError):
            truncate(field, -1)


class TestClosednessProxy:
    def test_projected_partial_sums_converge_to_projected_limit(self, periodic2):
        op = preset("curl2")
        field = random_vector_field(periodic2.cell, 2, 55)
        p_limit, _ = project_AR_free(field, op, periodic2)
        diffs = []
        for N in (1, 2, 4, 8, 16):
            partial = truncate(field, N)
            p_partial, _ = project_AR_free(partial, op, periodic2)
            diffs.append(rms(SpectralField(periodic2.cell,
                                           p_partial.values - p_limit.values)))
        assert all(b <= a + 1e-15 for a, b in zip(diffs, diffs[1:]))
        assert diffs[-1] <= 1e-12


class TestSerialization:
    def test_roundtrip(self, tmp_path):
        cell = unit_cell(3, (4, 6, 8))
        rng = np.random.default_rng(61)
        field = SpectralField(cell, rng.standard_normal((4, 6, 8, 2)))
        path = tmp_path / "field.qlhf"
        save_field(path, field)
        back = load_field(path, cell)
        assert np.array_equal(back.values, field.values)

    def test_header_layout(self, tmp_path):
        cell = unit_cell(2, (4, 4))
        field = trig_scalar_field(cell, 1.0)
        path = tmp_path / "f.qlhf"
        save_field(path, field)
        raw = path.read_bytes()
        assert raw[:4] == b"QLHF"
        assert int.from_bytes(raw[4:8], "little") == 1    # version
        assert int.from_bytes(raw[8:12], "little") == 2   # m
        assert int.from_bytes(raw[12:16], "little") == 1  # d
        assert int.from_bytes(raw[16:18], "little") == 4  # grid[0]
        assert int.from_bytes(raw[18:20], "little") == 4  # grid[1]
        assert raw[20:32] == bytes(12)
        assert len(raw) == 32 + 16 * 8

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "bad.qlhf"
        path.write_bytes(b"NOPE" + bytes(60))
        with pytest.raises(InvalidInputError):
            load_field(path)

    def test_scalar_loads_with_component_axis(self, tmp_path):
        cell = unit_cell(2, (4, 4))
        field = trig_scalar_field(cell, 2.0)
        path = tmp_path / "s.qlhf"
        save_field(path, field)
        back = load_field(path)
        assert back.values.shape == (4, 4, 1)
        assert np.allclose(back.values[..., 0], field.values)
