import numpy as np
import pytest

from qchom.cutproject import CutProjectMap, golden_ratio_map, unit_cell
from qchom.errors import InvalidInputError
from qchom.operators import (OperatorSpec, check_constant_rank, from_config,
                             kernel_basis, kernel_projector, lifted_symbol,
                             preset, symbol)


def non_constant_rank_op():
    # symbol diag(w1, w2): rank 1 on the axes, 2 elsewhere
    a1 = np.array([[1.0, 0.0], [0.0, 0.0]])
    a2 = np.array([[0.0, 0.0], [0.0, 1.0]])
    return OperatorSpec(np.stack([a1, a2]), name="diag")


class TestSymbol:
    def test_div3_at_e1(self):
        assert np.array_equal(symbol(preset("div3"), [1.0, 0.0, 0.0]),
                              np.array([[1.0, 0.0, 0.0]]))

    def test_curl3_is_cross_product_matrix(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            w = rng.standard_normal(3)
            cross = np.array([[0.0, -w[2], w[1]],
                              [w[2], 0.0, -w[0]],
                              [-w[1], w[0], 0.0]])
            assert np.allclose(symbol(preset("curl3"), w), cross, atol=1e-15)

    def test_zero_direction_gives_zero_matrix(self):
        for name in ("curl2", "curl3", "div2", "grad-sym"):
            op = preset(name)
            assert not symbol(op, np.zeros(op.n)).any()

    def test_linearity(self):
        rng = np.random.default_rng(1)
        for name in ("curl2", "curl3", "div3", "grad-sym"):
            op = preset(name)
            for _ in range(20):
                a, b = rng.standard_normal(2)
                w1 = rng.standard_normal(op.n)
                w2 = rng.standard_normal(op.n)
                lhs = symbol(op, a * w1 + b * w2)
                rhs = a * symbol(op, w1) + b * symbol(op, w2)
                scale = max(np.abs(rhs).max(), 1.0)
                assert np.abs(lhs - rhs).max() <= 1e-13 * scale

    def test_dimension_mismatch(self):
        with pytest.raises(InvalidInputError):
            symbol(preset("curl3"), [1.0, 0.0])


class TestConstantRank:
    def test_div3_rank_one(self):
        report = check_constant_rank(preset("div3"), samples=64, seed=0)
        assert report.constant_rank and report.r == 1

    def test_curl3_rank_two(self):
        report = check_constant_rank(preset("curl3"), samples=64, seed=0)
        assert report.constant_rank and report.r == 2

    def test_curl1_zero_symbol_rank_zero(self):
        report = check_constant_rank(preset("curl1"), samples=16, seed=0)
        assert report.constant_rank and report.r == 0

    def test_grad_sym_rank_two(self):
        report = check_constant_rank(preset("grad-sym"), samples=64, seed=0)
        assert report.constant_rank and report.r == 2

    def test_diagonal_example_flagged(self):
        report = check_constant_rank(non_constant_rank_op(), samples=64, seed=0)
        assert not report.constant_rank
        assert set(report.observed_ranks) == {1, 2}
        assert report.r is None

    def test_deterministic_in_seed(self):
        a = check_constant_rank(preset("curl3"), samples=32, seed=42)
        b = check_constant_rank(preset("curl3"), samples=32, seed=42)
        assert a == b


class TestKernelProjector:
    def test_curl3_projects_onto_direction(self):
        P = kernel_projector(preset("curl3"), [0.0, 0.0, 1.0])
        assert np.allclose(P, np.diag([0.0, 0.0, 1.0]), atol=1e-14)

    def test_div3_projects_onto_orthogonal_complement(self):
        P = kernel_projector(preset("div3"), [1.0, 0.0, 0.0])
        assert np.allclose(P, np.diag([0.0, 1.0, 1.0]), atol=1e-14)

    def test_curl2_diagonal_direction(self):
        # hand kernel computation: ker(-w2, w1) = span{(1, 1)} at w = (1,1)/sqrt2
        P = kernel_projector(preset("curl2"), np.array([1.0, 1.0]) / np.sqrt(2.0))
        assert np.allclose(P, np.full((2, 2), 0.5), atol=1e-14)

    def test_projector_algebra(self):
        rng = np.random.default_rng(3)
        for name in ("curl2", "curl3", "div2", "div3", "grad-sym"):
            op = preset(name)
            r = check_constant_rank(op, samples=16, seed=0).r
            for _ in range(10):
                w = rng.standard_normal(op.n)
                P = kernel_projector(op, w)
                assert np.allclose(P, P.T, atol=1e-12)
                assert np.abs(P @ P - P).max() <= 1e-12
                S = symbol(op, w)
                assert np.abs(S @ P).max() <= 1e-12 * max(np.abs(S).max(), 1.0)
                assert np.trace(P) == pytest.approx(op.d - r, abs=1e-10)

    def test_scale_invariance(self):
        rng = np.random.default_rng(4)
        op = preset("curl3")
        for _ in range(10):
            w = rng.standard_normal(3)
            c = float(rng.uniform(0.1, 50.0))
            assert np.abs(kernel_projector(op, w) - kernel_projector(op, c * w)).max() <= 1e-12

    def test_zero_direction_refused(self):
        with pytest.raises(InvalidInputError):
            kernel_projector(preset("curl3"), np.zeros(3))

    def test_kernel_basis_orthonormal(self):
        basis = kernel_basis(preset("div3"), [0.3, -1.2, 0.5])
        assert basis.shape == (3, 2)
        assert np.allclose(basis.T @ basis, np.eye(2), atol=1e-12)


class TestLiftedSymbol:
    def test_zero_frequency(self, golden16=None):
        m = golden_ratio_map((4, 4))
        assert not lifted_symbol(preset("div1"), m, [0, 0]).any()

    def test_div1_golden_k10(self):
        m = golden_ratio_map((4, 4))
        assert np.allclose(lifted_symbol(preset("div1"), m, [1, 0]),
                           np.array([[1.0]]))

    def test_curl2_rational_lift(self):
        R = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        m = CutProjectMap(2, 3, R, unit_cell(3, (4, 4, 4)))
        # R*(0,0,1) = (1,1); curl2 symbol there is (-1, 1)
        assert np.allclose(lifted_symbol(preset("curl2"), m, [0, 0, 1]),
                           np.array([[-1.0, 1.0]]))

    def test_bitwise_equal_to_symbol_on_unit_cube(self):
        m = golden_ratio_map((4, 4))
        op = preset("div1")
        rng = np.random.default_rng(6)
        for _ in range(10):
            k = rng.integers(-8, 9, size=2)
            lhs = lifted_symbol(op, m, k)
            rhs = symbol(op, m.R.T @ k.astype(float))
            assert np.array_equal(lhs, rhs)

    def test_dimension_mismatch(self):
        m = golden_ratio_map((4, 4))
        with pytest.raises(InvalidInputError):
            lifted_symbol(preset("curl2"), m, [1, 0])
        with pytest.raises(InvalidInputError):
            lifted_symbol(preset("div1"), m, [1, 0, 0])


class TestConfig:
    def test_preset_names(self):
        for name in ("curl1", "curl2", "curl3", "div1", "div2", "div3", "grad-sym"):
            op = from_config(name)
            assert op.name == name

    def test_raw_coefficients(self):
        op = from_config({"coeffs": [[[0.0, 1.0]], [[-1.0, 0.0]]], "name": "mycurl"})
        assert op.n == 2 and op.l == 1 and op.d == 2

    def test_unknown_preset_and_keys(self):
        with pytest.raises(InvalidInputError):
            from_config("curl9")
        with pytest.raises(InvalidInputError):
            from_config({"coeffs": [[[1.0]]], "bogus": 1})
