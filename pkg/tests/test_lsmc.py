import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import brownian_batch, toy_problem
from jumpswitch.errors import ValidationError
from jumpswitch.lsmc import (BasisSpec, RegressionError, compare, design_matrix, fit_lsmc,
                             regress, write_comparison_csv)
from jumpswitch.models import build_cl, preset


class TestBasis:
    def test_sizes(self):
        assert BasisSpec(3).size(2) == 10
        assert BasisSpec(3, cross_terms=False).size(2) == 7
        assert BasisSpec(0).size(4) == 1
        assert BasisSpec(2).exponents(2)[:3] == [(0, 0), (1, 0), (0, 1)]

    def test_standardised_columns(self):
        x = np.random.default_rng(0).lognormal(size=(500, 2))
        A, c, s = design_matrix(x, BasisSpec(1))
        np.testing.assert_allclose(A[:, 1:].mean(0), 0, atol=1e-14)
        np.testing.assert_allclose(A[:, 1:].std(0), 1, rtol=1e-13)
        B, _, _ = design_matrix(x, BasisSpec(1), c, s)
        assert np.array_equal(A, B)


class TestRegression:
    def test_degree_zero_is_mean(self):
        rng = np.random.default_rng(1)
        y = rng.normal(3, 2, 1001)
        A, _, _ = design_matrix(rng.lognormal(size=(1001, 2)), BasisSpec(0))
        coef, rank, ridged = regress(A, y)
        assert coef[0] == pytest.approx(y.mean(), rel=1e-14) and not ridged

    def test_affine_recovered(self):
        rng = np.random.default_rng(2)
        x = rng.uniform(-1, 1, (300, 2))
        y = 1.0 + 2.0 * x[:, 0] - 0.5 * x[:, 1]
        A, c, s = design_matrix(x, BasisSpec(1, log=False))
        coef, _, _ = regress(A, y)
        np.testing.assert_allclose(A @ coef, y, atol=1e-13)
        slopes = coef[1:] / s
        np.testing.assert_allclose(slopes, [2.0, -0.5], rtol=1e-12)
        assert coef[0] - slopes @ c == pytest.approx(1.0, rel=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_nested_residuals(self, seed):
        rng = np.random.default_rng(seed)
        x = rng.lognormal(0, 0.3, (400, 2))
        y = np.sin(3 * x[:, 0]) + x[:, 1] ** 2 + rng.normal(0, 0.1, 400)
        res = []
        for k in range(5):
            A, _, _ = design_matrix(x, BasisSpec(k))
            coef, _, _ = regress(A, y)
            res.append(np.sum((y - A @ coef) ** 2))
        assert all(b <= a * (1 + 1e-10) for a, b in zip(res, res[1:]))

    def test_rank_deficient(self):
        x = np.random.default_rng(3).lognormal(size=(100, 1))
        x = np.column_stack([x, x])
        A, _, _ = design_matrix(x, BasisSpec(2))
        with pytest.raises(RegressionError, match="rank"):
            regress(A, np.ones(100), ridge=None)
        coef, rank, ridged = regress(A, np.ones(100))
        assert ridged and rank < A.shape[1]
        np.testing.assert_allclose(A @ coef, 1.0, atol=1e-6)


class TestFit:
    def test_single_mode_is_pathwise_mean(self):
        inst = preset("cl2d_single", steps=10)
        b = inst.simulate(5000, 0)
        res = fit_lsmc(inst.problem, b)
        # realised cash flows are carried back, so with one mode this is exact
        assert res.values[0] == pytest.approx(b.states[:, -1, 0].mean(), rel=1e-14)

    def test_constant_problem(self):
        p = toy_problem([[0, 0.2], [0.2, 0]], running=[1.0, 0.0], terminal=[0.0, 0.5], steps=4)
        res = fit_lsmc(p, brownian_batch(300, 4, seed=0), BasisSpec(1, log=False))
        # earn 0.25 per step in mode 1, then buy the terminal 0.5 for 0.2 at the
        # last date; mode 2 first pays 0.2 to join that plan
        np.testing.assert_allclose(res.values, [1.05, 0.85], rtol=1e-12)
        np.testing.assert_allclose(res.stderr, 0, atol=1e-12)

    def test_deterministic_and_guards(self):
        inst = preset("cl2d_lambda8", steps=6)
        b = inst.simulate(2000, 0)
        a1, a2 = fit_lsmc(inst.problem, b), fit_lsmc(inst.problem, b)
        assert np.array_equal(a1.values, a2.values)
        assert len(a1.stages) == 6 and a1.stages[3].coef.shape == (10, 3)
        with pytest.raises(ValidationError):
            fit_lsmc(build_cl(8, 9, steps=6).problem, build_cl(8, 9, steps=6).simulate(50, 0))
        with pytest.raises(ValidationError):
            fit_lsmc(inst.problem, preset("cl2d_lambda8", steps=5).simulate(50, 0))

    def test_finite_with_positive_stderr(self):
        inst = preset("cl2d_lambda8", steps=6)
        res = fit_lsmc(inst.problem, inst.simulate(3000, 1))
        assert np.all(np.isfinite(res.values)) and np.all(res.stderr > 0)


class TestCompare:
    def test_identity(self):
        c = compare([1.0, -2.0, 3.0], [1.0, -2.0, 3.0])
        assert np.all(c.relative == 0) and c.average == 0

    def test_relative_and_flag(self):
        c = compare([1.1, 0.5, 2.0], [1.0, 0.0, -2.0])
        assert c.relative[0] == pytest.approx(0.1)
        assert c.flagged.tolist() == [False, True, False]
        assert c.reported[1] == 0.5 and c.reported[2] == pytest.approx(2.0)
        assert c.average == pytest.approx((0.1 + 0.5 + 2.0) / 3)

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            compare([1.0], [1.0, 2.0])

    def test_csv(self, tmp_path):
        write_comparison_csv(tmp_path / "c.csv", [1.1, 2.0], [1.0, 2.0])
        lines = (tmp_path / "c.csv").read_text().splitlines()
        assert lines[0] == "mode,osj,ls,difference,absolute_flag"
        assert lines[1].startswith("1,1.1,1.0,0.1") and lines[2] == "2,2.0,2.0,0.0,0"
        assert lines[3].startswith("average,,,0.05")
