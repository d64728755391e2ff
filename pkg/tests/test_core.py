import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fraclap.core import (
    Constant,
    Expression,
    Field,
    Grid,
    HolderClass,
    QuadSpec,
    RadialPower,
    ShellTable,
    Zero,
    holder_class,
    l2s_norm,
    parse_exterior,
    read_grid,
    validate_params,
    write_grid,
)
from fraclap.errors import GridFormatError, Inadmissible, OutOfRange, RieszInvalid, Supercritical


class TestValidateParams:
    def test_riesz_permitted_when_n_exceeds_2s(self):
        p = validate_params(2, 0.75, alpha=0.3)
        assert p.riesz_ok
        assert p.alpha == 0.3

    def test_order_out_of_range(self):
        with pytest.raises(OutOfRange):
            validate_params(2, 1.2)

    def test_alpha_out_of_range(self):
        with pytest.raises(OutOfRange):
            validate_params(2, 0.5, alpha=1.0)

    def test_riesz_request_with_n_below_2s(self):
        assert not validate_params(1, 0.75).riesz_ok
        with pytest.raises(RieszInvalid):
            validate_params(1, 0.75, riesz=True)

    @pytest.mark.parametrize("p", [1.0, 3.0, 10.0])
    def test_supercritical_power(self, p):
        # n=2, s=0.5: the subcritical range is (1, 3)
        with pytest.raises(Supercritical):
            validate_params(2, 0.5, p=p)

    def test_critical_exponent(self):
        assert validate_params(3, 0.5, p=1.5).critical_p == pytest.approx(2.0)


class TestHolderClass:
    def test_fractional_target(self):
        assert holder_class(0.3, 0.2) == HolderClass.classical(0, 0.8)

    def test_integer_target_with_alpha(self):
        assert holder_class(0.75, 0.5) == HolderClass.ln_lipschitz(1)

    def test_half_order_without_alpha(self):
        assert holder_class(0.5) == HolderClass.ln_lipschitz(0)

    def test_matches_enumeration_on_fine_grid(self):
        table = {}
        for k in range(3):
            for j in range(1, 1000):
                table[1000 * k + j] = ("classical", k, j / 1000)
            table[1000 * (k + 1)] = ("lnlipschitz", k, None)
        for m in range(1, 2000):
            cls = holder_class(m / 2000)
            kind, k, beta = table[m]
            assert (cls.kind, cls.k) == (kind, k)
            if beta is not None:
                assert cls.beta == pytest.approx(beta, abs=1e-12)
        for m in range(801, 1800):
            cls = holder_class(0.4, m / 1000 - 0.8)
            kind, k, beta = table[m]
            assert (cls.kind, cls.k) == (kind, k)
            if beta is not None:
                assert cls.beta == pytest.approx(beta, abs=1e-12)


class TestQuadSpec:
    def test_defaults(self):
        q = QuadSpec()
        assert (q.R, q.n_panels, q.gl_order, q.tol) == (32.0, 24, 8, 1e-6)

    @pytest.mark.parametrize("kw", [dict(tol=0.0), dict(gl_order=1), dict(R=-1.0)])
    def test_rejects_invalid(self, kw):
        with pytest.raises(ValueError):
            QuadSpec(**kw)


class TestExteriorModels:
    @pytest.mark.parametrize(
        "model",
        [
            Zero(),
            Constant(2.5),
            RadialPower(1.0, -0.5),
            RadialPower(0.5, 0.3, (1.0, 0.0)),
            ShellTable((0.0, 0.5), (1.0, 0.0), (2.0, 0.0)),
            ShellTable((1.0, 2.0), (1.0, 0.5), None, 0.5, -1.0),
            Expression("cos(x[0])"),
        ],
    )
    def test_string_round_trip(self, model):
        assert parse_exterior(model.to_string()) == model

    def test_unknown_model(self):
        with pytest.raises(GridFormatError):
            parse_exterior("gaussian:1")

    def test_shell_table_is_piecewise_linear(self):
        m = ShellTable((1.0, 2.0), (1.0, 0.0))
        pts = np.array([[1.5, 0.0], [0.0, 1.25], [3.0, 0.0]])
        np.testing.assert_allclose(m.at(pts), [0.5, 0.75, 0.0])


class TestField:
    def test_inadmissible_growth_rejected(self, grid2):
        s = 0.4
        with pytest.raises(Inadmissible):
            Field(grid2, np.ones(grid2.shape), RadialPower(1.0, 2 * s + 1), s=s)

    @given(arrays(float, (9, 9), elements=st.floats(-10, 10)))
    def test_nonneg_flag_rejects_any_negative_sample(self, values):
        grid = Grid.cube(2, 1.0, 0.25)
        if np.any(values < 0):
            with pytest.raises(Inadmissible):
                Field(grid, values, nonneg=True)
        else:
            assert Field(grid, values, nonneg=True).nonneg

    def test_samples_match_function_on_nodes(self, grid2):
        u = Field.from_function(lambda x: x[:, 0] ** 2 - x[:, 1], grid2, exact=False)
        pts = grid2.points()
        np.testing.assert_allclose(u.at(pts), pts[:, 0] ** 2 - pts[:, 1], atol=1e-14)

    def test_exterior_used_outside_box(self, grid2):
        u = Field(grid2, np.zeros(grid2.shape), Constant(3.0))
        assert u.at(np.array([2.0, 0.0])) == 3.0

    def test_divided_is_exact_at_the_divisor(self, grid2):
        u = Field.from_function(lambda x: 1.7 + np.sin(3 * x[:, 0]), grid2, Constant(1.7))
        a = grid2.node((3, 5))
        c = float(u.at(a))
        assert u.divided(c).at(a) == 1.0

    @given(st.floats(0.1, 5.0), st.floats(-1.0, 1.0))
    def test_pullback_is_pointwise(self, lam, shift):
        grid = Grid.cube(1, 1.0, 0.125)
        u = Field.from_function(lambda x: np.cos(x[:, 0]), grid, Constant(0.0))
        v = u.pullback(lam, np.array([shift]))
        x = np.array([[0.1]])
        y = lam * 0.1 + shift
        expected = math.cos(y) if abs(y) <= 1.0 else 0.0
        assert v.at(x)[0] == pytest.approx(expected, abs=1e-13)


class TestGridFile:
    @given(arrays(float, (5, 4), elements=st.floats(-1e6, 1e6, allow_subnormal=True)))
    def test_round_trip_is_bit_exact(self, tmp_path_factory, values):
        grid = Grid((-0.5, 0.25), (0.1, 0.3), (5, 4))
        u = Field(grid, values, ShellTable((1.0, 2.0), (1.0, 0.0)))
        path = tmp_path_factory.mktemp("g") / "u.grid"
        write_grid(u, path)
        back = read_grid(path)
        assert back.grid == grid
        assert np.array_equal(back.values, u.values)
        assert back.exterior == u.exterior

    def test_header_and_layout(self, tmp_path):
        grid = Grid((0.0,), (0.5,), (3,))
        u = Field(grid, [1.0, 2.0, 3.0], nonneg=True)
        write_grid(u, tmp_path / "a.grid")
        lines = (tmp_path / "a.grid").read_text().splitlines()
        assert lines[:7] == ["# fraclap-grid v1", "dim=1", "origin=0.0", "spacing=0.5", "shape=3", "exterior=zero", "nonneg=1"]
        assert lines[7:] == ["1.0", "2.0", "3.0"]

    def test_unknown_version_rejected(self, tmp_path):
        path = tmp_path / "b.grid"
        path.write_text("# fraclap-grid v2\ndim=1\n")
        with pytest.raises(GridFormatError):
            read_grid(path)


class TestL2sNorm:
    def test_zero(self, grid2, p2):
        assert l2s_norm(Field(grid2, np.zeros(grid2.shape)), p2) == 0.0

    def test_constant_one_dimension(self):
        p = validate_params(1, 0.5)
        u = Field.from_function(lambda x: np.ones(len(x)), Grid.cube(1, 1.0, 0.125), Constant(1.0))
        assert l2s_norm(u, p) == pytest.approx(math.pi, rel=1e-6)

    @pytest.mark.parametrize("c", [-2.0, 0.5, 3.0])
    def test_absolute_homogeneity(self, c, grid2, p2):
        u = Field.from_function(lambda x: np.exp(-x[:, 0] ** 2) * (1 + x[:, 1]), grid2, RadialPower(0.3, -0.5))
        base = l2s_norm(u, p2)
        assert l2s_norm(u.scaled(c), p2) == pytest.approx(abs(c) * base, rel=1e-10)
