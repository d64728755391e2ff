import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fraclap.core import Constant, Expression, Field, Grid, ShellTable, Sphere, validate_params
from fraclap.errors import MarginError, ResampleError
from fraclap.harness import g0_field
from fraclap.kernels import normalization_constant
from fraclap.laplacian import evaluate, evaluate_many, rescale_field, tail_contribution
from fraclap.potentials import extension_field


def smooth_field(grid, seed):
    """Random Gaussian mixture times a C^3 bump supported in |x| <= 0.9."""
    rng = np.random.default_rng(seed)
    c = rng.normal(size=(2, grid.n)) * 0.4
    w = rng.uniform(0.5, 1.5, size=2)

    def f(x):
        bump = np.maximum(1.0 - np.sum(x * x, axis=1) / 0.81, 0.0) ** 4
        return bump * sum(wi * np.exp(-2 * np.sum((x - ci) ** 2, axis=1)) for wi, ci in zip(w, c))

    return Field.from_function(f, grid, kinks=[Sphere((0.0,) * grid.n, 0.9)])


def test_constant_field_has_zero_laplacian():
    p = validate_params(2, 0.6)
    u = Field.from_function(lambda x: np.full(len(x), 2.5), Grid.cube(2, 1.0, 0.125), Constant(2.5))
    e = evaluate(u, np.array([0.2, -0.1]), p)
    assert abs(e.value) <= 1e-10


def test_bulk_solution_one_dimension():
    p = validate_params(1, 0.5)
    assert evaluate(g0_field(p), np.zeros(1), p).value == pytest.approx(1.0, abs=1e-3)


def test_bulk_solution_off_centre():
    p = validate_params(2, 0.4)
    assert evaluate(g0_field(p), np.array([0.1, 0.0]), p).value == pytest.approx(1.0, abs=1e-3)


@pytest.mark.parametrize("n,s", [(1, 0.3), (2, 0.7)])
def test_cosine_is_an_eigenfunction(n, s):
    p = validate_params(n, s)
    u = Field.from_function(lambda x: np.cos(x[:, 0]), Grid.cube(n, 1.0, 0.125), Expression("cos(x1)", far_mean=0.0), s=s)
    e = evaluate(u, np.zeros(n), p)
    assert e.value == pytest.approx(1.0, abs=1e-3)
    assert e.error < 1e-3


def test_margin_required_for_sampled_fields():
    p = validate_params(2, 0.4)
    g = Grid.cube(2, 1.0, 0.125)
    u = Field(g, np.ones(g.shape))
    with pytest.raises(MarginError):
        evaluate(u, np.array([0.95, 0.0]), p)


class TestRescale:
    def test_identity(self):
        p = validate_params(2, 0.4)
        u = g0_field(p, h=0.125)
        v = rescale_field(u, 1.0, np.zeros(2))
        pts = np.random.default_rng(0).uniform(-1.4, 1.4, size=(50, 2))
        np.testing.assert_array_equal(v.at(pts), u.at(pts))

    def test_pointwise_definition(self):
        p = validate_params(2, 0.4)
        u = g0_field(p, h=0.125)
        v = rescale_field(u, 0.5, np.array([0.1, 0.0]))
        pts = np.random.default_rng(1).uniform(-1.0, 1.0, size=(50, 2))
        np.testing.assert_allclose(v.at(pts), u.at(0.5 * pts + [0.1, 0.0]), rtol=0, atol=1e-15)

    def test_rejects_bad_scale(self):
        u = g0_field(validate_params(1, 0.5), h=0.125)
        with pytest.raises(ResampleError):
            rescale_field(u, 0.0, np.zeros(1))
        with pytest.raises(ResampleError):
            rescale_field(u, 1e-300, np.zeros(1))

    @pytest.mark.parametrize("lam", [0.5, 2.0])
    def test_scaling_identity(self, lam):
        p = validate_params(2, 0.5)
        u = g0_field(p)
        x = np.array([0.05, 0.02])
        lhs = evaluate(rescale_field(u, lam, np.zeros(2)), x, p).value
        rhs = lam ** (2 * p.s) * evaluate(u, lam * x, p).value
        assert lhs == pytest.approx(rhs, rel=1e-6)


class TestTail:
    def test_zero_exterior_and_zero_centre(self):
        p = validate_params(1, 0.5)
        u = Field(Grid.cube(1, 1.0, 0.125), np.zeros(17))
        assert tail_contribution(u, np.zeros(1), 4.0, p) == 0.0

    def test_constant_cancels(self):
        p = validate_params(2, 0.3)
        u = Field.from_function(lambda x: np.full(len(x), 1.5), Grid.cube(2, 1.0, 0.125), Constant(1.5))
        assert abs(tail_contribution(u, np.zeros(2), 4.0, p)) <= 1e-12

    @pytest.mark.parametrize("R", [2.0, 8.0, 32.0])
    def test_unit_centre_over_zero_exterior(self, R):
        p = validate_params(1, 0.5)
        u = Field.from_function(lambda x: np.ones(len(x)), Grid.cube(1, 1.0, 0.125), Constant(0.0))
        C = normalization_constant(p)
        assert tail_contribution(u, np.zeros(1), R, p) == pytest.approx(2 * C / R, rel=1e-10)


class TestCovariance:
    P = validate_params(2, 0.4)
    G = Grid.cube(2, 1.0, 0.125)

    @settings(max_examples=4)
    @given(st.integers(0, 10_000), st.floats(-2, 2), st.floats(-2, 2))
    def test_linearity(self, seed, a, b):
        u, v = smooth_field(self.G, seed), smooth_field(self.G, seed + 1)
        x = np.array([0.2, -0.1])
        w = Field.combine([(a, u), (b, v)])
        lhs = evaluate(w, x, self.P).value
        ref = a * evaluate(u, x, self.P).value + b * evaluate(v, x, self.P).value
        scale = abs(a) * abs(evaluate(u, x, self.P).value) + abs(b) * abs(evaluate(v, x, self.P).value)
        assert abs(lhs - ref) <= 1e-8 * max(scale, 1e-12)

    @settings(max_examples=4)
    @given(st.integers(0, 10_000), st.floats(-0.5, 0.5), st.floats(-0.5, 0.5))
    def test_translation(self, seed, z1, z2):
        u = smooth_field(self.G, seed)
        z = np.array([z1, z2])
        x = np.array([0.1, 0.15])
        a = evaluate(u.translated(z), x + z, self.P).value
        b = evaluate(u, x, self.P).value
        assert a == pytest.approx(b, rel=1e-8, abs=1e-12)


def test_many_points_match_single_calls():
    p = validate_params(1, 0.5)
    u = g0_field(p, h=0.125)
    xs = np.array([[0.0], [0.3], [-0.6]])
    many = evaluate_many(u, xs, p)
    assert [e.value for e in many] == [evaluate(u, x, p).value for x in xs]


def test_extension_of_nonnegative_data_is_harmonic_and_nonnegative():
    p = validate_params(2, 0.4)
    h = extension_field(ShellTable((0.0, 0.3, 0.6), (1.0, 0.5, 0.0), (2.5, 1.0)), Grid.cube(2, 1.0, 1.0 / 16), p)
    assert h.values.min() >= 0.0
    for x in [(0.0, 0.0), (0.3, 0.2), (-0.4, 0.1)]:
        assert abs(evaluate(h, np.array(x), p, strict=False).value) <= 1e-3
