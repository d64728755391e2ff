import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fraclap.core import Constant, Field, Grid, RadialPower, ShellTable, Sphere, Zero, validate_params
from fraclap.errors import (
    ClassMismatch,
    EmptyBall,
    GradientUnavailable,
    NotPositive,
    SignViolation,
    Supercritical,
    SubcriticalViolation,
)
from fraclap.harness import (
    Domain,
    auxiliary_max,
    blowup_step,
    decay_certificate,
    extension_on_grid,
    g0_field,
    refined_vs_global_experiment,
    regularity_ratio,
    tail_mass,
)
from fraclap.kernels import bulk_solution_g0


def positive_field(seed, n=2, h=1 / 16, half_width=1.5):
    """1 + a random Gaussian mixture: smooth and bounded below by 1."""
    rng = np.random.default_rng(seed)
    c = rng.uniform(-1, 1, size=(3, n))
    w = rng.uniform(0.2, 1.0, size=3)
    width = rng.uniform(1.0, 4.0, size=3)

    def u(x):
        return 1.0 + sum(wi * np.exp(-wd * np.sum((x - ci) ** 2, axis=1)) for wi, wd, ci in zip(w, width, c))

    return Field.from_function(u, Grid.cube(n, half_width, h), Constant(1.0), nonneg=True)


def brute_argmax(grid, weight, x_k, r_k, exponent):
    best, arg = -math.inf, None
    for idx in np.ndindex(*grid.shape):
        x = np.asarray(grid.lo) + np.asarray(idx) * np.asarray(grid.spacing)
        d = float(np.linalg.norm(x - x_k))
        if d <= r_k:
            val = weight[idx] * (r_k - d) ** exponent
            if val > best:
                best, arg = val, x
    return arg, best


# --- auxiliary maximum -----------------------------------------------------------


def test_auxiliary_max_of_constant_is_the_centre():
    g = Grid.cube(2, 1.0, 0.125)
    a, val, _ = auxiliary_max(g, np.ones(g.shape), np.array([0.25, -0.5]), 0.6, 1.5)
    assert np.array_equal(a, [0.25, -0.5])
    assert val == 0.6**1.5


def test_auxiliary_max_tie_takes_lowest_index():
    g = Grid((0.0,), (1.0,), (5,))
    # x_k halfway between nodes 1 and 2: both are optimal
    a, _, idx = auxiliary_max(g, np.ones(5), np.array([1.5]), 2.0, 1.0)
    assert idx == (1,) and a[0] == 1.0


@pytest.mark.parametrize("seed", range(5))
def test_auxiliary_max_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    g = Grid.cube(2, 1.0, 0.125)
    w = rng.uniform(0.1, 2.0, g.shape)
    x_k = rng.uniform(-0.5, 0.5, 2)
    a, val, _ = auxiliary_max(g, w, x_k, 0.7, 2.0 / 3.0)
    b, best = brute_argmax(g, w, x_k, 0.7, 2.0 / 3.0)
    assert np.array_equal(a, b) and val == best


def test_auxiliary_max_errors():
    g = Grid.cube(2, 1.0, 0.5)
    with pytest.raises(EmptyBall):
        auxiliary_max(g, np.ones(g.shape), np.array([0.25, 0.25]), 0.1, 1.0)
    w = np.ones(g.shape)
    w[2, 2] = 0.0
    with pytest.raises(NotPositive):
        auxiliary_max(g, w, np.zeros(2), 0.6, 1.0)


# --- blow-up step ----------------------------------------------------------------


def test_blowup_of_constant_field():
    p = validate_params(2, 0.5, p=2.0)
    g = Grid.cube(2, 1.5, 1 / 8)
    u = Field.from_function(lambda x: np.full(len(x), 4.0), g, Constant(4.0), nonneg=True)
    t = blowup_step(u, np.zeros(2), 2, p, check_points=())
    assert np.array_equal(t.a_k, [0.0, 0.0])
    assert np.all(t.v_samples == 1.0)
    assert t.passed
    assert float(t.v.at(np.zeros((1, 2)))[0]) == 1.0


def test_blowup_of_shifted_bulk_solution():
    p = validate_params(2, 0.5, p=2.0)
    g = Grid.cube(2, 1.5, 1 / 16)
    u = Field.from_function(lambda x: bulk_solution_g0(x, p) + 0.1, g, Constant(0.1), kinks=[Sphere((0.0, 0.0), 1.0)], nonneg=True)
    t = blowup_step(u, np.zeros(2), 2, p, check_points=())
    assert t.passed, t.slacks
    assert t.slacks["A"] <= 2 / 16 and t.slacks["B"] <= 2 / 16


@pytest.mark.parametrize("seed", range(5))
def test_blowup_audits_on_positive_fields(seed):
    p = validate_params(2, 0.5, p=2.0)
    u = positive_field(seed)
    x_k = np.random.default_rng(seed).uniform(-0.3, 0.3, 2)
    t = blowup_step(u, x_k, 1 + seed % 3, p, check_points=())
    assert t.passed, t.slacks
    assert float(t.v.at(np.zeros((1, 2)))[0]) == 1.0
    assert t.r_k == pytest.approx(2 * t.k * float(u.at(x_k)) ** (-(p.p - 1) / (2 * p.s)), rel=1e-14)
    assert t.lambda_k == pytest.approx(t.u_a ** (-(p.p - 1) / (2 * p.s)), rel=1e-14)


def test_blowup_gradient_mode():
    p = validate_params(2, 0.75, p=2.0)
    base = positive_field(3)
    u = Field.from_function(lambda x: 19.0 + base.at(x), base.grid, Constant(20.0), nonneg=True)
    t = blowup_step(u, np.zeros(2), 1, p, mode="gradient", q=0.5, check_points=())
    assert t.passed, t.slacks


def test_blowup_rejects_bad_exponents():
    u = positive_field(0)
    with pytest.raises(SubcriticalViolation):
        blowup_step(u, np.zeros(2), 1, validate_params(2, 0.5), check_points=())
    with pytest.raises(Supercritical):
        validate_params(2, 0.5, p=5.0)
    with pytest.raises(GradientUnavailable):
        blowup_step(u, np.zeros(2), 1, validate_params(2, 0.5, p=2.0), mode="gradient", check_points=())
    with pytest.raises(SubcriticalViolation):
        blowup_step(u, np.zeros(2), 1, validate_params(2, 0.75, p=2.0), mode="gradient", q=5.0, check_points=())


def test_blowup_needs_positive_centre():
    p = validate_params(2, 0.5, p=2.0)
    g = Grid.cube(2, 1.5, 1 / 8)
    with pytest.raises(NotPositive):
        blowup_step(Field(g, np.zeros(g.shape)), np.zeros(2), 1, p, check_points=())


def test_blowup_tail_shrinks():
    p = validate_params(2, 0.5, p=2.0)
    t = blowup_step(positive_field(1), np.zeros(2), 1, p, check_points=())
    vals = [t.tail[R] for R in (8.0, 16.0, 32.0)]
    assert vals[0] >= vals[1] >= vals[2] >= 0.0
    assert t.tail_b == vals[-1]


# --- tail mass ---------------------------------------------------------------------


@pytest.mark.parametrize("R", [8.0, 16.0, 32.0])
def test_tail_mass_of_one_in_one_dimension(R):
    p = validate_params(1, 0.5)
    g = Grid.cube(1, 1.0, 0.25)
    v = Field(g, np.ones(g.shape), Constant(1.0))
    assert tail_mass(v, R, p) == pytest.approx(2.0 / (math.pi * R), rel=1e-8)


def test_tail_mass_beyond_support():
    p = validate_params(2, 0.4)
    g = Grid.cube(2, 1.0, 0.25)
    v = Field(g, np.ones(g.shape), ShellTable((1.0, 2.0, 3.0), (1.0, 1.0, 0.0)))
    assert tail_mass(v, 4.0, p) == 0.0


@given(st.lists(st.floats(0.0, 5.0), min_size=3, max_size=3), st.floats(-1.5, 0.7))
def test_tail_mass_nonnegative_and_monotone(vals, exp):
    p = validate_params(2, 0.4)
    g = Grid.cube(2, 1.0, 0.25)
    ext = ShellTable((1.0, 3.0, 9.0), tuple(vals), None, vals[-1] * 9.0 ** (-exp), exp)
    v = Field(g, np.ones(g.shape), ext)
    tails = [tail_mass(v, R, p) for R in (2.0, 8.0, 16.0, 32.0)]
    assert all(t >= 0.0 for t in tails)
    assert all(b <= a + 1e-8 * max(a, 1.0) for a, b in zip(tails, tails[1:]))


# --- decay certificates ---------------------------------------------------------------


def test_decay_of_bounded_field():
    p = validate_params(2, 0.5, p=2.5)
    u = positive_field(2)
    c = decay_certificate(u, Domain("whole"), p)
    assert c.constant == float(np.max(u.values)) and c.case == "whole"


def test_decay_exterior_power():
    p = validate_params(2, 0.5, p=2.5)
    e = 2 * p.s / (p.p - 1)
    g = Grid.cube(2, 8.0, 0.25)
    r = np.linalg.norm(g.points(), axis=1)
    vals = np.where(r > 0, r, 1.0) ** (-e)
    c = decay_certificate((g, vals.reshape(g.shape)), Domain("exterior", radius=1.0), p)
    assert abs(c.constant - 1.0) <= 1e-10
    assert np.linalg.norm(c.point) >= 2.0


def test_decay_punctured_power():
    p = validate_params(2, 0.5, p=2.0)
    e = 2 * p.s / (p.p - 1)
    g = Grid.cube(2, 1.0, 1 / 32)
    r = np.linalg.norm(g.points(), axis=1)
    vals = np.where(r > 0, r, 1.0) ** (-e)
    c = decay_certificate((g, vals.reshape(g.shape)), Domain("punctured", radius=1.0), p)
    assert abs(c.constant - 1.0) <= 1e-10
    assert 0 < np.linalg.norm(c.point) < 0.5


def test_decay_slab_generic():
    p = validate_params(2, 0.5, p=2.0)
    e = 2 * p.s / (p.p - 1)
    g = Grid((-0.96875, -1.0), (1 / 32, 1 / 32), (95, 65))  # strictly inside the slab
    dom = Domain("slab", axis=0, lo=-1.0, hi=2.0)
    d = dom.distance(g.points())
    vals = (d ** (-e)).reshape(g.shape)
    c = decay_certificate((g, vals), dom, p, generic=True)
    assert abs(c.constant - 1.0) <= 1e-10 and c.case == "generic"


def test_decay_needs_nonnegative_samples():
    p = validate_params(2, 0.5, p=2.0)
    g = Grid.cube(2, 1.0, 0.25)
    with pytest.raises(SignViolation):
        decay_certificate((g, -np.ones(g.shape)), Domain("whole"), p)


def test_domain_distances():
    pts = np.array([[0.0, 0.0], [3.0, 4.0]])
    assert np.array_equal(Domain("ball", radius=6.0).distance(pts), [6.0, 1.0])
    assert np.array_equal(Domain("exterior", radius=1.0).distance(pts), [-1.0, 4.0])
    assert np.array_equal(Domain("halfspace", axis=1, lo=1.0).distance(pts), [-1.0, 3.0])


# --- regularity ratio --------------------------------------------------------------


@pytest.mark.parametrize("t", [0.1, 10.0])
def test_ratio_is_homogeneous(t):
    p = validate_params(2, 0.4)
    u = g0_field(p, h=1 / 8)
    f = Field(u.grid, np.ones(u.grid.shape), Constant(1.0), holder=1.0)
    base = regularity_ratio(u, f, p)
    scaled = regularity_ratio(u.scaled(t), f.scaled(t), p)
    assert scaled.ratio == pytest.approx(base.ratio, rel=1e-12)


def test_ratio_of_constant_extension_is_one():
    p = validate_params(2, 0.4)
    g = Grid.cube(2, 1.0, 1 / 8)
    u = extension_on_grid(Constant(1.0), g, p)
    f = Field(g, np.zeros(g.shape), holder=1.0)
    rr = regularity_ratio(u, f, p)
    assert rr.ratio == pytest.approx(1.0, abs=1e-4)


def test_ratio_of_bulk_solution_is_stable_under_refinement():
    p = validate_params(2, 0.4)
    ratios = []
    for h in (1 / 8, 1 / 16):
        u = g0_field(p, h=h)
        ratios.append(regularity_ratio(u, Field(u.grid, np.ones(u.grid.shape), Constant(1.0)), p).ratio)
    assert math.isfinite(ratios[0]) and abs(ratios[1] / ratios[0] - 1) <= 0.15


def test_ratio_needs_sign_and_class():
    p = validate_params(2, 0.4, alpha=0.3)
    u = g0_field(p, h=1 / 8)
    f = Field(u.grid, np.ones(u.grid.shape))
    with pytest.raises(SignViolation):
        regularity_ratio(Field(u.grid, u.values), f, p)
    with pytest.raises(ClassMismatch):
        regularity_ratio(u, f, p, theorem="1.2")
    with pytest.raises(ClassMismatch):
        regularity_ratio(u, f, p, theorem="2.7")


# --- refined versus global ---------------------------------------------------------------


def test_zero_multiplier_gives_null_row():
    t = refined_vs_global_experiment(3, 1, mass_multipliers=(0.0, 1.0))
    null, live = t.rows
    assert null["ratio"] is None and null["global_local"] is None
    assert live["ratio"] > 0


def test_experiment_is_deterministic():
    a = refined_vs_global_experiment(5, 2, mass_multipliers=(1.0, 1000.0))
    b = refined_vs_global_experiment(5, 2, mass_multipliers=(1.0, 1000.0))
    assert a.rows == b.rows and a.max_ratio == b.max_ratio


def test_ratio_is_mass_invariant_per_trial():
    t = refined_vs_global_experiment(11, 2, mass_multipliers=(1.0, 10.0, 1000.0))
    for trial in (0, 1):
        rows = [r for r in t.rows if r["trial"] == trial]
        first = rows[0]
        for r in rows[1:]:
            assert r["ratio"] == pytest.approx(first["ratio"], rel=1e-12)
            assert r["sup_local"] == pytest.approx(first["sup_local"] * r["M"], rel=1e-12)
        assert first["global_local"] > 1e2


def test_experiment_needs_a_trial():
    from fraclap.errors import OutOfRange

    with pytest.raises(OutOfRange):
        refined_vs_global_experiment(0, 0)
