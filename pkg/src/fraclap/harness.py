"""Experiments: refined regularity ratios, the blow-up rescaling audit and decay certificates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import Field, FracParams, Grid, HolderClass, QuadSpec, ShellTable, Sphere, Zero, holder_class, validate_params
from .errors import (
    ClassMismatch,
    EmptyBall,
    GradientUnavailable,
    MarginError,
    NotPositive,
    OutOfRange,
    SignViolation,
    SubcriticalViolation,
)
from .kernels import bulk_solution_g0, normalization_constant
from .laplacian import evaluate, field_moment, rescale_field
from .norms import NormReport, Region, derivative_grid, dini_modulus, full_norm, holder_seminorm
from .potentials import poisson_extend_many

THEOREMS = ("1.1", "1.2", "1.3")
TAIL_RADII = (8.0, 16.0, 32.0)


def g0_field(params: FracParams, h: float = 1.0 / 16.0, half_width: float = 1.5) -> Field:
    """The bulk solution ``g0`` (with ``(-Δ)^s g0 = 1`` in the unit ball) on a cube grid."""
    n, s = params.n, params.s
    grid = Grid.cube(n, half_width, h)
    return Field.from_function(
        lambda x: bulk_solution_g0(x, params), grid, Zero(),
        kinks=[Sphere((0.0,) * n, 1.0)], s=s, nonneg=True, radial=True, holder=s,
    )


# --- regularity ratios --------------------------------------------------------


@dataclass
class RegularityRatio:
    ratio: float
    lhs: float
    rhs: float
    cls: HolderClass
    report: NormReport = field(repr=False)
    f_norm: float = 0.0
    u_sup: float = 0.0

    def __float__(self):
        return self.ratio


def _ball(n, radius):
    return Region.ball(np.zeros(n), radius)


def data_norm(f: Field, theorem: str, params: FracParams, seed: int = 0) -> float:
    """Norm of the right-hand side on the closed unit ball in the class the theorem assumes."""
    unit = _ball(params.n, 1.0)
    vals = np.asarray(f.values, float)
    mask = unit.mask(f.grid)
    sup = float(np.max(np.abs(vals[mask]))) if mask.any() else 0.0
    if theorem == "1.1":
        return sup
    alpha = params.alpha
    if theorem == "1.2":
        return sup + holder_seminorm(f, alpha, unit, seed=seed)[0]
    return sup + dini_modulus(f, unit, alpha, seed=seed).I_alpha


def theorem_class(params: FracParams, theorem: str) -> HolderClass:
    if theorem not in THEOREMS:
        raise ClassMismatch(f"unknown theorem {theorem!r}; expected one of {THEOREMS}")
    if theorem == "1.1":
        return holder_class(params.s)
    if params.alpha is None:
        raise ClassMismatch(f"theorem {theorem} needs a Hölder exponent alpha")
    cls = holder_class(params.s, params.alpha, dini=theorem == "1.3")
    if theorem == "1.3" and cls.kind != "dini":
        raise ClassMismatch("the Dini variant needs 2s + alpha to be an integer")
    return cls


def regularity_ratio(u: Field, f: Field, params: FracParams, theorem: str = "1.1", seed: int = 0) -> RegularityRatio:
    """``||u||_{class, B_1/2} / (||f||_{B_1} + sup_{B_1} |u|)`` measured on the grids of ``u`` and ``f``."""
    if not u.nonneg:
        raise SignViolation("the local estimate is stated for nonnegative solutions; set nonneg on u")
    cls = theorem_class(params, theorem)
    if theorem in ("1.2", "1.3") and (f.holder is None or f.holder + 1e-12 < params.alpha):
        raise ClassMismatch(f"f must carry a Hölder tag >= alpha for theorem {theorem}")
    report = full_norm(u, cls, _ball(params.n, 0.5), seed=seed, dini=False)
    unit = _ball(params.n, 1.0)
    mask = unit.mask(u.grid)
    u_sup = float(np.max(np.abs(np.asarray(u.values)[mask])))
    f_norm = data_norm(f, theorem, params, seed)
    rhs = f_norm + u_sup
    lhs = report.norm
    return RegularityRatio(lhs / rhs if rhs > 0 else math.nan, lhs, rhs, cls, report, f_norm, u_sup)


# --- refined versus global ----------------------------------------------------


def far_bump(rng: np.random.Generator, n: int) -> ShellTable:
    """Nonnegative tent data on a ball of radius <= 0.55 centred at distance 2.6..3.4."""
    direction = rng.normal(size=n)
    direction /= np.linalg.norm(direction)
    centre = direction * rng.uniform(2.6, 3.4)
    width = rng.uniform(0.3, 0.55)
    peak = rng.uniform(0.5, 1.5)
    shoulder = rng.uniform(0.2, 0.9) * peak
    return ShellTable((0.0, 0.5 * width, width), (peak, shoulder, 0.0), tuple(centre.tolist()))


def extension_on_grid(data, grid: Grid, params: FracParams, quad: QuadSpec = QuadSpec()) -> Field:
    """Poisson extension of exterior data sampled on ``grid`` (data itself outside the ball)."""
    pts = grid.points()
    r = np.linalg.norm(pts, axis=1)
    vals = np.asarray(data.at(pts), float)
    inside = r < 1.0
    vals[inside] = poisson_extend_many(data, pts[inside], params, quad)
    return Field(grid, np.maximum(vals, 0.0).reshape(grid.shape), data, nonneg=True, s=params.s)


@dataclass
class ExperimentTable:
    experiment: str
    params: dict
    seed: int
    columns: tuple
    rows: list
    max_ratio: float
    verdict: bool
    meta: dict = field(default_factory=dict)


def refined_vs_global_experiment(
    seed: int,
    count: int,
    mass_multipliers=(1.0, 10.0, 100.0, 1000.0),
    params: Optional[FracParams] = None,
    h: float = 1.0 / 8.0,
    theorem: str = "1.1",
    quad: QuadSpec = QuadSpec(),
    bound: float = math.inf,
) -> ExperimentTable:
    """Nonnegative s-harmonic functions in the unit ball from random far data.

    Trial ``i`` draws data with ``np.random.default_rng([seed, i])``; each
    multiplier ``M`` scales that data. Rows hold the local regularity ratio and
    the ratio ``sup_{R^n} u / sup_{B_1} u``.
    """
    if count < 1:
        raise OutOfRange("count must be >= 1")
    params = params or validate_params(2, 0.4)
    n = params.n
    grid = Grid.cube(n, 1.0, h)
    zero = Field(grid, np.zeros(grid.shape), nonneg=True, holder=1.0)
    rows = []
    for trial in range(count):
        rng = np.random.default_rng([seed, trial])
        bump = far_bump(rng, n)
        for M in mass_multipliers:
            if M == 0:
                rows.append({"trial": trial, "M": 0.0, "ratio": None, "global_local": None, "sup_local": 0.0, "sup_global": 0.0})
                continue
            data = bump.scaled(float(M))
            u = extension_on_grid(data, grid, params, quad)
            rr = regularity_ratio(u, zero, params, theorem, seed=seed)
            sup_global = max(float(max(data.values)), rr.u_sup)
            rows.append(
                {
                    "trial": trial,
                    "M": float(M),
                    "ratio": rr.ratio,
                    "global_local": sup_global / rr.u_sup,
                    "sup_local": rr.u_sup,
                    "sup_global": sup_global,
                }
            )
    ratios = [r["ratio"] for r in rows if r["ratio"] is not None]
    max_ratio = max(ratios) if ratios else 0.0
    return ExperimentTable(
        "refined-vs-global",
        {"n": n, "s": params.s, "alpha": params.alpha, "h": h, "theorem": theorem},
        seed,
        ("trial", "M", "ratio", "global_local", "sup_local", "sup_global"),
        rows,
        max_ratio,
        bool(max_ratio < bound),
    )


# --- blow-up procedure ----------------------------------------------------------


def auxiliary_max(grid: Grid, weight, x_k, r_k: float, exponent: float, rel_tie: float = 1e-12):
    """Grid argmax of ``weight(x) * (r_k - |x - x_k|)**exponent`` over the closed ball.

    Values within ``rel_tie`` of the maximum count as ties; the lowest
    row-major index wins. Returns ``(a_k, value, index)``.
    """
    weight = np.asarray(weight, float)
    x_k = np.asarray(x_k, float)
    pts = grid.points()
    dist = np.linalg.norm(pts - x_k, axis=1)
    inside = dist <= r_k
    if not inside.any():
        raise EmptyBall(f"no grid node within {r_k} of {x_k.tolist()}")
    w = weight.ravel()
    if np.any(~(w[inside] > 0)):
        raise NotPositive("weight must be positive on the ball")
    S = np.full(len(pts), -np.inf)
    S[inside] = w[inside] * (r_k - dist[inside]) ** exponent
    top = S.max()
    idx = int(np.flatnonzero(S >= top * (1.0 - rel_tie))[0])
    return pts[idx], float(S[idx]), np.unravel_index(idx, grid.shape)


def lane_emden(K: float = 1.0):
    """``f(x, t) = K t**p`` as a callable factory on ``p``."""
    return lambda p: (lambda x, t: K * np.power(t, p))


@dataclass
class BlowupTrace:
    k: int
    mode: str
    x_k: np.ndarray
    d_k: float
    r_k: float
    a_k: np.ndarray
    lambda_k: float
    u_a: float
    v: Field = field(repr=False)
    v_samples: np.ndarray = field(repr=False)
    audits: dict = field(default_factory=dict)
    slacks: dict = field(default_factory=dict)
    tail: dict = field(default_factory=dict)
    tail_b: float = 0.0
    pde_residual: float = math.nan

    @property
    def passed(self) -> bool:
        return all(self.audits.values())


def tail_mass(v: Field, R: float, params: FracParams, quad: QuadSpec = QuadSpec()) -> float:
    """``C * int_{|x| > R} v(x) / |x|^(n+2s) dx``."""
    return normalization_constant(params, quad) * field_moment(v, R, params.s, quad)


def _grad_norm(grid, vals):
    comps = [derivative_grid((grid, vals), tuple(int(i == d) for i in range(grid.n))) for d in range(grid.n)]
    return np.sqrt(sum(c * c for c in comps))


def _check_exponents(params: FracParams, mode: str, q: Optional[float]):
    p, s, n = params.p, params.s, params.n
    if p is None:
        raise SubcriticalViolation("the blow-up procedure needs p")
    if not 1.0 < p < params.critical_p:
        raise SubcriticalViolation(f"p={p} outside (1, {params.critical_p})")
    if mode == "gradient":
        if s <= 0.5:
            raise GradientUnavailable("the gradient variant needs s > 1/2")
        q_max = 2.0 * s * p / (2.0 * s + p - 1.0)
        if q is not None and not 0.0 < q < q_max:
            raise SubcriticalViolation(f"q={q} outside (0, {q_max})")


def blowup_step(
    u: Field,
    x_k,
    k: int,
    params: FracParams,
    mode: str = "plain",
    f_model: Optional[Callable] = None,
    q: Optional[float] = None,
    b_model: Optional[Callable] = None,
    check_points=None,
    quad: QuadSpec = QuadSpec(),
    slack_cells: float = 2.0,
    tail_radii=TAIL_RADII,
) -> BlowupTrace:
    """One rescaling step at ``x_k`` with the inequality audit.

    ``f_model(x, t)`` defaults to ``t**p``; in gradient mode the term
    ``b_model(x) |grad u|**q`` is added to the right-hand side (``b = 1`` by
    default). ``check_points=()`` skips the fractional Laplacian residual.
    """
    if mode not in ("plain", "gradient"):
        raise OutOfRange(f"mode must be 'plain' or 'gradient', got {mode!r}")
    _check_exponents(params, mode, q)
    p, s, n = params.p, params.s, params.n
    e = 2.0 * s / (p - 1.0)
    grid = u.grid
    h = float(max(grid.spacing))
    vals = np.asarray(u.values, float)
    x_k = np.asarray(x_k, float)
    pts = grid.points()
    d_k = float(np.min(np.minimum(x_k - grid.lo, grid.hi - x_k)))

    if mode == "plain":
        weight = vals
        u_xk = float(u.at(x_k[None, :])[0])
        if not u_xk > 0:
            raise NotPositive("u(x_k) must be positive")
        r_k = 2.0 * k * u_xk ** (-1.0 / e)
        a_k, _, idx = auxiliary_max(grid, weight, x_k, r_k, e)
        u_a = float(u.at(a_k))
        lam = u_a ** (-1.0 / e)
        scale = u_a
    else:
        try:
            grad = _grad_norm(grid, vals)
        except MarginError as exc:
            raise GradientUnavailable(str(exc)) from exc
        if np.any(vals <= 0):
            raise NotPositive("u must be positive on the grid")
        Mk = vals ** (1.0 / e) + grad ** ((p - 1.0) / (2.0 * s + p - 1.0))
        j = tuple(grid.nearest_index(x_k))
        if not np.isfinite(Mk[j]):
            raise GradientUnavailable("gradient is undefined at x_k (boundary cell)")
        r_k = 2.0 * k / float(Mk[j])
        dist = np.linalg.norm(pts - x_k, axis=1).reshape(grid.shape)
        if np.any(~np.isfinite(Mk[dist <= r_k])):
            raise GradientUnavailable("the ball reaches cells without a gradient")
        # S = (M (r - d))^e: maximise M (r - d), ties as for the plain weight
        a_k, _, idx = auxiliary_max(grid, np.where(np.isfinite(Mk), Mk, 1.0), x_k, r_k, 1.0)
        Ma = float(Mk[idx])
        lam = 1.0 / Ma
        u_a = float(u.at(a_k))
        scale = Ma**e

    v = rescale_field(u, lam, a_k).divided(scale)
    v_vals = np.asarray(v.values, float)
    vgrid = v.grid
    vpts = vgrid.points()
    gap = r_k - float(np.linalg.norm(a_k - x_k))
    audits, slacks = {}, {}
    tol = slack_cells * h

    slacks["A"] = 2.0 * k * lam - gap
    audits["A"] = slacks["A"] <= tol

    near = np.linalg.norm(pts - a_k, axis=1) <= k * lam
    worst = float(np.max(gap - 2.0 * (r_k - np.linalg.norm(pts[near] - x_k, axis=1)))) if near.any() else -math.inf
    slacks["B"] = worst
    audits["B"] = worst <= tol

    in_k = np.linalg.norm(vpts, axis=1) <= k
    if mode == "plain":
        bound = 2.0**e
        level = v_vals.ravel()[in_k]
        origin = float(v.at(np.zeros((1, n)))[0])
        slacks["D"] = origin - 1.0
        audits["D"] = origin == 1.0
    else:
        bound = 2.0
        vg = _grad_norm(vgrid, v_vals)
        combo = v_vals ** (1.0 / e) + vg ** ((p - 1.0) / (2.0 * s + p - 1.0))
        level = combo.ravel()[in_k]
        level = level[np.isfinite(level)]
        j0 = tuple(vgrid.nearest_index(np.zeros(n)))
        slacks["D"] = float(combo[j0]) - 1.0
        audits["D"] = abs(slacks["D"]) <= 1e-12
    allow = bound * (1.0 + tol / max(gap, tol)) ** (e if mode == "plain" else 1.0)
    slacks["C"] = float(np.max(level)) - bound if len(level) else -math.inf
    audits["C"] = slacks["C"] <= allow - bound

    audits = {key: audits[key] for key in ("A", "B", "C", "D")}
    slacks = {key: slacks[key] for key in ("A", "B", "C", "D")}
    tails = {float(R): tail_mass(v, R, params, quad) for R in tail_radii}
    series = [tails[float(R)] for R in tail_radii]
    audits["tail_monotone"] = all(b <= a + 1e-8 * max(abs(a), 1.0) for a, b in zip(series, series[1:]))

    residual = math.nan
    pts_check = np.zeros((1, n)) if check_points is None else np.atleast_2d(np.asarray(check_points, float)).reshape(-1, n)
    if len(pts_check):
        f = (lane_emden()(p)) if f_model is None else f_model
        res = []
        for xc in pts_check:
            lap = evaluate(v, xc, params, quad, strict=False).value
            vx = float(v.at(xc[None, :])[0])
            y = lam * xc + a_k
            rhs = lam ** (2.0 * s * p / (p - 1.0)) * float(f(y, lam ** (-e) * vx))
            if mode == "gradient" and q is not None:
                bx = 1.0 if b_model is None else float(b_model(y))
                gv = float(np.linalg.norm([_central(v, xc, d) for d in range(n)]))
                rhs += lam ** ((2.0 * s * p - (2.0 * s + p - 1.0) * q) / (p - 1.0)) * bx * gv**q
            res.append(abs(lap - rhs))
        residual = float(max(res))

    return BlowupTrace(
        k=k,
        mode=mode,
        x_k=x_k,
        d_k=d_k,
        r_k=r_k,
        a_k=np.asarray(a_k, float),
        lambda_k=lam,
        u_a=u_a,
        v=v,
        v_samples=v_vals,
        audits=audits,
        slacks=slacks,
        tail=tails,
        tail_b=series[-1],
        pde_residual=residual,
    )


def _central(v: Field, x, d, step=1e-4):
    e = np.zeros(len(x))
    e[d] = step
    vals = v.at(np.array([x + e, x - e]))
    return (vals[0] - vals[1]) / (2.0 * step)


# --- decay certificates --------------------------------------------------------


@dataclass(frozen=True)
class Domain:
    """Domain described by its distance to the boundary.

    ``kind`` is one of ``whole``, ``exterior`` (``|x| > radius``),
    ``punctured`` (``0 < |x| < radius``), ``ball``, ``slab``
    (``lo < x[axis] < hi``) or ``halfspace`` (``x[axis] > lo``).
    """

    kind: str
    radius: Optional[float] = None
    axis: int = 0
    lo: Optional[float] = None
    hi: Optional[float] = None

    def contains(self, pts) -> np.ndarray:
        return self.distance(pts) > 0

    def distance(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, float))
        r = np.linalg.norm(pts, axis=1)
        if self.kind == "whole":
            return np.full(len(pts), np.inf)
        if self.kind == "exterior":
            return r - self.radius
        if self.kind == "punctured":
            return np.minimum(r, self.radius - r)
        if self.kind == "ball":
            return self.radius - r
        x = pts[:, self.axis]
        if self.kind == "slab":
            return np.minimum(x - self.lo, self.hi - x)
        if self.kind == "halfspace":
            return x - self.lo
        raise OutOfRange(f"unknown domain kind {self.kind!r}")

    def to_dict(self):
        return {k: v for k, v in (("kind", self.kind), ("radius", self.radius), ("axis", self.axis), ("lo", self.lo), ("hi", self.hi)) if v is not None}


@dataclass
class DecayCertificate:
    domain: Domain
    exponent: float
    constant: float
    point: np.ndarray
    case: str


def decay_certificate(u, domain: Domain, params: FracParams, mode: str = "plain", generic: bool = False) -> DecayCertificate:
    """Measured constant ``sup u(x) m(x)`` over the samples with the domain's comparison weight.

    Whole space: ``m = 1``. Exterior of ``B_R``: ``m = |x|^e`` on ``|x| >= 2R``.
    Punctured ball: ``m = |x|^e`` on ``0 < |x| < R/2``. Otherwise (or with
    ``generic``): ``m = min(1, dist(x, boundary))^e``. Gradient mode adds
    ``|grad u|^(2s/(2s+p-1))`` to ``u`` first.
    """
    p, s = params.p, params.s
    if p is None:
        raise SubcriticalViolation("decay certificates need p")
    e = 2.0 * s / (p - 1.0)
    grid, vals = (u.grid, np.asarray(u.values, float)) if isinstance(u, Field) else u
    pts = grid.points()
    v = np.asarray(vals, float).ravel()
    if mode == "gradient":
        v = v + _grad_norm(grid, np.asarray(vals, float)).ravel() ** (2.0 * s / (2.0 * s + p - 1.0))
    dist = domain.distance(pts)
    inside = dist > 0
    if np.any(np.asarray(vals, float).ravel()[inside] < 0):
        raise SignViolation("decay certificates need u >= 0 on the domain")
    r = np.linalg.norm(pts, axis=1)
    case = "generic" if generic or domain.kind not in ("whole", "exterior", "punctured") else domain.kind
    if case == "whole":
        sel, m = inside, np.ones(len(pts))
    elif case == "exterior":
        sel, m = inside & (r >= 2.0 * domain.radius), r**e
    elif case == "punctured":
        sel, m = inside & (r > 0) & (r < 0.5 * domain.radius), r**e
    else:
        sel, m = inside, np.minimum(1.0, dist) ** e
    sel = sel & np.isfinite(v)
    if not sel.any():
        raise EmptyBall("no samples in the certificate region")
    w = np.where(sel, v * m, -np.inf)
    i = int(np.argmax(w))
    return DecayCertificate(domain, e, float(w[i]), pts[i], case)
