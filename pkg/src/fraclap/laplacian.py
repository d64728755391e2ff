"""Pointwise evaluation of the fractional Laplacian of a :class:`~fraclap.core.Field`.

The operator is computed in symmetric-difference form

    (-Lap)^s u(x) = C * int_{half sphere} int_0^inf (2u(x) - u(x+r t) - u(x-r t)) r^(-1-2s) dr dt

split into a Taylor-corrected inner ball ``r < r_min``, composite Gauss panels
on ``[r_min, R_eff]`` and a far-field tail computed from the exterior model.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from . import quadrature as qd
from .core import (
    Combination,
    Constant,
    Expression,
    Field,
    FracParams,
    KinkSet,
    Plane,
    QuadSpec,
    RadialPower,
    ShellTable,
    Zero,
)
from .errors import DomainError, MarginError, QuadratureNotConverged, ResampleError
from .kernels import normalization_constant, sphere_mean_power

MIN_MARGIN_CELLS = 2.0
GRADE_WIDTH = 1e-9
FAR_FACTOR = 2.0**7


@dataclass(frozen=True)
class Evaluation:
    value: float
    error: float

    def __float__(self):
        return float(self.value)


def worker_count():
    env = os.environ.get("FRACLAP_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


# --- far field --------------------------------------------------------------


def _radial_power_moment(model: RadialPower, x, R, s):
    n = len(x)
    d = float(np.linalg.norm(x - (np.zeros(n) if model.center is None else np.asarray(model.center))))
    if R <= d:
        raise DomainError("tail radius must exceed the distance to the power centre")
    g = model.exponent
    f = lambda r: sphere_mean_power(n, d, r, g) * r ** (-1.0 - 2.0 * s)  # noqa: E731
    val, _ = integrate.quad(f, R, math.inf, epsabs=0.0, epsrel=1e-12, limit=400)
    return model.coef * val


def _ray_moment(ext, x, R, s, quad, far=None, mean=None, beyond=True):
    """Numeric ``int_{|y|>R} ext(x+y) |y|^(-n-2s) dy`` along rays from ``x``.

    Integrates to ``far`` with capped panels; beyond ``far`` uses ``mean``
    analytically if given, otherwise a power-mapped infinite panel.
    """
    n = len(x)
    support = ext.support_radius(n)
    stop = far if far is not None else R * FAR_FACTOR
    if math.isfinite(support):
        stop = min(stop, float(np.linalg.norm(x)) + support)
    decay = 2.0 * s - ext.growth if math.isfinite(ext.growth) else 2.0 * s

    def moment(order):
        if n == 1:
            dirs, wdir = np.array([[1.0], [-1.0]]), np.array([1.0, 1.0])
        else:
            dirs, wdir = qd.sphere_rule(n, order if n == 2 else max(2, order // 2))
        kinks = ext.kinks(n)
        nodes, weights = [], []
        for i, theta in enumerate(dirs):
            if stop > R:
                hits = [t for k in kinks for t in k.hits(x, theta) if R < t < stop]
                edges = qd.graded_edges(R, stop, base=qd.dyadic_edges(R, stop), breaks=hits)
                edges = qd.cap_width(edges, max(quad.max_panel_width, 4.0 if mean is not None else 1.0))
                rho, wr = qd.panel_rule(edges, quad.gl_order)
            else:
                rho, wr = np.zeros(0), np.zeros(0)
            if beyond and not math.isfinite(support) and mean is None:
                r2, w2 = qd.infinite_rule(stop, decay, quad.gl_order)
                rho, wr = np.concatenate([rho, r2]), np.concatenate([wr, w2])
            nodes.append(x + rho[:, None] * theta)
            weights.append(wdir[i] * wr * rho ** (-1.0 - 2.0 * s))
        pts = np.concatenate(nodes) if nodes else np.zeros((0, n))
        total = float(np.sum(np.concatenate(weights) * ext.at(pts))) if len(pts) else 0.0
        if beyond and mean is not None and not math.isfinite(support):
            total += mean * qd.sphere_area(n) * stop ** (-2.0 * s) / (2.0 * s)
        return total

    if n == 1:
        return moment(1)
    m = quad.angular(n)
    prev = moment(m)
    while True:
        m *= 2
        cur = moment(m)
        if abs(cur - prev) <= quad.tol * max(abs(cur), 1e-300) or m >= quad.ang_max:
            return cur
        prev = cur


def exterior_moment(ext, x, R, s, quad=QuadSpec()):
    """``int_{|y| > R} ext(x + y) / |y|^(n+2s) dy`` for any exterior model."""
    x = np.asarray(x, float)
    n = len(x)
    if isinstance(ext, Zero):
        return 0.0
    if isinstance(ext, Constant):
        return ext.c * qd.sphere_area(n) * R ** (-2.0 * s) / (2.0 * s)
    if isinstance(ext, RadialPower):
        return 0.0 if ext.coef == 0 else _radial_power_moment(ext, x, R, s)
    if isinstance(ext, Combination):
        return sum(c * exterior_moment(m, x, R, s, quad) for c, m in ext.terms if c != 0)
    if isinstance(ext, ShellTable) and ext.tail_exp is not None:
        c = np.zeros(n) if ext.center is None else np.asarray(ext.center)
        # beyond R2 every point sees the power tail
        R2 = max(R, float(np.linalg.norm(x - c)) + ext.radii[-1]) * 1.0001
        body = ShellTable(ext.radii, ext.values, ext.center)
        near = _ray_moment(body, x, R, s, quad) if R2 > R else 0.0
        tail = RadialPower(ext.tail_coef, ext.tail_exp, ext.center)
        # tail part between R and R2 is the power model restricted to |y-c| > r_last
        mid = 0.0
        if R2 > R:
            mid = _ray_moment(_Restricted(tail, c, ext.radii[-1]), x, R, s, quad, far=R2, beyond=False)
        return near + mid + _radial_power_moment(tail, x, R2, s)
    if isinstance(ext, Expression) and ext.far_mean is not None:
        return _shell_moment(ext, x, R, s, quad)
    return _ray_moment(ext, x, R, s, quad)


def _shell_moment(ext, x, R, s, quad, arc=0.5, width=2.0):
    """Moment of an oscillating exterior by sphere means on radial shells.

    Each shell at radius ``rho`` gets a direction rule with spacing about
    ``arc`` along the sphere, so unit-scale oscillations stay resolved; beyond
    ``R_far`` the field is replaced by its declared far mean.
    """
    n = len(x)
    R_far = R * (8.0 if n < 3 else 2.0)
    edges = qd.cap_width(np.array([R, R_far]), width)
    rho, wr = qd.panel_rule(edges, quad.gl_order)
    kern = wr * rho ** (-1.0 - 2.0 * s)
    total = 0.0
    if n == 1:
        vals = ext.at(x + rho[:, None]) + ext.at(x - rho[:, None])
        total = float(np.dot(kern, vals))
    else:
        base = quad.angular(n)
        need = np.maximum(base, np.ceil(2.0 * np.pi * rho / arc)).astype(int)
        orders = 2 ** np.ceil(np.log2(need)).astype(int)
        for order in np.unique(orders):
            sel = orders == order
            dirs, wdir = qd.sphere_rule(n, order if n == 2 else max(2, order // 4))
            pts = x + (rho[sel][:, None, None] * dirs[None, :, :]).reshape(-1, n)
            vals = ext.at(pts).reshape(int(sel.sum()), len(dirs)) @ wdir
            total += float(np.dot(kern[sel], vals))
    return total + ext.far_mean * qd.sphere_area(n) * R_far ** (-2.0 * s) / (2.0 * s)


class _Restricted:
    """Power model cut to zero inside radius ``r0`` (helper for shell tails)."""

    def __init__(self, model, center, r0):
        self.model, self.center, self.r0 = model, center, r0
        self.growth = -math.inf

    def at(self, pts):
        out = self.model.at(pts)
        out[np.linalg.norm(pts - self.center, axis=1) <= self.r0] = 0.0
        return out

    def kinks(self, n):
        from .core import Sphere

        return (Sphere(tuple(self.center.tolist()), self.r0),)

    def support_radius(self, n):
        return math.inf


class _FieldView:
    """Exterior-model interface over a whole field (box samples included)."""

    def __init__(self, u: Field):
        self.u = u
        self.growth = u.growth

    def at(self, pts):
        return self.u.at(pts)

    def kinks(self, n):
        g = self.u.grid
        planes = tuple(Plane(k, float(v)) for k in range(n) for v in (g.lo[k], g.hi[k]))
        return tuple(self.u.kinks) + planes

    def support_radius(self, n):
        g = self.u.grid
        corner = float(np.linalg.norm(np.maximum(np.abs(g.lo), np.abs(g.hi))))
        return max(corner, self.u.exterior.support_radius(n))


def field_moment(u: Field, R: float, s: float, quad: QuadSpec = QuadSpec()) -> float:
    """``int_{|y| > R} u(y) / |y|^(n+2s) dy`` over the whole field."""
    n = u.n
    g = u.grid
    corner = float(np.linalg.norm(np.maximum(np.abs(g.lo), np.abs(g.hi))))
    if R >= corner:
        return exterior_moment(u.exterior, np.zeros(n), R, s, quad)
    return _ray_moment(_FieldView(u), np.zeros(n), R, s, quad)


def tail_contribution(u: Field, x, R, params: FracParams, quad: QuadSpec = QuadSpec()) -> float:
    """Part of the symmetric-difference integral with ``|y| > R``, from the exterior model."""
    x = np.asarray(x, float)
    s, n = params.s, params.n
    C = normalization_constant(params, quad)
    uc = float(u.at(x))
    ext = u.exterior
    area = qd.sphere_area(n) * R ** (-2.0 * s) / (2.0 * s)
    if isinstance(ext, Constant):
        return C * (uc - ext.c) * area
    return C * (uc * area - exterior_moment(ext, x, R, s, quad))


# --- main evaluation ---------------------------------------------------------


def _laplacian_fd(u: Field, x, steps):
    n = len(x)
    pts = [x]
    for d in range(n):
        e = np.zeros(n)
        e[d] = steps[d]
        pts.extend([x + e, x - e])
    v = u.at(np.array(pts))
    return sum((v[1 + 2 * d] + v[2 + 2 * d] - 2.0 * v[0]) / steps[d] ** 2 for d in range(n))


def _direction_edges(u: Field, x, theta, r_min, R_eff, exact, cap_in, cap_out, box_far, kinks):
    lo, hi = u.grid.lo, u.grid.hi
    own, outer = kinks
    tb = qd.ray_box(x, theta, lo, hi)
    breaks = [tb[1], -tb[0]] if tb is not None else []
    own_hits = np.abs(own.hits(x, theta)).tolist()
    singular = own_hits if exact else []
    if not exact:
        breaks += own_hits
    # exterior tables are piecewise smooth: plain breaks suffice
    breaks += np.abs(outer.hits(x, theta)).tolist()
    edges = qd.graded_edges(r_min, R_eff, base=qd.dyadic_edges(r_min, R_eff), singular=singular, breaks=breaks, min_width=GRADE_WIDTH)
    inner = edges[edges <= box_far]
    outer = edges[edges >= box_far]
    parts = [qd.cap_width(inner, cap_in)] if len(inner) > 1 else [inner]
    if len(outer) > 1:
        parts.append(qd.cap_width(outer, cap_out)[1:] if len(inner) else qd.cap_width(outer, cap_out))
    return np.unique(np.concatenate(parts))


def _ray_sums(u, x, uc, dirs, r_min, R_eff, s, order, exact, caps, box_far, kinks):
    """Per-direction radial integrals on the panel layout and on its bisection."""
    n = len(x)
    pts_all, w_all, w_coarse_idx, seg = [], [], [], []
    rule = []
    for theta in dirs:
        edges = _direction_edges(u, x, theta, r_min, R_eff, exact, caps[0], caps[1], box_far, kinks)
        rc, wc = qd.panel_rule(edges, order)
        rf, wf = qd.panel_rule(qd.bisect_edges(edges), order)
        rule.append((rc, wc, rf, wf))
    counts = []
    for theta, (rc, wc, rf, wf) in zip(dirs, rule):
        r = np.concatenate([rc, rf])
        pts_all.append(x + r[:, None] * theta)
        pts_all.append(x - r[:, None] * theta)
        counts.append(len(r))
    vals = u.at(np.concatenate(pts_all))
    G_coarse = np.empty(len(dirs))
    G_fine = np.empty(len(dirs))
    A_fine = np.empty(len(dirs))
    pos = 0
    for i, (rc, wc, rf, wf) in enumerate(rule):
        k = counts[i]
        plus = vals[pos : pos + k]
        minus = vals[pos + k : pos + 2 * k]
        pos += 2 * k
        diff = 2.0 * uc - plus - minus
        nc = len(rc)
        kern_c = wc * rc ** (-1.0 - 2.0 * s)
        kern_f = wf * rf ** (-1.0 - 2.0 * s)
        G_coarse[i] = np.dot(kern_c, diff[:nc])
        G_fine[i] = np.dot(kern_f, diff[nc:])
        A_fine[i] = np.dot(kern_f, np.abs(diff[nc:]))
    return G_coarse, G_fine, A_fine


def evaluate(u: Field, x, params: FracParams, quad: QuadSpec = QuadSpec(), strict: bool = True) -> Evaluation:
    """``(-Lap)^s u(x)`` with an error estimate.

    The estimate adds the change under panel bisection to the change under
    halving the angular rule. With ``strict`` a :class:`QuadratureNotConverged`
    is raised when the estimate exceeds ``quad.tol`` relative to the integral
    of the absolute integrand after the angular rule reached ``quad.ang_max``.
    """
    n, s = params.n, params.s
    x = np.asarray(x, float)
    if x.shape != (n,) or u.n != n:
        raise DomainError("point and field dimension must match params.n")
    g = u.grid
    if g.margin(x) < MIN_MARGIN_CELLS:
        raise MarginError(f"x={x.tolist()} is closer than {MIN_MARGIN_CELLS} cells to the grid boundary")
    C = normalization_constant(params, quad)
    exact = u.has_exact
    h = np.asarray(g.spacing)
    r_min = quad.r_min or (quad.R * 2.0**-quad.n_panels if exact else 0.5 * float(h.min()))
    corners = np.stack(np.meshgrid(*zip(g.lo, g.hi), indexing="ij"), axis=-1).reshape(-1, n)
    box_far = float(np.max(np.linalg.norm(corners - x, axis=1)))
    R_eff = max(quad.R, box_far * 1.0001)
    uc = float(u.at(x))

    steps = np.full(n, 1e-3) if exact else h
    lap = _laplacian_fd(u, x, steps)
    inner = -0.5 * C * lap * qd.sphere_area(n) / n * r_min ** (2.0 - 2.0 * s) / (2.0 - 2.0 * s)

    caps = (quad.max_panel_width if exact else min(quad.max_panel_width, float(h.min())), quad.max_panel_width)
    kinks = (KinkSet(u.own_kinks), KinkSet(u.exterior.kinks(n)))
    m = quad.angular(n)
    while True:
        dirs, w = qd.half_sphere_rule(n, m)
        Gc, Gf, Af = _ray_sums(u, x, uc, dirs, r_min, R_eff, s, quad.gl_order, exact, caps, box_far, kinks)
        I = C * float(np.dot(w, Gf))
        err_r = abs(I - C * float(np.dot(w, Gc)))
        if n == 1:
            err_a = 0.0
        elif n == 2:
            err_a = abs(I - C * float(np.dot(2.0 * w[::2], Gf[::2])))
        else:
            d2, w2 = qd.half_sphere_rule(n, max(2, m // 2))
            _, Gf2, _ = _ray_sums(u, x, uc, d2, r_min, R_eff, s, quad.gl_order, exact, caps, box_far, kinks)
            err_a = abs(I - C * float(np.dot(w2, Gf2)))
        err = err_r + err_a
        scale = max(abs(I), C * float(np.dot(w, Af)))
        if n == 1 or err <= quad.tol * scale or 2 * m > quad.ang_max:
            break
        m *= 2
    tail = tail_contribution(u, x, R_eff, params, quad)
    value = inner + I + tail
    if strict and err > quad.tol * scale:
        raise QuadratureNotConverged(f"fractional Laplacian at {x.tolist()} did not converge (error {err:.3g})", value, err)
    return Evaluation(value, err)


def evaluate_many(u: Field, xs, params: FracParams, quad: QuadSpec = QuadSpec(), strict: bool = True):
    """Evaluate at every row of ``xs``; results keep input order whatever the thread count."""
    xs = np.atleast_2d(np.asarray(xs, float))
    workers = min(worker_count(), len(xs))
    if workers <= 1:
        return [evaluate(u, x, params, quad, strict) for x in xs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda x: evaluate(u, x, params, quad, strict), xs))


def rescale_field(u: Field, lam: float, a) -> Field:
    """The field ``x -> u(lam * x + a)``; an exact pullback of samples and exterior model."""
    a = np.asarray(a, float)
    if not (math.isfinite(lam) and lam > 0.0) or a.shape != (u.n,) or not np.all(np.isfinite(a)):
        raise ResampleError("rescaling needs lam > 0 and a finite shift of matching dimension")
    h = np.asarray(u.grid.spacing) / lam
    lo = (u.grid.lo - a) / lam
    if not (np.all(np.isfinite(h)) and np.all(h > 1e-290) and np.all(np.isfinite(lo)) and np.all(h < 1e290)):
        raise ResampleError(f"rescaled grid with lam={lam} is not representable")
    return u.pullback(lam, a)
