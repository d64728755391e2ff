"""Riesz potential of a density on the unit ball, its gradient, the ball
Poisson extension of exterior data and the splitting ``u = h + w``.

All integrals run along rays in polar coordinates with composite 15-point
Kronrod panels, so each result comes with an embedded error estimate.
Weakly singular radial factors are removed by power substitutions:

* potential: ``t = rho**(2s)`` turns ``rho**(2s-1) drho`` into ``dt / 2s``;
* Poisson extension: ``t = 1 + sigma**(1/(1-s))`` on the panel touching the
  unit sphere absorbs ``(t - 1)**(-s)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline

from . import quadrature as qd
from .core import Combination, Constant, ExteriorModel, Field, FracParams, Grid, Plane, QuadSpec, RadialPower, ShellTable, Sphere, Zero
from .errors import DomainError, QuadratureNotConverged, RegularityPrecondition
from .kernels import poisson_constant, riesz_constant, sphere_mean_power

DYADIC_LEVELS = 40
ANGLE_GRADE = 1e-7
TANGENT_GRADE = 1e-5  # square-root grazing singularities need far less grading
MAX_PANEL_DOUBLINGS = 3
SHARED_GAP = 0.15
POINT_GRADE = 1e-4  # smallest graded panel beside a point kink


# --- ray plumbing -----------------------------------------------------------


def _unit(x):
    r = float(np.linalg.norm(x))
    return (x / r if r > 0 else np.eye(len(x))[0]), r


def _chords(x, dirs):
    """Parameters ``(lo, hi)`` of ``x + rho*theta`` inside the unit ball, ``lo >= 0``."""
    b = dirs @ x
    c = float(x @ x) - 1.0
    disc = np.maximum(b * b - c, 0.0)
    sq = np.sqrt(disc)
    hi = -b + sq
    lo = np.maximum(-b - sq, 0.0)
    return lo, np.maximum(hi, lo)


def _kink_hits(kinks, origin, dirs):
    """Ray parameters of every kink crossing, one array per direction."""
    hits = [[] for _ in range(len(dirs))]
    for k in kinks:
        if isinstance(k, Sphere):
            d = origin - np.asarray(k.center, float)
            b = dirs @ d
            if k.radius == 0.0:
                # a point kink: break each ray at its closest approach and grade
                # geometrically from the miss distance, where the profile bends
                miss = np.sqrt(np.maximum(float(d @ d) - b * b, 0.0))
                for i, t in enumerate(-b):
                    hits[i].append(t)
                    step = max(miss[i], POINT_GRADE)
                    while step < 0.5:
                        hits[i].extend((t - step, t + step))
                        step *= 2.0
                continue
            disc = b * b - (float(d @ d) - k.radius**2)
            ok = disc > 0
            sq = np.sqrt(np.where(ok, disc, 0.0))
            for t in (-b - sq, -b + sq):
                for i in np.nonzero(ok)[0]:
                    hits[i].append(t[i])
        elif isinstance(k, Plane):
            comp = dirs[:, k.axis]
            ok = comp != 0
            t = (k.offset - origin[k.axis]) / np.where(ok, comp, 1.0)
            for i in np.nonzero(ok)[0]:
                hits[i].append(t[i])
    return hits


def _row_groups(base, hits, lo, hi):
    """Group directions by the number of kink hits strictly inside ``(lo, hi)``.

    Yields ``(indices, edges)`` with the hits merged into each row of ``base``.
    """
    inner = []
    for i, hs in enumerate(hits):
        span = hi[i] - lo[i]
        eps = 1e-12 * max(span, 1e-300)
        inner.append(sorted({h for h in hs if lo[i] + eps < h < hi[i] - eps}))
    counts = np.array([len(h) for h in inner], dtype=int)
    for c in np.unique(counts):
        idx = np.nonzero(counts == c)[0]
        if c == 0:
            yield idx, base[idx]
        else:
            extra = np.array([inner[i] for i in idx])
            yield idx, np.sort(np.concatenate([base[idx], extra], axis=1), axis=1)


def _kronrod_rows(edges):
    """Row-wise composite Kronrod nodes and both weight sets for ``(m, E)`` edges."""
    x, wk, wg = qd.kronrod15()
    a, b = edges[:, :-1], edges[:, 1:]
    half = 0.5 * (b - a)
    mid = a + half
    nodes = (mid[..., None] + half[..., None] * x).reshape(len(edges), -1)
    Wk = (half[..., None] * wk).reshape(len(edges), -1)
    Wg = (half[..., None] * wg).reshape(len(edges), -1)
    return nodes, Wk, Wg


def _ray_integrals(x, dirs, lo, hi, frac, kappa, integrand, kinks):
    """``int_lo^hi integrand(points, rho) drho`` per direction, computed in ``t = rho**kappa``.

    ``integrand`` must already include the Jacobian ``drho/dt``; ``frac`` are
    panel edges in ``[0, 1]`` as fractions of the chord. Returns the Kronrod
    values and their Gauss differences.
    """
    D = len(dirs)
    G = np.zeros(D)
    E = np.zeros(D)
    live = hi > lo * (1.0 + 1e-14) + 1e-300
    if not np.any(live):
        return G, E
    li = np.nonzero(live)[0]
    base = lo[li, None] + (hi - lo)[li, None] * frac[None, :]
    hits = _kink_hits(kinks, x, dirs[li]) if kinks else [[] for _ in li]
    for idx, edges_rho in _row_groups(base, hits, lo[li], hi[li]):
        rows = li[idx]
        t_edges = edges_rho**kappa
        t, Wk, Wg = _kronrod_rows(t_edges)
        rho = t ** (1.0 / kappa)
        pts = x + rho[..., None] * dirs[rows][:, None, :]
        vals = integrand(pts.reshape(-1, len(x)), rho.ravel()).reshape(rho.shape)
        G[rows] = np.sum(Wk * vals, axis=1)
        E[rows] = np.abs(np.sum((Wk - Wg) * vals, axis=1))
    return G, E


def _inside_fractions(kappa, cap_panels=0):
    """Chord fractions: dyadic in ``t`` toward the start, optional uniform panels in ``rho``."""
    frac = [0.0, 1.0]
    frac.extend((2.0 ** -np.arange(1, DYADIC_LEVELS + 1)) ** (1.0 / kappa))
    if cap_panels > 1:
        frac.extend(np.linspace(0.0, 1.0, cap_panels + 1))
    return np.unique(np.asarray(frac))


def _chord_fractions(panels):
    return np.linspace(0.0, 1.0, panels + 1)


# --- angular rules ----------------------------------------------------------


def _angle(v):
    return math.atan2(v[1], v[0])


def _circle_features(x, kinks):
    """Break and singular angles seen from an interior point ``x`` (n = 2)."""
    breaks, singular = [], []
    for k in kinks:
        if isinstance(k, Plane):
            a = 0.5 * math.pi if k.axis == 0 else 0.0
            singular.extend([a, a + math.pi])
            if abs(k.offset) < 1.0:
                other = math.sqrt(1.0 - k.offset**2)
                for sgn in (-1.0, 1.0):
                    p = np.zeros(2)
                    p[k.axis], p[1 - k.axis] = k.offset, sgn * other
                    if np.linalg.norm(p - x) > 0:
                        # the hit distance d/cos blows up beside this angle: grade, not just break
                        breaks.append(_angle(p - x))
                        singular.append(_angle(p - x))
        elif isinstance(k, Sphere):
            c = np.asarray(k.center, float)
            d = float(np.linalg.norm(c))
            if d == 0.0 and abs(k.radius - 1.0) < 1e-14:
                continue
            v = c - x
            dist = float(np.linalg.norm(v))
            if dist > k.radius:
                half = math.asin(k.radius / dist)
                singular.extend([_angle(v) - half, _angle(v) + half])
            # intersection with the unit circle
            if d > 0 and abs(1.0 - k.radius) < d < 1.0 + k.radius:
                a = (1.0 - k.radius**2 + d * d) / (2.0 * d)
                hgt = math.sqrt(max(1.0 - a * a, 0.0))
                e = c / d
                perp = np.array([-e[1], e[0]])
                for sgn in (-1.0, 1.0):
                    p = a * e + sgn * hgt * perp
                    if np.linalg.norm(p - x) > 0:
                        breaks.append(_angle(p - x))
    return breaks, singular


def _interior_directions(n, x, kinks, panels, azimuth):
    """Full-sphere direction rule for a point inside the unit ball."""
    xhat, r = _unit(x)
    width = max(0.5 * (1.0 - r), 1e-13)
    near = r > 0.5
    if n == 1:
        return qd.point_directions()
    if n == 2:
        breaks, singular = _circle_features(x, kinks)
        if r > 0.9:
            # chords change on a sqrt(1 - r) scale around the tangent directions
            singular = singular + [_angle(xhat) + 0.5 * math.pi, _angle(xhat) - 0.5 * math.pi]
        return qd.circle_directions(
            panels=panels,
            breaks=breaks,
            singular=singular,
            cluster=_angle(xhat) if near else None,
            cluster_width=width if near else None,
            min_width=ANGLE_GRADE,
        )
    return qd.sphere_directions(axis=xhat, panels=panels, azimuth=azimuth, cluster_width=width if near else None)


def _cone_directions(n, x, panels, azimuth):
    """Directions from an exterior point ``x`` that meet the unit ball.

    The polar angle about ``-x/|x|`` is ``psi = psi_max*(1-(1-tau)**2)`` so the
    square-root closure of the chord at the cone edge becomes smooth.
    """
    xhat, r = _unit(x)
    axis = -xhat
    if n == 1:
        return qd.DirectionRule(axis[None, :], np.ones(1), ())
    psi_max = math.asin(min(1.0, 1.0 / r))
    tau, wk, wg = qd.kronrod_rule(np.linspace(0.0, 1.0, panels + 1))
    psi = psi_max * (1.0 - (1.0 - tau) ** 2)
    jac = psi_max * 2.0 * (1.0 - tau)
    if n == 2:
        perp = np.array([-axis[1], axis[0]])
        dirs, w, alt = [], [], []
        for sgn in (-1.0, 1.0):
            dirs.append(np.cos(psi)[:, None] * axis + sgn * np.sin(psi)[:, None] * perp)
            w.append(wk * jac)
            alt.append(wg * jac)
        return qd.DirectionRule(np.concatenate(dirs), np.concatenate(w), (np.concatenate(alt),))
    m = int(azimuth) + int(azimuth) % 2
    phi = 2.0 * np.pi * (np.arange(m) + 0.5) / m
    e1, e2 = qd.orthonormal_complement(axis)
    ring = np.cos(phi)[None, :, None] * e1 + np.sin(phi)[None, :, None] * e2
    dirs = (np.cos(psi)[:, None, None] * axis + np.sin(psi)[:, None, None] * ring).reshape(-1, 3)
    sp = np.sin(psi) * jac
    waz = np.full(m, 2.0 * np.pi / m)
    half = np.zeros(m)
    half[::2] = 4.0 * np.pi / m
    w = np.outer(wk * sp, waz).ravel()
    return qd.DirectionRule(dirs, w, (np.outer(wg * sp, waz).ravel(), np.outer(wk * sp, half).ravel()))


def _origin_tangents(kinks, n):
    """Directions from the origin grazing off-centre kink spheres.

    Returns the tangent angles (plus the centre angles) for n = 2. For n = 3 returns ``(axis, polar
    angles)`` when all such spheres share one centre, else ``None``.
    """
    angles, centres, polar = [], set(), []
    for k in kinks:
        if not isinstance(k, Sphere):
            continue
        c = np.asarray(k.center, float)
        d = float(np.linalg.norm(c))
        if d <= k.radius:
            continue
        if n == 2 and _angle(c) not in angles:
            # the ray through a centre crosses a cone point of radial data
            angles.append(_angle(c))
        if k.radius == 0.0:
            continue
        half = math.asin(k.radius / d)
        if n == 2:
            angles.extend([_angle(c) - half, _angle(c) + half])
        else:
            centres.add(tuple(c.tolist()))
            polar.append(half)
    if n == 2:
        return angles
    if len(centres) == 1:
        c = np.asarray(next(iter(centres)))
        return c / np.linalg.norm(c), polar
    return None


def _surface_rule(n, x, panels, azimuth, kinks=()):
    """Rule on the unit sphere clustered toward ``x/|x|``; shared by the boundary and Poisson terms.

    Directions grazing off-centre kink spheres of the data get graded panels.
    """
    xhat, r = _unit(x)
    near = r > 0.5
    width = max(0.25 * (1.0 - r), 1e-7)
    if n == 1:
        return qd.point_directions()
    tangents = _origin_tangents(kinks, n)
    if n == 2:
        return qd.circle_directions(
            panels=panels,
            singular=tangents,
            cluster=_angle(xhat) if near else None,
            cluster_width=width if near else None,
            min_width=ANGLE_GRADE,
        )
    if tangents and not near:
        axis, polar = tangents
        return qd.sphere_directions(axis=axis, panels=panels, azimuth=azimuth, psi_singular=polar, min_width=ANGLE_GRADE)
    return qd.sphere_directions(axis=xhat, panels=panels, azimuth=azimuth, cluster_width=width if near else None)


def _angular_budget(n, quad, level):
    return 8 * 2**level, 2 * quad.angular(3) * 2**level


def _converged(val, err, scale, tol):
    return err <= tol * max(abs(val), scale) or err <= 1e-15 * max(scale, 1.0)


def _f_kinks(f):
    n = f.n
    return tuple(k for k in f.kinks if not (isinstance(k, Sphere) and abs(k.radius - 1.0) < 1e-14 and not np.any(k.center)))


def _cap_panels(f, chord):
    """Uniform panels needed so that no panel exceeds one grid cell of an interpolated field."""
    if f.has_exact:
        return 0
    h = min(f.grid.spacing)
    return int(math.ceil(chord / h))


# --- Riesz potential ----------------------------------------------------------


@dataclass(frozen=True)
class PotentialValue:
    value: float
    error: float

    def __float__(self):
        return float(self.value)


def potential_bound(params: FracParams, sup_f: float = 1.0) -> float:
    """Uniform bound ``|w| <= A*|S|/(2s) * sup|f|`` (the ball centred at ``x`` maximises the kernel mass)."""
    A = riesz_constant(params)
    return A * qd.sphere_area(params.n) / (2.0 * params.s) * abs(sup_f)


def potential_w(f: Field, x, params: FracParams, quad: QuadSpec = QuadSpec(), strict: bool = True) -> PotentialValue:
    """``A * int_{B_1} f(y) |x - y|^(2s-n) dy`` with the calibrated Riesz constant ``A``."""
    A = riesz_constant(params)
    x = np.asarray(x, float)
    n, s = params.n, params.s
    kappa = 2.0 * s
    _, r = _unit(x)
    kinks = _f_kinks(f)

    def integrand(pts, rho):
        return f.at(pts) / kappa

    val = err = scale = 0.0
    for level in range(MAX_PANEL_DOUBLINGS + 1):
        panels, azimuth = _angular_budget(n, quad, level)
        if r < 1.0:
            rule = _interior_directions(n, x, kinks, panels, azimuth)
            lo, hi = _chords(x, rule.dirs)
            frac = _inside_fractions(kappa, _cap_panels(f, 2.0))
        else:
            rule = _cone_directions(n, x, panels, azimuth)
            lo, hi = _chords(x, rule.dirs)
            frac = _chord_fractions(4 + _cap_panels(f, 2.0))
        G, Gerr = _ray_integrals(x, rule.dirs, lo, hi, frac, kappa, integrand, kinks)
        val, ang_err = rule.integrate(G)
        err = ang_err + float(np.dot(rule.w, Gerr))
        scale = float(np.dot(rule.w, np.abs(G)))
        if _converged(val, err, scale, quad.tol):
            return PotentialValue(A * val, A * err)
    if strict:
        raise QuadratureNotConverged("potential quadrature did not reach tolerance", A * val, A * err)
    return PotentialValue(A * val, A * err)


def _gradient_exponent_ok(s, holder):
    if 2.0 * s > 1.0:
        return True
    if holder is None:
        return False
    edge = 2.0 * s + holder - 1.0
    if abs(edge) <= 1e-12:
        raise RegularityPrecondition("2s + alpha = 1 is the untreated borderline; refusing to guess")
    return edge > 0


def potential_gradient(f: Field, x, params: FracParams, quad: QuadSpec = QuadSpec(), strict: bool = True) -> np.ndarray:
    """Gradient of :func:`potential_w` as a volume term with the ``f(y) - f(x)`` cancellation plus a
    single-layer term on the unit sphere::

        grad w(x) = A (n-2s) int_{B_1} (f(y) - f(x)) (y - x) |y - x|^(2s-n-2) dy
                    - A f(x) int_{|y|=1} |x - y|^(2s-n) y dS_y
    """
    params.require_riesz()
    n, s = params.n, params.s
    if not _gradient_exponent_ok(s, f.holder):
        raise RegularityPrecondition("gradient formula needs 2s > 1, or a Hölder tag alpha with 2s + alpha > 1")
    x = np.asarray(x, float)
    _, r = _unit(x)
    if r >= 1.0:
        raise DomainError("gradient formula needs |x| < 1")
    A = riesz_constant(params)
    fx = float(f.at(x[None, :])[0])
    kappa = 2.0 * s - 1.0 if 2.0 * s > 1.0 else 2.0 * s
    kinks = _f_kinks(f)

    def integrand(pts, rho):
        # (f(y) - f(x)) rho^(2s-2) drho = (f(y) - f(x)) rho^(2s-1-kappa) dt / kappa
        return (f.at(pts) - fx) * rho ** (2.0 * s - 1.0 - kappa) / kappa

    for level in range(MAX_PANEL_DOUBLINGS + 1):
        panels, azimuth = _angular_budget(n, quad, level)
        rule = _interior_directions(n, x, kinks, panels, azimuth)
        lo, hi = _chords(x, rule.dirs)
        frac = _inside_fractions(kappa, _cap_panels(f, 2.0))
        G, Gerr = _ray_integrals(x, rule.dirs, lo, hi, frac, kappa, integrand, kinks)
        vol = np.empty(n)
        err = np.zeros(n)
        for i in range(n):
            vol[i], err[i] = rule.integrate(G * rule.dirs[:, i])
        err += float(np.dot(rule.w, Gerr))
        vol *= n - 2.0 * s
        err *= n - 2.0 * s
        scale = (n - 2.0 * s) * float(np.dot(rule.w, np.abs(G)))

        surf = _surface_rule(n, x, panels, azimuth)
        y = surf.dirs
        kern = np.sum((x - y) ** 2, axis=1) ** (s - 0.5 * n)
        bnd = np.empty(n)
        berr = np.zeros(n)
        for i in range(n):
            bnd[i], berr[i] = surf.integrate(kern * y[:, i])
        bnd *= -fx
        berr *= abs(fx)
        total = vol + bnd
        total_err = err + berr
        scale += abs(fx) * float(np.dot(surf.w, kern))
        if all(_converged(total[i], total_err[i], scale, quad.tol) for i in range(n)):
            break
    else:
        if strict:
            raise QuadratureNotConverged("gradient quadrature did not reach tolerance", A * total, A * total_err)
    return A * total


# --- Poisson extension --------------------------------------------------------


def _data_view(g, n):
    """``(evaluator, kinks, support radius, growth)`` for exterior data given as a field or a model."""
    if isinstance(g, Field):
        box_far = float(np.max(np.linalg.norm(np.array(np.meshgrid(*zip(g.grid.lo, g.grid.hi))).reshape(n, -1).T, axis=1)))
        support = max(box_far, g.exterior.support_radius(n))
        kinks = tuple(g.kinks) + tuple(Plane(k, float(v)) for k in range(n) for v in (g.grid.lo[k], g.grid.hi[k]))
        return g.at, kinks, support, g.exterior.growth
    if isinstance(g, ExteriorModel):
        return g.at, tuple(g.kinks(n)), g.support_radius(n), g.growth
    raise TypeError("exterior data must be a Field or an ExteriorModel")


def _inner_radius(g, n):
    """Radius inside which the data vanishes identically (0 when unknown)."""
    if isinstance(g, Zero):
        return math.inf
    if isinstance(g, ShellTable):
        c = 0.0 if g.center is None else float(np.linalg.norm(g.center))
        if g.growth == -math.inf and c >= g.radii[-1]:
            return c - g.radii[-1]
        return max(0.0, g.radii[0] - c)
    if isinstance(g, Combination):
        return min((_inner_radius(m, n) for c, m in g.terms if c != 0), default=math.inf)
    return 0.0


def _tail_rule(T, decay):
    """Kronrod rule on ``[T, inf)`` in ``v`` with ``t = T v**(-1/decay)``, graded toward ``v = 0``."""
    edges = np.concatenate([[0.0], 2.0 ** -np.arange(12, -1, -1)])
    v, wk, wg = qd.kronrod_rule(edges)
    t = T * v ** (-1.0 / decay)
    jac = (T / decay) * v ** (-1.0 / decay - 1.0)
    return t, wk * jac, wg * jac


def _poisson_rows(edges, s):
    """Nodes and weights approximating ``(t - 1)**(-s) dt`` on each row of ``edges``.

    The first panel of each row starts at ``t = 1`` and uses
    ``t = 1 + sigma**(1/(1-s))``; the rest are plain Kronrod panels.
    """
    m = len(edges)
    e1 = edges[:, 1]
    sig_hi = (e1 - 1.0) ** (1.0 - s)
    sig, Sk, Sg = _kronrod_rows(np.stack([np.zeros(m), sig_hi], axis=1))
    t0 = 1.0 + sig ** (1.0 / (1.0 - s))
    W0k, W0g = Sk / (1.0 - s), Sg / (1.0 - s)
    t1, Wk, Wg = _kronrod_rows(edges[:, 1:])
    fac = (t1 - 1.0) ** (-s)
    return (np.concatenate([t0, t1], axis=1), np.concatenate([W0k, Wk * fac], axis=1), np.concatenate([W0g, Wg * fac], axis=1))


def _poisson_radial(n, s, x, dirs, data, kinks, support, growth, t_start=1.0):
    """Per-direction radial Poisson integrals ``int g(t th) (t^2-1)^-s |x - t th|^-n t^(n-1) dt``."""
    _, r = _unit(x)
    D = len(dirs)
    delta = min(1.0, 1.0 - r) / 16.0
    T = support if math.isfinite(support) else max(16.0, 2.0 * max((getattr(k, "radius", 0.0) + float(np.linalg.norm(getattr(k, "center", 0.0))) for k in kinks), default=0.0))
    near = [1.0 + delta * 2.0**k for k in range(64) if delta * 2.0**k < 1.0]
    far = list(2.0 ** np.arange(1, max(2, int(math.ceil(math.log2(max(T, 2.0)))) + 1)))
    base = np.unique(np.clip(np.asarray([1.0] + near + far + [T]), 1.0, T))
    base = base[base >= t_start]
    if base[0] > t_start:
        base = np.concatenate([[t_start], base])
    rows = np.broadcast_to(base, (D, len(base))).copy()
    hits = _kink_hits(kinks, np.zeros(n), dirs)
    lo = np.full(D, t_start)
    hi = np.full(D, T)
    G = np.zeros(D)
    E = np.zeros(D)

    def kernel(t, th_rows):
        y = t[..., None] * th_rows[:, None, :]
        dist = np.sum((x - y) ** 2, axis=-1) ** (-0.5 * n)
        return y, dist * t ** (n - 1) * (t + 1.0) ** (-s)

    for idx, edges in _row_groups(rows, hits, lo, hi):
        if t_start == 1.0:
            t, Wk, Wg = _poisson_rows(edges, s)
        else:
            t, Wk, Wg = _kronrod_rows(edges)
            fac = (t - 1.0) ** (-s)
            Wk, Wg = Wk * fac, Wg * fac
        y, kern = kernel(t, dirs[idx])
        vals = data(y.reshape(-1, n)).reshape(t.shape) * kern
        G[idx] = np.sum(Wk * vals, axis=1)
        E[idx] = np.abs(np.sum((Wk - Wg) * vals, axis=1))
    if not math.isfinite(support):
        decay = 2.0 * s - (growth if math.isfinite(growth) else 0.0)
        t, wk, wg = _tail_rule(T, decay)
        fac = (t - 1.0) ** (-s)
        y, kern = kernel(np.broadcast_to(t, (D, len(t))), dirs)
        vals = data(y.reshape(-1, n)).reshape(D, len(t)) * kern
        G += vals @ (wk * fac)
        E += np.abs(vals @ ((wk - wg) * fac))
    return G, E


def poisson_extend(g, x, params: FracParams, quad: QuadSpec = QuadSpec(), strict: bool = True) -> float:
    """Value at ``x`` in the unit ball of the s-harmonic function with exterior data ``g``.

    ``g`` is a :class:`Field` (its values outside the ball are used) or an
    :class:`ExteriorModel`.
    """
    x = np.asarray(x, float)
    n, s = params.n, params.s
    _, r = _unit(x)
    if r >= 1.0:
        raise DomainError("Poisson extension needs |x| < 1")
    data, kinks, support, growth = _data_view(g, n)
    if math.isfinite(growth) and not growth < 2.0 * s:
        raise DomainError(f"data growth {growth} is not below 2s")
    if support <= 1.0:
        return 0.0  # nothing outside the ball
    c = poisson_constant(params) * (1.0 - r * r) ** s
    for level in range(MAX_PANEL_DOUBLINGS + 1):
        panels, azimuth = _angular_budget(n, quad, level)
        rule = _surface_rule(n, x, panels, azimuth, kinks)
        G, Gerr = _poisson_radial(n, s, x, rule.dirs, data, kinks, support, growth)
        val, aerr = rule.integrate(G)
        err = aerr + float(np.dot(rule.w, Gerr))
        scale = float(np.dot(rule.w, np.abs(G)))
        if _converged(val, err, scale, quad.tol):
            return c * val
    if strict:
        raise QuadratureNotConverged("Poisson quadrature did not reach tolerance", c * val, c * err)
    return c * val


def _shared_rule(g, n, s, quad):
    """One node set ``y`` with three weight variants, valid for every ``|x| < 1`` when the data
    vanish on ``|y| < 1 + SHARED_GAP``."""
    data, kinks, support, growth = _data_view(g, n)
    r_in = _inner_radius(g, n)
    if n == 1:
        rule = qd.point_directions()
    elif n == 2:
        rule = qd.circle_directions(panels=24, singular=_origin_tangents(kinks, n), min_width=TANGENT_GRADE)
    else:
        tangents = _origin_tangents(kinks, n)
        if tangents:
            rule = qd.sphere_directions(axis=tangents[0], panels=16, azimuth=64, psi_singular=tangents[1], min_width=TANGENT_GRADE)
        else:
            rule = qd.sphere_directions(panels=16, azimuth=64)
    dirs = rule.dirs
    D = len(dirs)
    T = support if math.isfinite(support) else max(16.0, 4.0 * r_in)
    base = np.unique(np.concatenate([[r_in], r_in * 2.0 ** np.arange(1, 12), [T]]))
    base = base[(base >= r_in) & (base <= T)]
    base = qd.cap_width(base, 0.25)
    rows = np.broadcast_to(base, (D, len(base))).copy()
    hits = _kink_hits(kinks, np.zeros(n), dirs)
    ys, wts = [], []
    alt_rad, alt_ang = [], []
    for idx, edges in _row_groups(rows, hits, np.full(D, r_in), np.full(D, T)):
        t, Wk, Wg = _kronrod_rows(edges)
        ys.append((t[..., None] * dirs[idx][:, None, :]).reshape(-1, n))
        fac = (t * t - 1.0) ** (-s) * t ** (n - 1)
        wd = rule.w[idx][:, None]
        wa = (rule.alts[-1][idx][:, None]) if rule.alts else wd
        wts.append((wd * Wk * fac).ravel())
        alt_rad.append((wd * Wg * fac).ravel())
        alt_ang.append((wa * Wk * fac).ravel())
    if not math.isfinite(support):
        decay = 2.0 * s - (growth if math.isfinite(growth) else 0.0)
        t, wk, wg = _tail_rule(T, decay)
        fac = (t * t - 1.0) ** (-s) * t ** (n - 1)
        ys.append((t[None, :, None] * dirs[:, None, :]).reshape(-1, n))
        wa = rule.alts[-1] if rule.alts else rule.w
        wts.append(np.outer(rule.w, wk * fac).ravel())
        alt_rad.append(np.outer(rule.w, wg * fac).ravel())
        alt_ang.append(np.outer(wa, wk * fac).ravel())
    y = np.concatenate(ys)
    gy = data(y)
    W = np.stack([np.concatenate(wts), np.concatenate(alt_rad), np.concatenate(alt_ang)]) * gy
    keep = np.any(W != 0.0, axis=0)
    return y[keep], W[:, keep]


def poisson_extend_many(g, xs, params: FracParams, quad: QuadSpec = QuadSpec(), strict: bool = True) -> np.ndarray:
    """Vectorized :func:`poisson_extend` over points ``xs``; shares one node set when the data
    vanish near the unit sphere."""
    xs = np.atleast_2d(np.asarray(xs, float))
    n, s = params.n, params.s
    if len(xs) == 0:
        return np.zeros(0)
    r = np.linalg.norm(xs, axis=1)
    if np.any(r >= 1.0):
        raise DomainError("Poisson extension needs |x| < 1")
    if isinstance(g, ExteriorModel) and _inner_radius(g, n) >= 1.0 + SHARED_GAP:
        y, W = _shared_rule(g, n, s, quad)
        out = np.empty(len(xs))
        cst = poisson_constant(params)
        chunk = max(1, 4_000_000 // max(len(y), 1))
        for i in range(0, len(xs), chunk):
            xb = xs[i : i + chunk]
            d2 = np.sum(xb * xb, axis=1)[:, None] - 2.0 * xb @ y.T + np.sum(y * y, axis=1)[None, :]
            K = d2 ** (-0.5 * n)
            vals = K @ W.T
            c = cst * (1.0 - np.sum(xb * xb, axis=1)) ** s
            res = vals[:, 0]
            err = np.max(np.abs(vals[:, 1:] - res[:, None]), axis=1)
            scale = K @ np.abs(W[0])
            bad = ~(err <= quad.tol * np.maximum(np.abs(res), scale) + 1e-300)
            if strict and np.any(bad):
                j = int(np.argmax(bad))
                raise QuadratureNotConverged("shared Poisson rule did not reach tolerance", c[j] * res[j], c[j] * err[j])
            out[i : i + chunk] = c * res
        return out
    return np.array([poisson_extend(g, x, params, quad, strict) for x in xs])


# --- radial profiles and whole fields ----------------------------------------


class RadialProfile:
    """C^2 cubic-spline interpolant of a radial function with a boundary layer at ``r = 1``.

    Inside the ball the spline variable is ``-log(1 - r**2)``, which is even
    at the origin; outside it is ``log(r - 1)``. Both resolve power behaviour
    like ``|1 - r|**s`` uniformly across scales.
    """

    PER_OCTAVE = 16
    OCTAVES = 36  # deeper layers hit the rounding floor of t - 1 near the sphere

    def __init__(self, func, r_max: Optional[float] = None):
        step = math.log(2.0) / self.PER_OCTAVE
        ell = step * np.arange(0, self.PER_OCTAVE * self.OCTAVES + 1)
        r_in = np.sqrt(-np.expm1(-ell))
        self.gap_min = float(np.exp(-ell[-1]))
        self.r_max = r_max
        nodes = [r_in, [1.0]]
        if r_max is not None:
            top = math.log(r_max - 1.0)
            m = np.arange(math.log(self.gap_min), top + 1e-12, step)
            nodes.append(1.0 + np.exp(m))
        r = np.concatenate([np.asarray(a, float) for a in nodes])
        v = np.asarray(func(r), float)
        self.nodes, self.samples = r, v
        k = len(r_in)
        self._inside = CubicSpline(ell, v[:k])
        self.at_one = float(v[k])
        if r_max is not None:
            self._outside = CubicSpline(m, v[k + 1 :])
            self.last_r = float(r[-1])
            self.last_v = float(v[-1])

    def __call__(self, r):
        r = np.asarray(r, float)
        out = np.full(r.shape, self.at_one)
        a = r < 1.0 - self.gap_min
        out[a] = self._inside(-np.log1p(-r[a] * r[a]))
        b = r > 1.0 + self.gap_min
        if self.r_max is None:
            out[b] = np.nan
        else:
            out[b] = self._outside(np.log(np.minimum(r[b], self.last_r) - 1.0))
        return out


def _is_radial_model(g, n):
    if isinstance(g, (Zero, Constant)):
        return True
    if isinstance(g, (ShellTable, RadialPower)):
        return g.center is None or not np.any(g.center)
    if isinstance(g, Combination):
        return all(_is_radial_model(m, n) for _, m in g.terms)
    return False


class _ProfileField:
    """Callable ``pts -> profile(|pts|)`` inside the ball, data outside."""

    def __init__(self, profile, outside=None):
        self.profile, self.outside = profile, outside

    def __call__(self, pts):
        pts = np.asarray(pts, float)
        r = np.linalg.norm(pts, axis=1)
        out = self.profile(r)
        if self.outside is not None:
            far = r >= 1.0
            if np.any(far):
                out[far] = self.outside(pts[far])
        return out


def extension_field(g, grid: Grid, params: FracParams, quad: QuadSpec = QuadSpec()) -> Field:
    """Field equal to the Poisson extension of ``g`` in the unit ball and to ``g`` outside."""
    n = params.n
    data, kinks, _, _ = _data_view(g, n)
    model = g if isinstance(g, ExteriorModel) else g.exterior
    unit = Sphere(tuple([0.0] * n), 1.0)
    nonneg = model.nonneg() if isinstance(g, ExteriorModel) else (g.nonneg and g.exterior.nonneg())
    if _is_radial_model(g, n) if isinstance(g, ExteriorModel) else g.radial:
        e1 = np.eye(n)[0]

        def radial_values(r):
            out = np.empty(len(r))
            inside = r < 1.0
            out[inside] = poisson_extend_many(g, r[inside, None] * e1, params, quad)
            out[~inside] = data(r[~inside, None] * e1)
            return out

        exact = _ProfileField(RadialProfile(radial_values), data)
        values = exact(grid.points()).reshape(grid.shape)
        return Field(grid, values, model, nonneg=nonneg, kinks=(unit,) + tuple(kinks), exact=exact, s=params.s, radial=True)
    pts = grid.points()
    r = np.linalg.norm(pts, axis=1)
    vals = np.empty(len(pts))
    inside = r < 1.0
    vals[inside] = poisson_extend_many(g, pts[inside], params, quad)
    vals[~inside] = data(pts[~inside])
    if nonneg:
        vals = np.maximum(vals, 0.0)  # rounding-level negatives only; the kernel is positive
    return Field(grid, vals.reshape(grid.shape), model, nonneg=nonneg, kinks=(unit,) + tuple(kinks), s=params.s)


def _box_far(grid):
    return float(np.linalg.norm(np.maximum(np.abs(grid.lo), np.abs(grid.hi))))


def radial_potential(f: Field, r: float, params: FracParams, quad: QuadSpec = QuadSpec()) -> PotentialValue:
    """Potential of a radial density at radius ``r`` as a one-dimensional integral of sphere means."""
    n, s = params.n, params.s
    A = riesz_constant(params)
    e1 = np.eye(n)[0]
    breaks = [k.radius for k in _f_kinks(f) if isinstance(k, Sphere) and not np.any(k.center) and 0 < k.radius < 1]
    # |rho - r|^(2s-1) singularity: rho = r -+ L tau^q on each side of r
    q = 1.0 / (2.0 * s) if 2.0 * s < 1.0 else 2.0
    rho_parts, gap_parts, wk_parts, wg_parts = [], [], [], []
    if r >= 1.0:
        segments = [(1.0, -1.0, 1.0)]
    else:
        segments = [(r, -1.0, r), (r, 1.0, 1.0 - r)]
    for anchor, sign, L in segments:
        if L <= 0.0:
            continue
        lo, hi = sorted((anchor, anchor + sign * L))
        tau_breaks = [(abs(b - anchor) / L) ** (1.0 / q) for b in breaks if lo < b < hi]
        tau_edges = qd.graded_edges(0.0, 1.0, base=np.linspace(0.0, 1.0, 5), singular=[0.0], breaks=tau_breaks, min_width=1e-6)
        tau, wk, wg = qd.kronrod_rule(tau_edges)
        jac = L * q * tau ** (q - 1.0)
        rho_parts.append(anchor + sign * L * tau**q)
        gap_parts.append(anchor - r + sign * L * tau**q)
        wk_parts.append(wk * jac)
        wg_parts.append(wg * jac)
    rho = np.concatenate(rho_parts)
    wk, wg = np.concatenate(wk_parts), np.concatenate(wg_parts)
    gap = np.concatenate(gap_parts)
    vals = f.at(rho[:, None] * e1) * rho ** (n - 1) * sphere_mean_power(n, r, rho, 2.0 * s - n, diff=gap)
    val = float(np.dot(wk, vals))
    err = abs(float(np.dot(wk - wg, vals)))
    if not _converged(val, err, float(np.dot(wk, np.abs(vals))), quad.tol):
        raise QuadratureNotConverged("radial potential did not reach tolerance", A * val, A * err)
    return PotentialValue(A * val, A * err)


def potential_field(f: Field, grid: Grid, params: FracParams, quad: QuadSpec = QuadSpec()) -> Field:
    """The potential of ``f`` sampled on ``grid`` with a power-tail exterior model."""
    n, s = params.n, params.s
    unit = Sphere(tuple([0.0] * n), 1.0)
    e1 = np.eye(n)[0]
    r_far = 64.0 * max(_box_far(grid), 2.0)
    if f.radial:
        prof = RadialProfile(lambda r: np.array([radial_potential(f, ri, params, quad).value for ri in r]), r_max=r_far)
        exact = _ProfileField(prof)
        # exterior table: 32 shells per octave from just inside the box to r_far
        r0 = 0.99 * min(min(np.abs(grid.lo)), min(np.abs(grid.hi)))
        r0 = max(r0, 1.0)
        radii = r0 * 2.0 ** (np.arange(0, math.floor(32 * math.log2(prof.last_r / r0)) + 1) / 32.0)
        # the profile nodes are log-spaced in r - 1 and resolve the boundary layer
        layer = prof.nodes[(prof.nodes > r0) & (prof.nodes < radii[-1])]
        radii = np.unique(np.concatenate([radii, layer]))
        vals_out = prof(radii)
        tail = float(vals_out[-1] * radii[-1] ** (n - 2 * s))
        ext = ShellTable(tuple(radii.tolist()), tuple(vals_out.tolist()), None, tail, 2.0 * s - n)
        vals = exact(grid.points()).reshape(grid.shape)
        return Field(grid, vals, ext, kinks=(unit,), exact=exact, s=s, radial=True)
    pts = grid.points()
    vals = np.array([potential_w(f, p, params, quad).value for p in pts]).reshape(grid.shape)
    # outside the box: shell means over the +-e_i axis points (odd terms cancel exactly)
    r0 = max(min(min(np.abs(grid.lo)), min(np.abs(grid.hi))), 1.0)
    radii = r0 * 2.0 ** (np.arange(0, math.floor(32 * math.log2(r_far / r0)) + 1) / 32.0)
    axes = np.vstack([np.eye(n), -np.eye(n)])
    means = [np.mean([potential_w(f, r * a, params, quad).value for a in axes]) for r in radii]
    tail = float(means[-1] * radii[-1] ** (n - 2 * s))
    ext = ShellTable(tuple(radii.tolist()), tuple(means), None, tail, 2.0 * s - n)
    return Field(grid, vals, ext, kinks=(unit,), s=s)


# --- decomposition --------------------------------------------------------------


@dataclass
class Decomposition:
    h: Field
    w: Field
    check_points: np.ndarray
    pde_values: np.ndarray
    poisson_gaps: np.ndarray
    trace: object = field(repr=False, default=None)

    @property
    def pde_residual(self) -> float:
        return float(np.max(np.abs(self.pde_values))) if len(self.pde_values) else 0.0

    @property
    def poisson_residual(self) -> float:
        return float(np.max(np.abs(self.poisson_gaps))) if len(self.poisson_gaps) else 0.0


def default_check_points(n, radius=0.5, count=8):
    """Origin plus rings at ``radius/2`` and ``radius`` (endpoints only for n = 1)."""
    if n == 1:
        return np.array([[0.0], [-radius / 2], [radius / 2], [-radius], [radius]])
    pts = [np.zeros(n)]
    if n == 2:
        ang = 2.0 * np.pi * np.arange(count) / count
        ring = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    else:
        ring = np.vstack([np.eye(3), -np.eye(3)])
    for rad in (radius / 2, radius):
        pts.extend(rad * ring)
    return np.array(pts)


def shell_trace(h: Field, r_max: float = 64.0) -> ShellTable:
    """Radial exterior trace of ``h``: dense shells near the unit sphere plus a fitted power tail."""
    n = h.n
    e1 = np.eye(n)[0]
    near = 1.0 + 2.0 ** -np.arange(0.0, 40.0, 0.125)
    far = 2.0 ** np.arange(0.0625, math.log2(r_max) + 1e-9, 0.0625)
    radii = np.unique(np.concatenate([[1.0], near, np.linspace(1.0, 2.0, 129), far]))
    vals = h.at(radii[:, None] * e1)
    r1, r2 = radii[-2], radii[-1]
    v1, v2 = vals[-2], vals[-1]
    if v1 != 0.0 and v2 != 0.0 and np.sign(v1) == np.sign(v2):
        exp = math.log(v2 / v1) / math.log(r2 / r1)
        return ShellTable(tuple(radii.tolist()), tuple(vals.tolist()), None, float(v2 * r2**-exp), exp)
    return ShellTable(tuple(radii.tolist()), tuple(vals.tolist()))


def decompose(u: Field, f: Field, params: FracParams, quad: QuadSpec = QuadSpec(), check_points=None) -> Decomposition:
    """Split ``u = h + w`` with ``w`` the potential of ``f`` and report how s-harmonic ``h`` is.

    Two residuals come back: the fractional Laplacian of ``h`` and the gap
    between ``h`` and the Poisson extension of its own exterior trace, both at
    the check points.
    """
    from .laplacian import evaluate

    params.require_riesz()
    w = potential_field(f, u.grid, params, quad)
    h = Field.combine([(1.0, u), (-1.0, w)])
    pts = default_check_points(params.n) if check_points is None else np.atleast_2d(np.asarray(check_points, float))
    pde = np.array([evaluate(h, p, params, quad, strict=False).value for p in pts])
    trace = shell_trace(h) if h.radial else h
    ext = poisson_extend_many(trace, pts, params, quad, strict=False)
    gaps = h.at(pts) - ext
    return Decomposition(h, w, pts, pde, gaps, trace)


def harnack_ratio(h, x, y, params: FracParams, offset: float = 0.0):
    """``(h(x) + offset, factor * (h(y) + offset))`` with the three-quarter-ball comparison factor."""
    n, s = params.n, params.s
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    rx, ry = float(np.linalg.norm(x)), float(np.linalg.norm(y))
    if rx >= 0.75 or ry >= 0.75:
        raise DomainError("comparison points must lie in the ball of radius 3/4")
    factor = ((0.5625 - rx * rx) ** s * (0.75 + ry) ** n) / ((0.5625 - ry * ry) ** s * (0.75 - rx) ** n)
    hx = float(np.atleast_1d(h.at(x[None, :]) if isinstance(h, Field) else h(x[None, :]))[0])
    hy = float(np.atleast_1d(h.at(y[None, :]) if isinstance(h, Field) else h(y[None, :]))[0])
    return hx + offset, factor * (hy + offset)
