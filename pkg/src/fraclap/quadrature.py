"""Composite Gauss-Legendre panels, direction rules and ray geometry.

Everything here is plumbing for the singular integrals in :mod:`fraclap.laplacian`,
:mod:`fraclap.potentials` and :mod:`fraclap.kernels`. Rules are returned as
``(nodes, weights)`` numpy arrays.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=64)
def gauss_legendre(order):
    x, w = np.polynomial.legendre.leggauss(int(order))
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def panel_rule(edges, order):
    """Composite Gauss-Legendre rule on consecutive panels ``edges[i], edges[i+1]``."""
    edges = np.asarray(edges, dtype=float)
    x, w = gauss_legendre(order)
    a = edges[:-1]
    half = 0.5 * (edges[1:] - a)
    mid = a + half
    nodes = (mid[:, None] + half[:, None] * x).ravel()
    weights = (half[:, None] * w).ravel()
    return nodes, weights


def bisect_edges(edges):
    edges = np.asarray(edges, dtype=float)
    mids = 0.5 * (edges[:-1] + edges[1:])
    out = np.empty(2 * len(edges) - 1)
    out[0::2] = edges
    out[1::2] = mids
    return out


def cap_width(edges, max_width):
    """Split panels wider than ``max_width`` into equal pieces."""
    if not np.isfinite(max_width) or max_width <= 0:
        return np.asarray(edges, dtype=float)
    edges = np.asarray(edges, dtype=float)
    widths = np.diff(edges)
    counts = np.maximum(1, np.ceil(widths / max_width).astype(int))
    if np.all(counts == 1):
        return edges
    pieces = [edges[:1]]
    for a, b, c in zip(edges[:-1], edges[1:], counts):
        pieces.append(np.linspace(a, b, c + 1)[1:])
    return np.concatenate(pieces)


def dyadic_edges(lo, hi):
    """Edges ``lo, 2 lo, 4 lo, ...`` clipped at ``hi``."""
    k = int(np.ceil(np.log2(hi / lo) - 1e-12))
    edges = lo * 2.0 ** np.arange(k + 1)
    edges[-1] = hi
    return edges


def graded_edges(lo, hi, base=(), singular=(), breaks=(), min_width=1e-10, ratio=0.5):
    """Panel edges on ``[lo, hi]`` refined geometrically toward ``singular`` points.

    ``breaks`` are added as plain edges (jump discontinuities need no grading).
    Grading starts from half the distance to the nearest other edge and stops
    at ``min_width`` (absolute).
    """
    pts = [lo, hi]
    pts.extend(b for b in base if lo < b < hi)
    pts.extend(b for b in breaks if lo < b < hi)
    sing = [p for p in singular if lo <= p <= hi]
    pts.extend(sing)
    anchors = np.unique(np.asarray(pts, dtype=float))
    extra = []
    for p in sing:
        left = anchors[anchors < p]
        right = anchors[anchors > p]
        for side, neigh in ((-1.0, left), (1.0, right)):
            if len(neigh) == 0:
                continue
            gap = abs(p - (neigh[-1] if side < 0 else neigh[0]))
            w = 0.5 * gap
            while w > max(min_width, 1e-15 * max(abs(p), 1.0)):
                extra.append(p + side * w)
                w *= ratio
    edges = np.unique(np.concatenate([anchors, np.asarray(extra, dtype=float)]))
    keep = np.concatenate([[True], np.diff(edges) > 1e-15 * np.maximum(1.0, np.abs(edges[1:]))])
    return edges[keep]


def infinite_rule(a, decay, order, panels=4):
    """Rule on ``[a, inf)`` for integrands decaying like ``rho**(-1-decay)``.

    Uses ``rho = a * v**(-1/decay)`` which turns the model integrand into a
    constant on ``v in (0, 1]``.
    """
    decay = float(decay)
    v_edges = np.linspace(0.0, 1.0, panels + 1)
    v, wv = panel_rule(v_edges, order)
    rho = a * v ** (-1.0 / decay)
    jac = (a / decay) * v ** (-1.0 / decay - 1.0)
    return rho, wv * jac


# --- direction rules -------------------------------------------------------


def sphere_area(n):
    from math import gamma, pi

    return 2.0 * pi ** (n / 2.0) / gamma(n / 2.0)


@lru_cache(maxsize=64)
def _half_sphere(n, order):
    if n == 1:
        dirs = np.array([[1.0]])
        w = np.array([1.0])
    elif n == 2:
        m = int(order)
        phi = np.pi * np.arange(m) / m
        dirs = np.stack([np.cos(phi), np.sin(phi)], axis=1)
        w = np.full(m, np.pi / m)
    elif n == 3:
        zx, zw = gauss_legendre(order)
        z = 0.5 * (zx + 1.0)
        wz = 0.5 * zw
        m2 = 2 * int(order)
        phi = 2.0 * np.pi * (np.arange(m2) + 0.5) / m2
        zz, pp = np.meshgrid(z, phi, indexing="ij")
        st = np.sqrt(1.0 - zz**2)
        dirs = np.stack([st * np.cos(pp), st * np.sin(pp), zz], axis=-1).reshape(-1, 3)
        w = (wz[:, None] * np.full(m2, 2.0 * np.pi / m2)[None, :]).ravel()
    else:
        raise ValueError(f"unsupported dimension {n}")
    dirs.setflags(write=False)
    w.setflags(write=False)
    return dirs, w


def half_sphere_rule(n, order):
    """Rule on a hemisphere; integrating an even integrand gives half the sphere integral."""
    return _half_sphere(int(n), int(order))


@lru_cache(maxsize=64)
def _sphere(n, order):
    if n == 1:
        dirs = np.array([[1.0], [-1.0]])
        w = np.array([1.0, 1.0])
    elif n == 2:
        m = int(order)
        phi = 2.0 * np.pi * np.arange(m) / m
        dirs = np.stack([np.cos(phi), np.sin(phi)], axis=1)
        w = np.full(m, 2.0 * np.pi / m)
    elif n == 3:
        zx, zw = gauss_legendre(order)
        m2 = 2 * int(order)
        phi = 2.0 * np.pi * (np.arange(m2) + 0.5) / m2
        zz, pp = np.meshgrid(zx, phi, indexing="ij")
        st = np.sqrt(1.0 - zz**2)
        dirs = np.stack([st * np.cos(pp), st * np.sin(pp), zz], axis=-1).reshape(-1, 3)
        w = (zw[:, None] * np.full(m2, 2.0 * np.pi / m2)[None, :]).ravel()
    else:
        raise ValueError(f"unsupported dimension {n}")
    dirs.setflags(write=False)
    w.setflags(write=False)
    return dirs, w


def sphere_rule(n, order):
    return _sphere(int(n), int(order))


def circle_rule(breaks=(), order=16, panels=8, cluster=None, cluster_width=None):
    """Composite GL rule on the circle with panel edges at the angles ``breaks``.

    ``cluster`` is an angle toward which panels are graded down to
    ``cluster_width``; used for kernels peaked in one direction.
    """
    base = np.linspace(0.0, 2.0 * np.pi, panels + 1)
    shift = 0.0
    if cluster is not None:
        shift = float(cluster)
    br = [(b - shift) % (2.0 * np.pi) for b in breaks]
    sing = []
    if cluster is not None:
        sing = [0.0, 2.0 * np.pi]
    edges = graded_edges(
        0.0,
        2.0 * np.pi,
        base=base,
        singular=sing,
        breaks=br,
        min_width=cluster_width if cluster_width else 1.0,
        ratio=0.5,
    )
    phi, w = panel_rule(edges, order)
    phi = phi + shift
    return np.stack([np.cos(phi), np.sin(phi)], axis=1), w


def cap_rule(axis, psi_max, order, panels=4, azimuth=None, cluster_width=None):
    """Rule on the spherical cap of half-angle ``psi_max`` around unit vector ``axis``.

    For n = 2 the cap is the arc ``[-psi_max, psi_max]``; for n = 3 the polar
    angle is integrated with GL (weight ``sin psi``) and the azimuth with the
    trapezoid rule. Panels are graded toward the axis when ``cluster_width``
    is given.
    """
    axis = np.asarray(axis, dtype=float)
    n = axis.shape[0]
    sing = [0.0] if cluster_width else []
    edges = graded_edges(
        0.0, psi_max, base=np.linspace(0.0, psi_max, panels + 1), singular=sing,
        min_width=cluster_width or 1.0,
    )
    psi, wpsi = panel_rule(edges, order)
    if n == 2:
        base_angle = np.arctan2(axis[1], axis[0])
        ang = np.concatenate([base_angle + psi, base_angle - psi])
        w = np.concatenate([wpsi, wpsi])
        return np.stack([np.cos(ang), np.sin(ang)], axis=1), w
    if n != 3:
        raise ValueError("cap_rule needs n in {2, 3}")
    m2 = azimuth or 2 * order
    phi = 2.0 * np.pi * (np.arange(m2) + 0.5) / m2
    e1, e2 = orthonormal_complement(axis)
    sp = np.sin(psi)[:, None, None]
    cp = np.cos(psi)[:, None, None]
    ring = np.cos(phi)[None, :, None] * e1 + np.sin(phi)[None, :, None] * e2
    dirs = (cp * axis + sp * ring).reshape(-1, 3)
    w = (wpsi * np.sin(psi))[:, None] * np.full(m2, 2.0 * np.pi / m2)[None, :]
    return dirs, w.ravel()


def orthonormal_complement(v):
    v = np.asarray(v, dtype=float)
    trial = np.array([1.0, 0.0, 0.0]) if abs(v[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = trial - v * np.dot(trial, v)
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(v, e1)
    return e1, e2


# --- ray geometry ----------------------------------------------------------


def ray_sphere(origin, direction, center, radius):
    """Signed ray parameters where ``origin + t*direction`` meets the sphere (may be empty)."""
    d = np.asarray(origin, dtype=float) - np.asarray(center, dtype=float)
    b = float(np.dot(d, direction))
    c = float(np.dot(d, d)) - radius * radius
    disc = b * b - c
    if disc <= 0.0:
        return ()
    sq = np.sqrt(disc)
    return (-b - sq, -b + sq)


def ray_plane(origin, direction, axis, offset):
    if direction[axis] == 0.0:
        return ()
    return ((offset - origin[axis]) / direction[axis],)


def ray_box(origin, direction, lo, hi):
    """Parameters ``(t_in, t_out)`` of the line inside the box, or ``None``."""
    t0, t1 = -np.inf, np.inf
    for k in range(len(origin)):
        if direction[k] == 0.0:
            if origin[k] < lo[k] or origin[k] > hi[k]:
                return None
            continue
        a = (lo[k] - origin[k]) / direction[k]
        b = (hi[k] - origin[k]) / direction[k]
        if a > b:
            a, b = b, a
        t0, t1 = max(t0, a), min(t1, b)
    if t0 > t1:
        return None
    return t0, t1


# --- embedded Gauss-Kronrod (7/15) rules -------------------------------------

_XGK = np.array([
    0.991455371120812639206854697526329, 0.949107912342758524526189684047851,
    0.864864423359769072789712788640926, 0.741531185599394439863864773280788,
    0.586087235467691130294144845693013, 0.405845151377397166906606412076961,
    0.207784955007898467600689403773245, 0.0,
])
_WGK = np.array([
    0.022935322010529224963732008058970, 0.063092092629978553290700663189204,
    0.104790010322250183839876322541518, 0.140653259715525918745189590510238,
    0.169004726639267902826583426598550, 0.190350578064785409913256402421014,
    0.204432940075298892414161999234649, 0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082, 0.279705391489276667901467771423780,
    0.381830050505118944950369775488975, 0.417959183673469387755102040816327,
])


@lru_cache(maxsize=1)
def kronrod15():
    """Nodes on [-1, 1] with Kronrod weights and the embedded 7-point Gauss weights."""
    x = np.concatenate([-_XGK[:-1], _XGK[::-1]])
    wk = np.concatenate([_WGK[:-1], _WGK[::-1]])
    wg_half = np.zeros(8)
    wg_half[1::2] = _WG
    wg = np.concatenate([wg_half[:-1], wg_half[::-1]])
    for a in (x, wk, wg):
        a.setflags(write=False)
    return x, wk, wg


def kronrod_rule(edges):
    """Composite 15-point Kronrod rule; returns ``(nodes, w_kronrod, w_gauss)``.

    ``|sum((w_kronrod - w_gauss) * f)|`` is the usual error estimate.
    """
    edges = np.asarray(edges, dtype=float)
    x, wk, wg = kronrod15()
    a = edges[:-1]
    half = 0.5 * (edges[1:] - a)
    mid = a + half
    nodes = (mid[:, None] + half[:, None] * x).ravel()
    return nodes, (half[:, None] * wk).ravel(), (half[:, None] * wg).ravel()


@dataclass(frozen=True)
class DirectionRule:
    """Directions with primary weights and alternative weight sets.

    The spread ``max |sum((w - alt) * G)|`` over ``alts`` estimates the
    angular error of ``sum(w * G)``.
    """

    dirs: np.ndarray
    w: np.ndarray
    alts: tuple

    def integrate(self, G):
        val = float(np.dot(self.w, G))
        err = max((abs(float(np.dot(self.w - a, G))) for a in self.alts), default=0.0)
        return val, err


def circle_directions(panels=8, breaks=(), cluster=None, cluster_width=None, singular=(), min_width=1e-9):
    """Composite Kronrod rule in angle on the full circle.

    ``breaks`` become panel edges; ``singular`` angles get geometric grading
    down to ``min_width``; ``cluster`` grades toward one angle down to
    ``cluster_width``.
    """
    base = np.linspace(0.0, 2.0 * np.pi, panels + 1)
    shift = 0.0 if cluster is None else float(cluster)
    two_pi = 2.0 * np.pi
    br = [(b - shift) % two_pi for b in breaks]
    sing = [(b - shift) % two_pi for b in singular]
    edges = graded_edges(0.0, two_pi, base=base, singular=sing, breaks=br, min_width=min_width)
    if cluster is not None and cluster_width:
        edges = graded_edges(0.0, two_pi, base=edges, singular=[0.0, two_pi], min_width=cluster_width)
    phi, wk, wg = kronrod_rule(edges)
    phi = phi + shift
    return DirectionRule(np.stack([np.cos(phi), np.sin(phi)], axis=1), wk, (wg,))


def sphere_directions(axis=None, panels=8, azimuth=32, psi_breaks=(), cluster_width=None, psi_singular=(), min_width=1e-7):
    """Kronrod rule in the polar angle about ``axis`` times a trapezoid azimuth (n = 3)."""
    axis = np.array([0.0, 0.0, 1.0]) if axis is None else np.asarray(axis, float)
    edges = np.linspace(0.0, np.pi, panels + 1)
    if psi_singular:
        edges = graded_edges(0.0, np.pi, base=edges, singular=list(psi_singular), min_width=min_width)
    sing = [0.0] if cluster_width else []
    edges = graded_edges(0.0, np.pi, base=edges, singular=sing,
                         breaks=psi_breaks, min_width=cluster_width or 1.0)
    psi, wk, wg = kronrod_rule(edges)
    m = int(azimuth) + int(azimuth) % 2
    phi = 2.0 * np.pi * (np.arange(m) + 0.5) / m
    e1, e2 = orthonormal_complement(axis)
    ring = np.cos(phi)[None, :, None] * e1 + np.sin(phi)[None, :, None] * e2
    dirs = (np.cos(psi)[:, None, None] * axis + np.sin(psi)[:, None, None] * ring).reshape(-1, 3)
    sp = np.sin(psi)
    waz = np.full(m, 2.0 * np.pi / m)
    half = np.zeros(m)
    half[::2] = 4.0 * np.pi / m
    w = np.outer(wk * sp, waz).ravel()
    return DirectionRule(dirs, w, (np.outer(wg * sp, waz).ravel(), np.outer(wk * sp, half).ravel()))


def point_directions():
    return DirectionRule(np.array([[1.0], [-1.0]]), np.array([1.0, 1.0]), ())
