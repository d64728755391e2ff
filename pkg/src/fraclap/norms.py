"""Discrete norm and modulus estimators on uniform grids.

Every estimator is a maximum over pairs of grid nodes, so it is a lower bound
of the continuum quantity and can only grow when the grid is refined by
halving. Pairs are enumerated by their integer offset vector: for a fixed
offset all node pairs are compared with one vectorized slice operation.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import Field, Grid, HolderClass
from .errors import ClassMismatch, EmptyRegion, MarginError, OutOfRange

EXACT_POINTS = 10_000
NEAR_CELLS = 8
SHELL_SAMPLES = 512
LN_CLAMP = 0.5


@dataclass(frozen=True)
class Region:
    """A closed ball (``radius`` set) or an axis-aligned box (``lo``/``hi`` set)."""

    center: Optional[tuple] = None
    radius: Optional[float] = None
    lo: Optional[tuple] = None
    hi: Optional[tuple] = None

    @classmethod
    def ball(cls, center, radius):
        return cls(center=tuple(float(c) for c in center), radius=float(radius))

    @classmethod
    def box(cls, lo, hi):
        return cls(lo=tuple(float(v) for v in lo), hi=tuple(float(v) for v in hi))

    @property
    def is_ball(self):
        return self.radius is not None

    @property
    def diameter(self) -> float:
        if self.is_ball:
            return 2.0 * self.radius
        return float(np.linalg.norm(np.subtract(self.hi, self.lo)))

    def contains(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, float))
        if self.is_ball:
            r = np.linalg.norm(pts - np.asarray(self.center), axis=1)
            return r <= self.radius * (1.0 + 1e-12)
        eps = 1e-12 * (1.0 + np.abs(np.asarray(self.hi)))
        return np.all((pts >= np.asarray(self.lo) - eps) & (pts <= np.asarray(self.hi) + eps), axis=1)

    def mask(self, grid: Grid) -> np.ndarray:
        return self.contains(grid.points()).reshape(grid.shape)

    def to_dict(self):
        if self.is_ball:
            return {"kind": "ball", "center": list(self.center), "radius": self.radius}
        return {"kind": "box", "lo": list(self.lo), "hi": list(self.hi)}


def _samples(g, values=None):
    if isinstance(g, Field):
        return g.grid, np.asarray(g.values, float)
    if values is not None:
        return g, np.asarray(values, float)
    grid, vals = g
    return grid, np.asarray(vals, float)


# --- pair scan -------------------------------------------------------------


@dataclass
class PairScan:
    """Per-offset maxima of ``|g(x) - g(y)|`` over node pairs inside a region."""

    distances: np.ndarray
    maxima: np.ndarray
    first: np.ndarray  # node coordinates of x for each offset
    second: np.ndarray  # node coordinates of y
    exact: bool

    def best(self, weight):
        """Largest ``maxima * weight(distances)`` and its pair."""
        q = self.maxima * weight(self.distances)
        i = int(np.argmax(q))
        return float(q[i]), (self.first[i].copy(), self.second[i].copy())

    def envelope(self, r):
        """``max |g(x) - g(y)|`` over scanned pairs with ``|x - y| <= r``."""
        order = np.argsort(self.distances, kind="stable")
        d = self.distances[order]
        cm = np.maximum.accumulate(self.maxima[order])
        k = np.searchsorted(d, np.asarray(r, float) * (1.0 + 1e-12), side="right")
        return np.where(k > 0, cm[np.maximum(k - 1, 0)], 0.0)


def _offsets(shape, exact, seed):
    axes = [np.arange(-(m - 1), m) for m in shape]
    offs = np.stack([a.ravel() for a in np.meshgrid(*axes, indexing="ij")], axis=1)
    nonzero = offs != 0
    lead = offs[np.arange(len(offs)), np.argmax(nonzero, axis=1)]
    offs = offs[lead > 0]
    if exact or len(offs) == 0:
        return offs
    # dense near offsets; seeded samples from each dyadic shell beyond
    length = np.linalg.norm(offs, axis=1)
    keep = [offs[np.max(np.abs(offs), axis=1) <= NEAR_CELLS]]
    rng = np.random.default_rng(seed)
    k = int(math.log2(NEAR_CELLS))
    far = np.max(np.abs(offs), axis=1) > NEAR_CELLS
    while True:
        sel = far & (length >= 2.0**k) & (length < 2.0 ** (k + 1))
        if not np.any(far & (length >= 2.0**k)):
            break
        pool = offs[sel]
        if len(pool) > SHELL_SAMPLES:
            pool = pool[np.sort(rng.choice(len(pool), SHELL_SAMPLES, replace=False))]
        keep.append(pool)
        k += 1
    return np.concatenate(keep)


def pair_scan(g, region: Region, values=None, seed: int = 0) -> PairScan:
    """Scan node pairs in ``region``; exact below :data:`EXACT_POINTS` nodes.

    Above the cap every offset up to :data:`NEAR_CELLS` cells is kept and each
    farther dyadic distance shell contributes a seeded sample of offsets.
    Non-finite samples (invalid derivative cells) are skipped.
    """
    grid, vals = _samples(g, values)
    mask = region.mask(grid) & np.isfinite(vals)
    count = int(mask.sum())
    if count < 2:
        raise EmptyRegion("region holds fewer than two valid grid nodes")
    nz = np.nonzero(mask)
    lo = [int(a.min()) for a in nz]
    hi = [int(a.max()) + 1 for a in nz]
    box = tuple(slice(a, b) for a, b in zip(lo, hi))
    V, M = vals[box], mask[box]
    shape = V.shape
    h = np.asarray(grid.spacing, float)
    origin = grid.lo + h * np.asarray(lo)
    exact = count <= EXACT_POINTS
    offs = _offsets(shape, exact, seed)
    dists, maxima, firsts, seconds = [], [], [], []
    for o in offs:
        sa = tuple(slice(0, m - c) if c >= 0 else slice(-c, m) for c, m in zip(o, shape))
        sb = tuple(slice(c, m) if c >= 0 else slice(0, m + c) for c, m in zip(o, shape))
        valid = M[sa] & M[sb]
        if not valid.any():
            continue
        diff = np.where(valid, np.abs(V[sa] - V[sb]), -1.0)
        j = int(np.argmax(diff))
        ia = np.array(np.unravel_index(j, diff.shape))
        ia = ia + np.array([s.start for s in sa])
        dists.append(float(np.linalg.norm(o * h)))
        maxima.append(float(diff.flat[j]))
        firsts.append(origin + ia * h)
        seconds.append(origin + (ia + o) * h)
    return PairScan(np.array(dists), np.array(maxima), np.array(firsts), np.array(seconds), exact)


# --- seminorms ---------------------------------------------------------------


def _holder_weight(beta):
    return lambda d: d ** (-beta)


def _lnl_weight(d):
    return 1.0 / (d * np.abs(np.log(np.minimum(d, LN_CLAMP))))


def holder_seminorm(g, beta: float, region: Region, values=None, seed: int = 0, scan: Optional[PairScan] = None):
    """``max |g(x) - g(y)| / |x - y|**beta`` over node pairs in ``region``; returns ``(value, (x, y))``."""
    if not 0.0 < beta <= 1.0:
        raise OutOfRange(f"beta must lie in (0, 1], got {beta}")
    scan = scan or pair_scan(g, region, values, seed)
    return scan.best(_holder_weight(beta))


def lnl_seminorm(g, region: Region, values=None, seed: int = 0, scan: Optional[PairScan] = None):
    """Lipschitz quotient with the logarithmic correction ``|ln min(|x - y|, 1/2)|``."""
    scan = scan or pair_scan(g, region, values, seed)
    return scan.best(_lnl_weight)


@dataclass
class DiniTable:
    r: np.ndarray
    omega: np.ndarray
    I: float
    I_alpha: Optional[float]
    alpha: Optional[float]
    slope: float

    def to_dict(self):
        return {
            "r": self.r.tolist(),
            "omega": self.omega.tolist(),
            "I": self.I,
            "I_alpha": self.I_alpha,
            "slope": self.slope,
        }


def _segment(w_lo, w_hi, r_lo, r_hi, alpha):
    """``int_{r_lo}^{r_hi} w(r) r^(-1-alpha) dr`` with ``w`` a power law through both ends."""
    if w_lo <= 0.0 or w_hi <= 0.0:
        # trapezoid in log r when the power law is undefined
        return 0.5 * (w_lo * r_lo**-alpha + w_hi * r_hi**-alpha) * math.log(r_hi / r_lo)
    sig = math.log(w_hi / w_lo) / math.log(r_hi / r_lo)
    e = sig - alpha
    L = math.log(r_hi / r_lo)
    base = w_lo * r_lo**-alpha
    if abs(e * L) < 1e-12:
        return base * L
    return base * math.expm1(e * L) / e


def dini_integrals(r, omega, alpha=None):
    """``(I, I_alpha, slope)`` for a modulus table on decreasing dyadic radii.

    Between table radii the modulus is interpolated as a power law, which is
    exact for ``omega = c r**beta``. Below the finest radius the power law of
    the two finest entries is continued to ``r = 0``; the integral is infinite
    when that slope does not exceed the weight exponent.
    """
    r = np.asarray(r, float)
    w = np.asarray(omega, float)
    order = np.argsort(r)
    r, w = r[order], w[order]
    slope = math.log(w[1] / w[0]) / math.log(r[1] / r[0]) if len(r) > 1 and w[0] > 0 and w[1] > 0 else math.inf

    def integral(a):
        total = sum(_segment(w[i], w[i + 1], r[i], r[i + 1], a) for i in range(len(r) - 1))
        if w[0] > 0:
            total += w[0] * r[0] ** -a / (slope - a) if slope > a else math.inf
        return float(total)

    return integral(0.0), (None if alpha is None else integral(alpha)), float(slope)


def dini_modulus(g, region: Region, alpha: Optional[float] = None, values=None, seed: int = 0, scan=None) -> DiniTable:
    """Modulus of continuity on ``diam * 2**-j`` and its Dini integrals."""
    grid, vals = _samples(g, values)
    scan = scan or pair_scan((grid, vals), region, seed=seed)
    D = region.diameter
    hmin = float(min(grid.spacing))
    J = max(1, int(math.floor(math.log2(D / hmin) + 1e-12)))
    r = D * 2.0 ** -np.arange(J + 1)
    omega = scan.envelope(r)
    I, Ia, slope = dini_integrals(r, omega, alpha)
    return DiniTable(r, omega, I, Ia, alpha, slope)


# --- finite differences ------------------------------------------------------


def derivative_grid(g, multi_index, values=None) -> np.ndarray:
    """Central second-order differences; cells without a full stencil are NaN.

    ``multi_index`` counts derivatives per axis, total order at most 2.
    """
    grid, vals = _samples(g, values)
    counts = [int(c) for c in multi_index]
    if len(counts) != grid.n or any(c < 0 for c in counts):
        raise OutOfRange("multi-index must hold one nonnegative count per axis")
    if sum(counts) > 2:
        raise OutOfRange("derivative order above 2 is not supported")
    out = np.array(vals, float)
    for ax, c in enumerate(counts):
        if c == 0:
            continue
        m, h = grid.shape[ax], grid.spacing[ax]
        if m < 3:
            raise MarginError(f"axis {ax} has {m} nodes; central differences need 3")
        up = np.roll(out, -1, axis=ax)
        dn = np.roll(out, 1, axis=ax)
        out = (up - dn) / (2.0 * h) if c == 1 else (up - 2.0 * out + dn) / (h * h)
        edge = [slice(None)] * grid.n
        for i in (0, m - 1):
            edge[ax] = i
            out[tuple(edge)] = np.nan
    if not np.any(np.isfinite(out)):
        raise MarginError("no cell has a complete stencil")
    return out


def multi_indices(n, order):
    return [c for c in itertools.product(range(order + 1), repeat=n) if sum(c) == order]


# --- full norm -----------------------------------------------------------------


@dataclass
class NormReport:
    region: Region
    sup: float
    d_sup: list
    holder: Optional[dict] = None
    lnl: Optional[dict] = None
    dini: Optional[DiniTable] = None
    cls: Optional[HolderClass] = field(default=None, repr=False)

    @property
    def norm(self) -> float:
        """``sum_j sup|D^j g|`` plus whichever seminorm the class asks for."""
        total = self.sup + sum(self.d_sup)
        for part in (self.holder, self.lnl):
            if part is not None:
                total += part["value"]
        return total

    def to_dict(self):
        def pair(p):
            if p is None:
                return None
            return {"value": p["value"], "x": list(map(float, p["x"])), "y": list(map(float, p["y"]))}

        return {
            "region": self.region.to_dict(),
            "sup": self.sup,
            "d_sup": list(self.d_sup),
            "holder": pair(self.holder),
            "lnl": pair(self.lnl),
            "dini": None if self.dini is None else self.dini.to_dict(),
        }


def _region_sup(vals, mask):
    sel = mask & np.isfinite(vals)
    if not sel.any():
        raise EmptyRegion("no valid nodes in region")
    return float(np.max(np.abs(vals[sel])))


def full_norm(g, cls: HolderClass, region: Region, values=None, seed: int = 0, dini: bool = True) -> NormReport:
    """Norm of the class ``cls`` on ``region``.

    Sup norms of all derivatives up to order ``k`` plus, for the order-``k``
    derivatives, the Hölder seminorm (classical classes) or the Ln-Lipschitz
    seminorm. The Dini table of ``g`` itself is attached when ``dini`` is set.
    """
    grid, vals = _samples(g, values)
    if cls.k > 2:
        raise ClassMismatch(f"derivatives of order {cls.k} are not available")
    mask = region.mask(grid)
    sup = _region_sup(vals, mask)
    d_sup = []
    top = [vals]
    for j in range(1, cls.k + 1):
        layer = [derivative_grid((grid, vals), mi) for mi in multi_indices(grid.n, j)]
        d_sup.append(max(_region_sup(d, mask) for d in layer))
        top = layer
    report = NormReport(region, sup, d_sup, cls=cls)
    if cls.kind in ("classical", "lnlipschitz"):
        best = None
        for d in top:
            scan = pair_scan((grid, d), region, seed=seed)
            val, (x, y) = scan.best(_holder_weight(cls.beta) if cls.kind == "classical" else _lnl_weight)
            if best is None or val > best["value"]:
                best = {"value": val, "x": x, "y": y}
        if cls.kind == "classical":
            report.holder = best
        else:
            report.lnl = best
    if dini:
        report.dini = dini_modulus((grid, vals), region, cls.beta if cls.kind == "classical" else None, seed=seed)
    return report
