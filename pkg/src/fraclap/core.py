"""Parameters, Hölder-class bookkeeping, fields and the grid file format.

A :class:`Field` is a real function on R^n described by samples on a uniform
box grid plus an :class:`ExteriorModel` that supplies values outside the box.
Fields can optionally carry an exact callable for the interior (used instead
of interpolation), a list of kink surfaces where the function is not smooth,
and an affine pullback ``x -> factor * u(scale * x + shift)`` applied lazily so
that rescaled fields keep their original samples bit for bit.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from itertools import product
from typing import Callable, Optional

import numpy as np

from . import quadrature as qd
from .errors import (
    GridFormatError,
    Inadmissible,
    OutOfRange,
    RieszInvalid,
    Supercritical,
)

INTEGER_TOL = 1e-12
GRID_HEADER = "# fraclap-grid v1"


# --- parameters -------------------------------------------------------------


@dataclass(frozen=True)
class FracParams:
    n: int
    s: float
    alpha: Optional[float] = None
    p: Optional[float] = None

    @property
    def riesz_ok(self) -> bool:
        return self.n > 2.0 * self.s

    @property
    def critical_p(self) -> float:
        return (self.n + 2 * self.s) / (self.n - 2 * self.s) if self.riesz_ok else math.inf

    def require_riesz(self):
        if not self.riesz_ok:
            raise RieszInvalid(f"Riesz kernel needs n > 2s, got n={self.n}, s={self.s}")
        return self


def validate_params(n, s, alpha=None, p=None, riesz=False) -> FracParams:
    """Check ranges and return a :class:`FracParams`.

    ``riesz=True`` additionally requires ``n > 2s``.
    """
    if n not in (1, 2, 3) or int(n) != n:
        raise OutOfRange(f"n must be 1, 2 or 3, got {n}")
    s = float(s)
    if not 0.0 < s < 1.0:
        raise OutOfRange(f"s must lie in (0,1), got {s}")
    if alpha is not None:
        alpha = float(alpha)
        if not 0.0 < alpha < 1.0:
            raise OutOfRange(f"alpha must lie in (0,1), got {alpha}")
    params = FracParams(int(n), s, alpha, None if p is None else float(p))
    if p is not None:
        if not 1.0 < params.p < params.critical_p:
            raise Supercritical(f"p={p} outside (1, {params.critical_p})")
    if riesz:
        params.require_riesz()
    return params


# --- Hölder classes ---------------------------------------------------------


@dataclass(frozen=True)
class HolderClass:
    kind: str  # "classical" | "lnlipschitz" | "dini"
    k: int
    beta: Optional[float] = None

    @classmethod
    def classical(cls, k, beta):
        if k < 0 or not 0.0 < beta < 1.0:
            raise OutOfRange(f"Classical class needs k>=0 and beta in (0,1), got {k}, {beta}")
        return cls("classical", int(k), float(beta))

    @classmethod
    def ln_lipschitz(cls, k):
        return cls("lnlipschitz", int(k))

    @classmethod
    def dini_target(cls, k):
        return cls("dini", int(k))


def target_exponent(s, alpha=None):
    return 2.0 * s + (alpha or 0.0)


def holder_class(s, alpha=None, dini=False) -> HolderClass:
    """Regularity class of the solution for the target exponent ``2s (+ alpha)``.

    With ``dini=True`` an integer exponent maps to :meth:`HolderClass.dini_target`
    (the Dini-continuous right-hand side case) instead of Ln-Lipschitz.
    """
    if not 0.0 < s < 1.0:
        raise OutOfRange(f"s must lie in (0,1), got {s}")
    if alpha is not None and not 0.0 < alpha < 1.0:
        raise OutOfRange(f"alpha must lie in (0,1), got {alpha}")
    t = target_exponent(s, alpha)
    r = round(t)
    if abs(t - r) <= INTEGER_TOL and r >= 1:
        return HolderClass.dini_target(r) if dini else HolderClass.ln_lipschitz(r - 1)
    k = math.floor(t)
    return HolderClass.classical(k, t - k)


# --- quadrature configuration ----------------------------------------------


@dataclass(frozen=True)
class QuadSpec:
    """Quadrature knobs shared by every singular integral.

    ``ang_order`` of ``None`` means the dimension default (16 directions on
    the half circle for n=2; 16 polar x 32 azimuthal nodes for n=3).
    ``max_panel_width`` caps radial panels; ``ang_max`` bounds the adaptive
    angular doubling.
    """

    R: float = 32.0
    n_panels: int = 24
    gl_order: int = 8
    ang_order: Optional[int] = None
    tol: float = 1e-6
    r_min: Optional[float] = None
    max_panel_width: float = 1.0
    ang_max: int = 512

    def __post_init__(self):
        if self.r_min is not None and self.r_min <= 0:
            raise OutOfRange("r_min must be positive")
        if self.R <= (self.r_min or 0.0):
            raise OutOfRange("R must exceed r_min")
        if self.tol <= 0:
            raise OutOfRange("tol must be positive")
        if self.gl_order < 2 or (self.ang_order is not None and self.ang_order < 2):
            raise OutOfRange("quadrature orders must be >= 2")
        if self.n_panels < 1:
            raise OutOfRange("n_panels must be >= 1")

    def angular(self, n):
        return self.ang_order if self.ang_order is not None else 16

    def replace(self, **kw):
        from dataclasses import replace

        return replace(self, **kw)


# --- kink geometry ---------------------------------------------------------


@dataclass(frozen=True)
class Sphere:
    center: tuple
    radius: float

    def hits(self, origin, direction):
        return qd.ray_sphere(origin, direction, self.center, self.radius)

    def pullback(self, scale, shift):
        c = (np.asarray(self.center, float) - shift) / scale
        return Sphere(tuple(c.tolist()), self.radius / scale)


@dataclass(frozen=True)
class Plane:
    axis: int
    offset: float

    def hits(self, origin, direction):
        return qd.ray_plane(origin, direction, self.axis, self.offset)

    def pullback(self, scale, shift):
        return Plane(self.axis, (self.offset - float(shift[self.axis])) / scale)


class KinkSet:
    """Vectorized ray intersections with a fixed collection of kinks."""

    def __init__(self, kinks):
        spheres = [k for k in kinks if isinstance(k, Sphere)]
        planes = [k for k in kinks if isinstance(k, Plane)]
        self.centers = np.array([k.center for k in spheres], dtype=float)
        self.radii = np.array([k.radius for k in spheres], dtype=float)
        self.axes = np.array([k.axis for k in planes], dtype=int)
        self.offsets = np.array([k.offset for k in planes], dtype=float)

    def __len__(self):
        return len(self.radii) + len(self.axes)

    def hits(self, origin, direction):
        """Signed ray parameters of every crossing (tangencies excluded)."""
        out = []
        if len(self.radii):
            d = origin - self.centers
            b = d @ direction
            disc = b * b - (np.einsum("ij,ij->i", d, d) - self.radii**2)
            ok = disc > 0
            sq = np.sqrt(disc[ok])
            out += [-b[ok] - sq, -b[ok] + sq]
        if len(self.axes):
            comp = direction[self.axes]
            ok = comp != 0
            out.append((self.offsets[ok] - origin[self.axes[ok]]) / comp[ok])
        return np.concatenate(out) if out else np.zeros(0)


# --- exterior models --------------------------------------------------------


def _center(center, n):
    return np.zeros(n) if center is None else np.asarray(center, dtype=float)


def _fmt(x):
    return repr(float(x))


def _fmt_center(center):
    if center is None or not np.any(np.asarray(center)):
        return ""
    return "@" + ",".join(_fmt(c) for c in center)


class ExteriorModel:
    """Values of a field outside its sample box."""

    growth = -math.inf

    def at(self, pts):  # pragma: no cover - interface
        raise NotImplementedError

    def pullback(self, scale, shift):
        return self

    def scaled(self, factor):  # pragma: no cover - interface
        raise NotImplementedError

    def kinks(self, n):
        return ()

    def support_radius(self, n):
        """Distance from the origin beyond which the model vanishes (inf if never)."""
        return math.inf

    def nonneg(self):
        return False

    def to_string(self):  # pragma: no cover - interface
        raise NotImplementedError


@dataclass(frozen=True)
class Zero(ExteriorModel):
    def at(self, pts):
        return np.zeros(len(pts))

    def scaled(self, factor):
        return self

    def support_radius(self, n):
        return 0.0

    def nonneg(self):
        return True

    def to_string(self):
        return "zero"


@dataclass(frozen=True)
class Constant(ExteriorModel):
    c: float
    growth = 0.0

    def at(self, pts):
        return np.full(len(pts), float(self.c))

    def scaled(self, factor):
        return Constant(self.c * factor)

    def support_radius(self, n):
        return 0.0 if self.c == 0 else math.inf

    def nonneg(self):
        return self.c >= 0

    def to_string(self):
        return f"constant:{_fmt(self.c)}"


@dataclass(frozen=True)
class RadialPower(ExteriorModel):
    """``coef * |y - center|**exponent``."""

    coef: float
    exponent: float
    center: Optional[tuple] = None

    @property
    def growth(self):
        return self.exponent if self.coef != 0 else -math.inf

    def at(self, pts):
        pts = np.asarray(pts, dtype=float)
        r = np.linalg.norm(pts - _center(self.center, pts.shape[1]), axis=1)
        with np.errstate(divide="ignore"):
            return self.coef * r**self.exponent

    def pullback(self, scale, shift):
        n = len(shift)
        c = (_center(self.center, n) - shift) / scale
        return RadialPower(self.coef * scale**self.exponent, self.exponent, tuple(c.tolist()))

    def scaled(self, factor):
        return RadialPower(self.coef * factor, self.exponent, self.center)

    def kinks(self, n):
        return (Sphere(tuple(_center(self.center, n).tolist()), 0.0),)

    def nonneg(self):
        return self.coef >= 0

    def to_string(self):
        return f"radial:{_fmt(self.coef)},{_fmt(self.exponent)}{_fmt_center(self.center)}"


@dataclass(frozen=True)
class ShellTable(ExteriorModel):
    """Piecewise-linear radial profile on ``radii`` about ``center``.

    Zero inside ``radii[0]``; beyond ``radii[-1]`` either zero or the power
    tail ``tail_coef * r**tail_exp``.
    """

    radii: tuple
    values: tuple
    center: Optional[tuple] = None
    tail_coef: float = 0.0
    tail_exp: Optional[float] = None

    def __post_init__(self):
        r = np.asarray(self.radii, float)
        if len(r) < 2 or len(r) != len(self.values) or np.any(np.diff(r) <= 0) or r[0] < 0:
            raise Inadmissible("ShellTable needs >=2 increasing radii matching values")

    @property
    def growth(self):
        if self.tail_exp is not None and self.tail_coef != 0:
            return self.tail_exp
        return -math.inf

    def at(self, pts):
        pts = np.asarray(pts, dtype=float)
        r = np.linalg.norm(pts - _center(self.center, pts.shape[1]), axis=1)
        radii = np.asarray(self.radii)
        out = np.interp(r, radii, np.asarray(self.values), left=0.0, right=0.0)
        out[r < radii[0]] = 0.0
        if self.tail_exp is not None:
            far = r > radii[-1]
            out[far] = self.tail_coef * r[far] ** self.tail_exp
        return out

    def pullback(self, scale, shift):
        n = len(shift)
        c = (_center(self.center, n) - shift) / scale
        tail = self.tail_coef * scale**self.tail_exp if self.tail_exp is not None else 0.0
        return ShellTable(
            tuple((np.asarray(self.radii) / scale).tolist()),
            self.values,
            tuple(c.tolist()),
            tail,
            self.tail_exp,
        )

    def scaled(self, factor):
        return ShellTable(
            self.radii,
            tuple((np.asarray(self.values) * factor).tolist()),
            self.center,
            self.tail_coef * factor,
            self.tail_exp,
        )

    def kinks(self, n):
        c = tuple(_center(self.center, n).tolist())
        return tuple(Sphere(c, float(r)) for r in self.radii)

    def support_radius(self, n):
        if self.growth > -math.inf:
            return math.inf
        return float(np.linalg.norm(_center(self.center, n))) + self.radii[-1]

    def nonneg(self):
        ok = min(self.values) >= 0
        return ok and (self.tail_exp is None or self.tail_coef >= 0)

    def to_string(self):
        s = "shell:" + ",".join(_fmt(r) for r in self.radii) + ";"
        s += ",".join(_fmt(v) for v in self.values)
        if self.tail_exp is not None:
            s += f";tail={_fmt(self.tail_coef)},{_fmt(self.tail_exp)}"
        return s + _fmt_center(self.center)


_EXPR_NAMES = {
    name: getattr(np, name)
    for name in ("sin", "cos", "tan", "exp", "log", "sqrt", "abs", "arctan", "sinh", "cosh", "tanh", "pi", "minimum", "maximum", "where", "sign")
}


@dataclass(frozen=True)
class Expression(ExteriorModel):
    """Numpy expression in ``x`` (array), ``x1..x3`` and ``r`` evaluated at ``scale*y + shift``.

    ``growth`` is the caller's bound on the power growth at infinity.
    ``far_mean``, when given, is the average value of an oscillating
    exterior far away; far-field tails then integrate numerically to a large
    radius and use this mean beyond it.
    """

    source: str
    growth: float = 0.0
    scale: float = 1.0
    shift: Optional[tuple] = None
    factor: float = 1.0
    far_mean: Optional[float] = None

    @cached_property
    def _code(self):
        try:
            return compile(self.source, "<exterior>", "eval")
        except SyntaxError as exc:
            raise GridFormatError(f"bad expression {self.source!r}: {exc.msg}") from None

    def at(self, pts):
        pts = np.asarray(pts, dtype=float)
        y = self.scale * pts + (0.0 if self.shift is None else np.asarray(self.shift))
        env = dict(_EXPR_NAMES)
        env["x"] = y
        env["r"] = np.linalg.norm(y, axis=1)
        for i in range(y.shape[1]):
            env[f"x{i + 1}"] = y[:, i]
        val = eval(self._code, {"__builtins__": {}}, env)
        return self.factor * np.broadcast_to(np.asarray(val, dtype=float), (len(pts),)).copy()

    def pullback(self, scale, shift):
        old = np.zeros(len(shift)) if self.shift is None else np.asarray(self.shift)
        new_shift = self.scale * np.asarray(shift, float) + old
        return Expression(self.source, self.growth, self.scale * scale, tuple(new_shift.tolist()), self.factor, self.far_mean)

    def scaled(self, factor):
        mean = None if self.far_mean is None else self.far_mean * factor
        return Expression(self.source, self.growth, self.scale, self.shift, self.factor * factor, mean)

    def to_string(self):
        opts = [f"scale={_fmt(self.scale)}", f"factor={_fmt(self.factor)}", f"growth={_fmt(self.growth)}"]
        if self.shift is not None:
            opts.append("shift=" + ",".join(_fmt(v) for v in self.shift))
        if self.far_mean is not None:
            opts.append(f"mean={_fmt(self.far_mean)}")
        return f"expr({';'.join(opts)}):{self.source}"


@dataclass(frozen=True)
class Combination(ExteriorModel):
    """Linear combination of exterior models (in-memory only)."""

    terms: tuple  # ((coef, model), ...)

    @property
    def growth(self):
        return max((m.growth for c, m in self.terms if c != 0), default=-math.inf)

    def at(self, pts):
        out = np.zeros(len(pts))
        for c, m in self.terms:
            out += c * m.at(pts)
        return out

    def pullback(self, scale, shift):
        return Combination(tuple((c, m.pullback(scale, shift)) for c, m in self.terms))

    def scaled(self, factor):
        return Combination(tuple((c * factor, m) for c, m in self.terms))

    def kinks(self, n):
        return tuple(k for _, m in self.terms for k in m.kinks(n))

    def support_radius(self, n):
        return max((m.support_radius(n) for c, m in self.terms if c != 0), default=0.0)

    def nonneg(self):
        return all(c >= 0 and m.nonneg() for c, m in self.terms)

    def to_string(self):
        raise GridFormatError("linear combinations of exterior models are not serializable")


def _floats(text):
    return tuple(float(v) for v in text.split(",") if v.strip())


def parse_exterior(text: str) -> ExteriorModel:
    """Inverse of ``ExteriorModel.to_string``."""
    text = text.strip()
    try:
        if text == "zero":
            return Zero()
        if text.startswith("constant:"):
            return Constant(float(text[9:]))
        if text.startswith("expr("):
            m = re.match(r"expr\(([^)]*)\):(.*)$", text, re.S)
            if not m:
                raise ValueError("malformed expr model")
            opts = dict(kv.split("=", 1) for kv in m.group(1).split(";") if kv)
            shift = _floats(opts["shift"]) if "shift" in opts else None
            return Expression(
                m.group(2),
                float(opts.get("growth", 0.0)),
                float(opts.get("scale", 1.0)),
                shift,
                float(opts.get("factor", 1.0)),
                float(opts["mean"]) if "mean" in opts else None,
            )
        body, _, center = text.partition("@")
        center = _floats(center) if center else None
        if body.startswith("radial:"):
            coef, exp = _floats(body[7:])
            return RadialPower(coef, exp, center)
        if body.startswith("shell:"):
            parts = body[6:].split(";")
            radii, values = _floats(parts[0]), _floats(parts[1])
            tail_coef, tail_exp = 0.0, None
            for extra in parts[2:]:
                key, _, val = extra.partition("=")
                if key != "tail":
                    raise ValueError(f"unknown shell option {key!r}")
                tail_coef, tail_exp = _floats(val)
            return ShellTable(radii, values, center, tail_coef, tail_exp)
    except (ValueError, KeyError) as exc:
        raise GridFormatError(f"bad exterior model {text!r}: {exc}") from None
    raise GridFormatError(f"unknown exterior model {text!r}")


# --- grids and fields ------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    origin: tuple
    spacing: tuple
    shape: tuple

    def __post_init__(self):
        if not (len(self.origin) == len(self.spacing) == len(self.shape)):
            raise GridFormatError("origin, spacing and shape must have equal length")
        if any(h <= 0 or not math.isfinite(h) for h in self.spacing):
            raise GridFormatError("grid spacing must be positive")
        if any(m < 3 for m in self.shape):
            raise GridFormatError("grid needs at least 3 points per axis")

    @classmethod
    def cube(cls, n, half_width, h, center=None):
        m = int(round(2 * half_width / h)) + 1
        c = np.zeros(n) if center is None else np.asarray(center, float)
        return cls(tuple((c - half_width).tolist()), (float(h),) * n, (m,) * n)

    @property
    def n(self):
        return len(self.shape)

    @property
    def size(self):
        return int(np.prod(self.shape))

    @property
    def lo(self):
        return np.asarray(self.origin, float)

    @property
    def hi(self):
        return self.lo + np.asarray(self.spacing) * (np.asarray(self.shape) - 1)

    def axes(self):
        return [o + h * np.arange(m) for o, h, m in zip(self.origin, self.spacing, self.shape)]

    def points(self):
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([g.ravel() for g in mesh], axis=1)

    def contains(self, pts):
        pts = np.asarray(pts, float)
        return np.all((pts >= self.lo) & (pts <= self.hi), axis=1)

    def margin(self, x):
        """Distance from ``x`` to the box boundary measured in cells (min over axes)."""
        x = np.asarray(x, float)
        h = np.asarray(self.spacing)
        return float(np.min(np.minimum(x - self.lo, self.hi - x) / h))

    def nearest_index(self, x):
        idx = np.rint((np.asarray(x, float) - self.lo) / np.asarray(self.spacing)).astype(int)
        return tuple(np.clip(idx, 0, np.asarray(self.shape) - 1).tolist())

    def node(self, index):
        return np.array([ax[i] for ax, i in zip(self.axes(), index)])


def _lagrange_weights(t, q):
    """Weights of the q-point Lagrange interpolant on nodes 0..q-1 at ``t``."""
    w = np.ones((q,) + t.shape)
    for j in range(q):
        for k in range(q):
            if k != j:
                w[j] *= (t - k) / (j - k)
    return w


def cubic_interpolate(grid: Grid, values: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Tensor-product local cubic (4-point Lagrange) interpolation; stencils clamp at edges."""
    pts = np.asarray(pts, float)
    out = np.zeros(len(pts))
    if len(pts) == 0:
        return out
    starts, weights = [], []
    for d in range(grid.n):
        m = grid.shape[d]
        q = min(4, m)
        u = (pts[:, d] - grid.origin[d]) / grid.spacing[d]
        i0 = np.clip(np.floor(u).astype(int) - (q // 2 - 1), 0, m - q)
        starts.append(i0)
        weights.append(_lagrange_weights(u - i0, q))
    for combo in product(*[range(w.shape[0]) for w in weights]):
        idx = tuple(starts[d] + combo[d] for d in range(grid.n))
        wt = weights[0][combo[0]]
        for d in range(1, grid.n):
            wt = wt * weights[d][combo[d]]
        out += wt * values[idx]
    return out


class _Affine:
    """Callable ``x -> factor * f(scale * x + shift)``."""

    def __init__(self, f, scale, shift, factor, divisor=1.0):
        self.f, self.scale, self.shift, self.factor, self.divisor = f, scale, shift, factor, divisor

    def __call__(self, pts):
        out = self.factor * self.f(self.scale * np.asarray(pts, float) + self.shift)
        return out if self.divisor == 1.0 else out / self.divisor


class Field:
    """Function on R^n: box samples plus exterior model.

    Parameters
    ----------
    grid, values
        Uniform box grid and samples shaped ``grid.shape`` (row-major).
    exterior
        Model used outside the box.
    nonneg
        Assert nonnegativity; every sample (and the exterior model) is checked.
    kinks
        Surfaces (:class:`Sphere`, :class:`Plane`) where the field is not smooth;
        quadrature places panel breaks there.
    exact
        Optional vectorized callable ``(N, n) -> (N,)`` used inside the box in
        place of interpolation.
    s
        If given, 𝓛_{2s} admissibility of the exterior is checked.
    holder
        Hölder exponent tag of the data (1.0 for Lipschitz/smooth data).
    radial
        Field is radially symmetric about the origin (enables fast paths).
    """

    def __init__(
        self,
        grid: Grid,
        values,
        exterior: ExteriorModel = Zero(),
        *,
        nonneg: bool = False,
        kinks=(),
        exact: Optional[Callable] = None,
        s: Optional[float] = None,
        holder: Optional[float] = None,
        radial: bool = False,
    ):
        values = np.array(values, dtype=float)
        if values.shape != tuple(grid.shape):
            raise GridFormatError(f"values shape {values.shape} does not match grid {grid.shape}")
        if not np.all(np.isfinite(values)):
            raise Inadmissible("field samples must be finite")
        if nonneg and (np.any(values < 0) or not exterior.nonneg()):
            raise Inadmissible("nonneg flag set but the field has negative values")
        if s is not None and not exterior.growth < 2.0 * s:
            raise Inadmissible(f"exterior growth {exterior.growth} is not below 2s = {2 * s}: not in L_2s")
        values.setflags(write=False)
        self._grid = grid
        self._values = values
        self._exterior = exterior
        self._kinks = tuple(kinks)
        self._exact = exact
        self._scale = 1.0
        self._shift = np.zeros(grid.n)
        self._factor = 1.0
        self._divisor = 1.0
        self.nonneg = bool(nonneg)
        self.holder = holder
        self.radial = bool(radial)

    # construction helpers
    @classmethod
    def from_function(cls, func, grid, exterior=Zero(), exact=True, **kw):
        values = np.asarray(func(grid.points()), float).reshape(grid.shape)
        return cls(grid, values, exterior, exact=func if exact else None, **kw)

    def _derive(self, scale, shift, factor, **overrides):
        new = object.__new__(Field)
        new.__dict__.update({k: v for k, v in self.__dict__.items() if k.startswith("_") and not k.startswith("__")})
        for key in ("grid", "values", "exterior", "kinks"):
            new.__dict__.pop(key, None)
        new._scale, new._shift, new._factor = scale, shift, factor
        new.nonneg = overrides.get("nonneg", self.nonneg)
        new.holder = self.holder
        new.radial = overrides.get("radial", self.radial)
        return new

    # public transformed views
    @property
    def n(self):
        return self._grid.n

    @cached_property
    def grid(self) -> Grid:
        if self._scale == 1.0 and not np.any(self._shift):
            return self._grid
        o = (self._grid.lo - self._shift) / self._scale
        h = np.asarray(self._grid.spacing) / self._scale
        return Grid(tuple(o.tolist()), tuple(h.tolist()), self._grid.shape)

    @cached_property
    def values(self) -> np.ndarray:
        if self._factor == 1.0 and self._divisor == 1.0:
            return self._values
        v = self._factor * self._values / self._divisor
        v.setflags(write=False)
        return v

    @cached_property
    def exterior(self) -> ExteriorModel:
        m = self._exterior
        if self._scale != 1.0 or np.any(self._shift):
            m = m.pullback(self._scale, self._shift)
        c = self._factor / self._divisor
        return m if c == 1.0 else m.scaled(c)

    @cached_property
    def kinks(self):
        ks = self._kinks + tuple(self._exterior.kinks(self.n))
        if self._scale != 1.0 or np.any(self._shift):
            ks = tuple(k.pullback(self._scale, self._shift) for k in ks)
        return ks

    @property
    def own_kinks(self):
        return tuple(k.pullback(self._scale, self._shift) for k in self._kinks)

    @property
    def has_exact(self):
        return self._exact is not None

    @property
    def exact(self):
        if self._exact is None:
            return None
        return _Affine(self._exact, self._scale, self._shift, self._factor, self._divisor)

    @property
    def growth(self):
        return self._exterior.growth

    # evaluation
    def at(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        y = self._scale * pts + self._shift if (self._scale != 1.0 or np.any(self._shift)) else pts
        inside = self._grid.contains(y)
        out = np.empty(len(y))
        if np.any(inside):
            yi = y[inside]
            out[inside] = self._exact(yi) if self._exact is not None else cubic_interpolate(self._grid, self._values, yi)
        if not np.all(inside):
            out[~inside] = self._exterior.at(y[~inside])
        if self._factor != 1.0:
            out *= self._factor
        if self._divisor != 1.0:
            out /= self._divisor
        return out[0] if single else out

    def __call__(self, pts):
        return self.at(pts)

    # transformations
    def pullback(self, scale, shift) -> "Field":
        """``x -> u(scale * x + shift)`` with ``scale > 0``; exact, no resampling."""
        shift = np.asarray(shift, float)
        new_scale = self._scale * scale
        new_shift = self._scale * shift + self._shift
        return self._derive(new_scale, new_shift, self._factor, radial=self.radial and not np.any(shift))

    def scaled(self, c) -> "Field":
        return self._derive(self._scale, self._shift, self._factor * c, nonneg=self.nonneg and c >= 0)

    def divided(self, c) -> "Field":
        """``u / c`` with true division, so ``u(x) / u(x)`` is exactly 1."""
        if not c > 0:
            raise Inadmissible("divisor must be positive")
        new = self._derive(self._scale, self._shift, self._factor)
        new._divisor = self._divisor * c
        return new

    def translated(self, z) -> "Field":
        """``x -> u(x - z)``."""
        return self.pullback(1.0, -np.asarray(z, float))

    @staticmethod
    def combine(terms) -> "Field":
        """Linear combination ``sum c_i u_i`` of fields sharing one public grid."""
        terms = [(float(c), u) for c, u in terms]
        g = terms[0][1].grid
        if any(u.grid != g for _, u in terms):
            raise GridFormatError("combined fields must share a grid")
        values = sum(c * u.values for c, u in terms)
        ext = Combination(tuple((c, u.exterior) for c, u in terms))
        exact = None
        if all(u.has_exact for _, u in terms):
            fns = [(c, u.exact) for c, u in terms]
            exact = lambda pts: sum(c * f(pts) for c, f in fns)  # noqa: E731
        kinks = tuple(k for _, u in terms for k in u.own_kinks)
        hold = [u.holder for _, u in terms]
        return Field(
            g,
            values,
            ext,
            kinks=kinks,
            exact=exact,
            holder=None if None in hold else min(hold),
            radial=all(u.radial for _, u in terms),
        )

    def __repr__(self):
        return f"Field(grid={self.grid}, exterior={self.exterior!r}, exact={self.has_exact})"


# --- grid file -------------------------------------------------------------


def write_grid(u: Field, path) -> None:
    g = u.grid
    lines = [
        GRID_HEADER,
        f"dim={g.n}",
        "origin=" + ",".join(_fmt(v) for v in g.origin),
        "spacing=" + ",".join(_fmt(v) for v in g.spacing),
        "shape=" + ",".join(str(m) for m in g.shape),
        "exterior=" + u.exterior.to_string(),
        f"nonneg={int(u.nonneg)}",
    ]
    lines.extend(_fmt(v) for v in np.asarray(u.values).ravel())
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_grid(path, s=None) -> Field:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or not lines[0].startswith("# fraclap-grid"):
        raise GridFormatError("missing fraclap-grid header")
    if lines[0].strip() != GRID_HEADER:
        raise GridFormatError(f"unsupported grid version: {lines[0].strip()!r}")
    keys = ["dim", "origin", "spacing", "shape", "exterior", "nonneg"]
    meta = {}
    for i, key in enumerate(keys, start=1):
        if i >= len(lines) or not lines[i].startswith(key + "="):
            raise GridFormatError(f"line {i + 1}: expected {key}=")
        meta[key] = lines[i][len(key) + 1 :]
    n = int(meta["dim"])
    grid = Grid(_floats(meta["origin"]), _floats(meta["spacing"]), tuple(int(v) for v in meta["shape"].split(",")))
    if grid.n != n:
        raise GridFormatError("dim does not match origin/spacing/shape")
    body = [ln for ln in lines[len(keys) + 1 :] if ln.strip()]
    if len(body) != grid.size:
        raise GridFormatError(f"expected {grid.size} values, found {len(body)}")
    values = np.array([float(v) for v in body]).reshape(grid.shape)
    return Field(grid, values, parse_exterior(meta["exterior"]), nonneg=meta["nonneg"] == "1", s=s)


# --- weighted L1 norm -------------------------------------------------------


def _box_corner_breaks(grid: Grid, c0):
    lo, hi = grid.lo, grid.hi
    angs = []
    for corner in product(*zip(lo, hi)):
        d = np.asarray(corner) - c0
        angs.append(math.atan2(d[1], d[0]))
    return angs


def l2s_norm(u: Field, params: FracParams, quad: QuadSpec = QuadSpec()) -> float:
    """Weighted norm ``int |u| / (1 + |x|^(n+2s)) dx``.

    The box part uses a per-cell Gauss rule on the field's interpolant; the
    exterior part integrates the exterior model along rays from the box centre.
    """
    n, s = params.n, params.s
    g = u.grid
    npow = n + 2 * s

    def weight(pts):
        return 1.0 / (1.0 + np.linalg.norm(pts, axis=1) ** npow)

    # interior: tensor Gauss rule per cell, chunked along the first axis
    x4, w4 = qd.gauss_legendre(4)
    interior = 0.0
    axes = g.axes()
    cell_nodes = []
    for d in range(n):
        h = g.spacing[d]
        a = axes[d][:-1]
        cell_nodes.append(((a[:, None] + 0.5 * h * (x4 + 1.0)).ravel(), np.tile(0.5 * h * w4, len(a))))
    first_nodes, first_w = cell_nodes[0]
    rest = cell_nodes[1:]
    if rest:
        mesh = np.meshgrid(*[c[0] for c in rest], indexing="ij")
        rest_pts = np.stack([m.ravel() for m in mesh], axis=1)
        wmesh = np.meshgrid(*[c[1] for c in rest], indexing="ij")
        rest_w = np.prod(np.stack([m.ravel() for m in wmesh], axis=1), axis=1)
    else:
        rest_pts = np.zeros((1, 0))
        rest_w = np.ones(1)
    chunk = max(1, 200_000 // len(rest_w))
    for i in range(0, len(first_nodes), chunk):
        x1 = first_nodes[i : i + chunk]
        pts = np.concatenate([np.repeat(x1, len(rest_w))[:, None], np.tile(rest_pts, (len(x1), 1))], axis=1)
        wts = np.repeat(first_w[i : i + chunk], len(rest_w)) * np.tile(rest_w, len(x1))
        interior += float(np.sum(wts * np.abs(u.at(pts)) * weight(pts)))

    ext = u.exterior
    if isinstance(ext, Zero):
        return interior
    c0 = 0.5 * (g.lo + g.hi)
    order = quad.gl_order
    if n == 1:
        dirs, wdir = qd.sphere_rule(1, 1)
    elif n == 2:
        dirs, wdir = qd.circle_rule(_box_corner_breaks(g, c0), order=order, panels=8)
    else:
        dirs, wdir = qd.sphere_rule(3, 2 * quad.angular(3))
    support = ext.support_radius(n)
    decay = 2 * s - ext.growth
    exterior = 0.0
    for theta, wt in zip(dirs, wdir):
        _, rho0 = qd.ray_box(c0, theta, g.lo, g.hi)
        breaks = [t for k in ext.kinks(n) for t in k.hits(c0, theta) if t > rho0]
        far = rho0 * 2.0**10
        stop = min(far, np.linalg.norm(c0) + support) if math.isfinite(support) else far
        if stop <= rho0:
            continue
        edges = qd.graded_edges(rho0, stop, base=rho0 * 2.0 ** np.arange(11), breaks=breaks)
        rho, wr = qd.panel_rule(edges, order)
        if not math.isfinite(support) or np.linalg.norm(c0) + support > far:
            r2, w2 = qd.infinite_rule(far, decay, order)
            rho, wr = np.concatenate([rho, r2]), np.concatenate([wr, w2])
        pts = c0 + rho[:, None] * theta
        vals = np.abs(ext.at(pts)) * weight(pts) * rho ** (n - 1)
        exterior += wt * float(np.sum(wr * vals))
    return interior + exterior
