"""Closed-form kernels: operator constant, ball Poisson kernel, Riesz kernel, bulk profile.

Point arguments broadcast: ``x`` and ``y`` may be single points ``(n,)`` or
stacks ``(N, n)``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy import integrate, special

from .core import FracParams, QuadSpec
from .errors import DomainError, QuadratureNotConverged, RieszInvalid, Singular, UnsupportedOrder
from .quadrature import sphere_area


def _quad(f, a, b, tol, epsabs=0.0, **kw):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        return integrate.quad(f, a, b, epsabs=epsabs, epsrel=min(tol, 1e-10), limit=400, **kw)[:2]


def _versine_ratio(t):
    # (1 - cos t) / t^2 without cancellation
    if t == 0.0:
        return 0.5
    h = math.sin(0.5 * t) / t
    return 2.0 * h * h


@lru_cache(maxsize=256)
def _normalization(n, s, tol):
    # radial factor: int_0^inf (1 - cos t) t^(-1-2s) dt
    near, e1 = _quad(_versine_ratio, 0.0, 1.0, tol, weight="alg", wvar=(1.0 - 2.0 * s, 0.0))
    osc, e2 = _quad(lambda t: t ** (-1.0 - 2.0 * s), 1.0, math.inf, tol, epsabs=1e-14, weight="cos", wvar=1.0)
    radial = near + 1.0 / (2.0 * s) - osc
    # angular factor: int_{S^{n-1}} |theta_1|^(2s)
    if n == 1:
        ang, e3 = 2.0, 0.0
    elif n == 2:
        quarter, e3 = _quad(lambda p: math.cos(p) ** (2.0 * s), 0.0, math.pi / 2, tol)
        ang, e3 = 4.0 * quarter, 4.0 * e3
    else:
        ang, e3 = 4.0 * math.pi / (2.0 * s + 1.0), 0.0
    total = radial * ang
    err = (e1 + e2) * ang + radial * e3
    if not err <= tol * abs(total):
        raise QuadratureNotConverged("normalization integral did not converge", 1.0 / total, err / total**2)
    return 1.0 / total


def normalization_constant(params: FracParams, quad: QuadSpec = QuadSpec()) -> float:
    """Reciprocal of ``int (1 - cos z_1) / |z|^(n+2s) dz``."""
    return _normalization(params.n, params.s, quad.tol)


def _hyp_near_one(lam, w):
    """``2F1(-lam, -lam; 1; 1 - w)`` from the connection formula at ``z = 1`` (``1 + 2 lam`` non-integer)."""
    a = -lam
    e = 1.0 + 2.0 * lam  # c - a - b
    g = math.gamma
    c1 = g(e) / g(1.0 - a) ** 2
    c2 = g(-e) / g(a) ** 2
    return c1 * special.hyp2f1(a, a, 1.0 - e, w) + c2 * w**e * special.hyp2f1(1.0 - a, 1.0 - a, 1.0 + e, w)


def sphere_mean_power(n, d, rho, gamma, diff=None):
    """``int_{S^{n-1}} |d e + rho theta|^gamma dtheta`` for a unit vector ``e``.

    ``rho`` may be an array; ``diff`` optionally supplies ``rho - d`` computed
    without cancellation, which keeps the result accurate next to ``rho = d``.
    """
    rho = np.asarray(rho, dtype=float)
    gap = np.abs(rho - d) if diff is None else np.abs(np.asarray(diff, dtype=float))
    if n == 1:
        out = (rho + d) ** gamma + gap**gamma
    elif d == 0.0:
        out = sphere_area(n) * rho**gamma
    elif n == 2:
        big, small = np.maximum(rho, d), np.minimum(rho, d)
        lam = 0.5 * gamma
        z = (small / big) ** 2
        w = gap * (big + small) / big**2
        e = 1.0 + gamma
        if abs(e - round(e)) > 1e-9:
            near = w < 0.5
            F = np.empty_like(z)
            F[~near] = special.hyp2f1(-lam, -lam, 1.0, z[~near])
            F[near] = _hyp_near_one(lam, w[near])
        else:
            # gamma = -1: the hypergeometric factor is (2/pi) K(z), K the complete elliptic integral
            F = (2.0 / math.pi) * special.ellipkm1(w)
        out = 2.0 * math.pi * big**gamma * F
    else:
        g2 = gamma + 2.0
        out = 2.0 * math.pi / (g2 * rho * d) * ((rho + d) ** g2 - gap**g2)
    return float(out) if out.ndim == 0 else out


def poisson_constant(params: FracParams) -> float:
    n, s = params.n, params.s
    return math.gamma(n / 2.0) * math.sin(math.pi * s) / math.pi ** (n / 2.0 + 1.0)


def g0_constant(params: FracParams) -> float:
    n, s = params.n, params.s
    return 2.0 ** (-2.0 * s) * math.gamma(n / 2.0) / (math.gamma((n + 2.0 * s) / 2.0) * math.gamma(1.0 + s))


def _pts(a):
    return np.asarray(a, dtype=float)


def _sq(a):
    return np.sum(a * a, axis=-1)


def poisson_kernel(x, y, params: FracParams):
    x, y = _pts(x), _pts(y)
    x2 = _sq(x)
    if np.any(x2 >= 1.0):
        raise DomainError("Poisson kernel needs |x| < 1")
    y2 = _sq(y)
    outside = y2 > 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(outside, (1.0 - x2) / np.where(outside, y2 - 1.0, 1.0), 0.0)
        dist = _sq(x - y) ** (params.n / 2.0)
        val = poisson_constant(params) * ratio**params.s / dist
    return np.where(outside, val, 0.0) if np.ndim(val) else (float(val) if outside else 0.0)


def _check_pair(x, y, xmax=1.0):
    if np.any(_sq(x) >= xmax * xmax):
        raise DomainError(f"need |x| < {xmax}")
    if np.any(_sq(y) <= 1.0):
        raise DomainError("need |y| > 1")


def poisson_gradient_factor(x, y, params: FracParams):
    """Vector ``F`` with ``grad_x P = F * P``."""
    x, y = _pts(x), _pts(y)
    _check_pair(x, y)
    z = x - y
    q = (1.0 - _sq(x))[..., None]
    r2 = _sq(z)[..., None]
    return -2.0 * params.s * x / q - params.n * z / r2


def _axes_of(multi_index):
    axes = []
    for i, c in enumerate(multi_index):
        if c < 0:
            raise UnsupportedOrder("multi-index entries must be nonnegative")
        axes.extend([i] * int(c))
    return axes


def poisson_derivative(x, y, multi_index, params: FracParams) -> float:
    """``D^beta_x P(x, y)`` for ``|beta| <= 3`` via the factor recursion."""
    x, y = _pts(x), _pts(y)
    if len(multi_index) != params.n:
        raise UnsupportedOrder("multi-index length must equal n")
    axes = _axes_of(multi_index)
    if len(axes) > 3:
        raise UnsupportedOrder(f"order {len(axes)} > 3 is not supported")
    _check_pair(x, y, 0.5)
    P = poisson_kernel(x, y, params)
    if not axes:
        return float(P)
    s, n = params.s, params.n
    z = x - y
    q = 1.0 - float(_sq(x))
    r2 = float(_sq(z))
    F = poisson_gradient_factor(x, y, params)

    def d(a, b):
        return 1.0 if a == b else 0.0

    def dF(i, j):
        t1 = d(i, j) / q + 2.0 * x[i] * x[j] / q**2
        t2 = d(i, j) / r2 - 2.0 * z[i] * z[j] / r2**2
        return -2.0 * s * t1 - n * t2

    def ddF(i, j, k):
        t1 = 2.0 * d(i, j) * x[k] / q**2 + 2.0 * (d(i, k) * x[j] + x[i] * d(j, k)) / q**2 + 8.0 * x[i] * x[j] * x[k] / q**3
        t2 = -2.0 * d(i, j) * z[k] / r2**2 - 2.0 * (d(i, k) * z[j] + z[i] * d(j, k)) / r2**2 + 8.0 * z[i] * z[j] * z[k] / r2**3
        return -2.0 * s * t1 - n * t2

    if len(axes) == 1:
        return float(F[axes[0]] * P)
    i, j = axes[0], axes[1]
    second = dF(i, j) + F[i] * F[j]
    if len(axes) == 2:
        return float(second * P)
    k = axes[2]
    third = ddF(i, j, k) + dF(i, k) * F[j] + F[i] * dF(j, k) + second * F[k]
    return float(third * P)


def poisson_derivative_ratio(x, y, multi_index, params: FracParams) -> float:
    """Pointwise ratio ``|D^beta P| / P``."""
    return abs(poisson_derivative(x, y, multi_index, params)) / float(poisson_kernel(x, y, params))


def bulk_solution_g0(x, params: FracParams):
    x = _pts(x)
    r2 = _sq(x)
    val = g0_constant(params) * np.maximum(1.0 - r2, 0.0) ** params.s
    return float(val) if np.ndim(val) == 0 else val


# --- Riesz constant calibration ---------------------------------------------


def _ball_potential_profile(n, s, rho):
    """``int_{B_1} |x - y|^(2s-n) dy`` at ``|x| = rho`` (exact up to quadrature)."""
    a = 2.0 * s
    if n == 1:
        if rho <= 1.0:
            return ((1 + rho) ** a + (1 - rho) ** a) / a
        return ((rho + 1) ** a - (rho - 1) ** a) / a
    if rho < 1.0:
        c = 1.0 - rho * rho

        def ray(t):  # t = cos of angle between ray and -x direction
            return (rho * t + math.sqrt(rho * rho * t * t + c)) ** a

        if n == 2:
            val, _ = _quad(lambda p: ray(math.cos(p)), 0.0, math.pi, 1e-13)
            return 2.0 * val / a
        val, _ = _quad(ray, -1.0, 1.0, 1e-13)
        return 2.0 * math.pi * val / a
    c = rho * rho - 1.0
    psi_max = math.asin(1.0 / rho)

    def chord(t):
        b = rho * t
        disc = math.sqrt(max(b * b - c, 0.0))
        return (b + disc) ** a - (b - disc) ** a

    if n == 2:
        # psi = psi_max * (1 - (1 - tau)^2) removes the square-root edge
        def integrand(tau):
            psi = psi_max * (1.0 - (1.0 - tau) ** 2)
            return chord(math.cos(psi)) * psi_max * 2.0 * (1.0 - tau)

        val, _ = _quad(integrand, 0.0, 1.0, 1e-13)
        return 2.0 * val / a
    t0 = math.cos(psi_max)
    val, _ = _quad(chord, t0, 1.0, 1e-13)
    return 2.0 * math.pi * val / a


@lru_cache(maxsize=64)
def _riesz_const(n, s, tol):
    c_ns = _normalization(n, s, 1e-10)
    i0 = _ball_potential_profile(n, s, 0.0)
    inner, e1 = _quad(lambda r: (i0 - _ball_potential_profile(n, s, r)) * r ** (-1.0 - 2.0 * s), 0.0, 1.0, 1e-11)
    outer, e2 = _quad(lambda r: _ball_potential_profile(n, s, r) * r ** (-1.0 - 2.0 * s), 1.0, math.inf, 1e-11)
    half_area = sphere_area(n) if n > 1 else 2.0
    lap = c_ns * half_area * (inner + i0 / (2.0 * s) - outer)
    err = c_ns * half_area * (e1 + e2)
    if not err <= tol * abs(lap):
        raise QuadratureNotConverged("Riesz calibration did not converge", 1.0 / lap, err)
    return 1.0 / lap


def riesz_constant(params: FracParams, quad: QuadSpec = QuadSpec()) -> float:
    """Calibrated constant ``A`` with ``(-Lap)^s [A * int_{B_1} |. - y|^(2s-n) dy] = 1`` at the origin."""
    params.require_riesz()
    return _riesz_const(params.n, params.s, quad.tol)


def riesz_kernel(x, y, params: FracParams):
    if not params.riesz_ok:
        raise RieszInvalid(f"Riesz kernel needs n > 2s, got n={params.n}, s={params.s}")
    r2 = _sq(_pts(x) - _pts(y))
    if np.any(r2 == 0.0):
        raise Singular("Riesz kernel is singular at x = y")
    val = riesz_constant(params) * r2 ** (params.s - params.n / 2.0)
    return float(val) if np.ndim(val) == 0 else val


@dataclass(frozen=True)
class KernelConstants:
    """The four constants; ``riesz_const`` is ``None`` when ``n <= 2s``."""

    c_ns: float
    poisson_const: float
    g0_const: float
    riesz_const: Optional[float]


def kernel_constants(params: FracParams, quad: QuadSpec = QuadSpec()) -> KernelConstants:
    return KernelConstants(
        normalization_constant(params, quad),
        poisson_constant(params),
        g0_constant(params),
        riesz_constant(params, quad) if params.riesz_ok else None,
    )
