"""Catoni-style influence weights.

The weight kernel ``phi_prime`` equals ``(1 + x) / (1 + x + x**2 / 2)`` on
``[0, a]``, decays quadratically to zero on ``(a, b]`` and vanishes beyond
``b``. Arguments in ``[-1, 0)`` are first mapped to the nonnegative point on
the same level set of ``(1 + u) exp(-u - 1)``, which balances the left and
right tails of a unit exponential.
"""
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss

from . import _kernels

DEFAULT_A = 1.0
DEFAULT_B = 23.0 / 3.0


@dataclass(frozen=True)
class InfluenceShape:
    """Breakpoint ``a`` and support endpoint ``b`` of the weight kernel."""

    a: float = DEFAULT_A
    b: float = DEFAULT_B

    def __post_init__(self):
        if not (0.0 < self.a < self.b):
            raise ValueError(f"need 0 < a < b, got a={self.a}, b={self.b}")

    @property
    def peak_tail(self):
        """Value of the kernel at the breakpoint ``a``."""
        a = self.a
        return (1.0 + a) / (1.0 + a + 0.5 * a * a)


DEFAULT_SHAPE = InfluenceShape()


@dataclass(frozen=True)
class RhoPair:
    """Scales for negative (``rho1``) and nonnegative (``rho2``) arguments."""

    rho1: float = 1.0
    rho2: float = 1.0

    def __post_init__(self):
        if not (self.rho1 > 0.0 and self.rho2 > 0.0):
            raise ValueError(f"rho scales must be positive, got {self.rho1}, {self.rho2}")
        if not (np.isfinite(self.rho1) and np.isfinite(self.rho2)):
            raise ValueError("rho scales must be finite")

    def scaled(self, factor, cap=np.inf):
        return RhoPair(min(self.rho1 * factor, cap), min(self.rho2 * factor, cap))

    def to_list(self):
        return [self.rho1, self.rho2]


def _as_array(x):
    arr = np.asarray(x, dtype=np.float64)
    return arr, arr.ndim == 0


def _check_domain(arr):
    if not np.all(np.isfinite(arr)):
        raise ValueError("influence argument must be finite")
    if np.any(arr < -1.0):
        raise ValueError(f"influence argument below -1: min={arr.min()!r}")


def _nonneg_branch(u, shape):
    # u >= 0, possibly +inf
    a, b = shape.a, shape.b
    out = np.zeros_like(u)
    inner = u <= a
    ui = u[inner]
    out[inner] = (1.0 + ui) / (1.0 + ui + 0.5 * ui * ui)
    mid = (u > a) & (u <= b)
    um = u[mid]
    out[mid] = shape.peak_tail * (b - um) ** 2 / (b - a) ** 2
    return out


def reflect_negative(x):
    """Map ``x`` in ``[-1, 0)`` to ``x' >= 0`` with equal ``(1+u)exp(-u-1)``.

    ``x = 0`` maps to ``0`` and ``x = -1`` to ``+inf`` (so its weight is 0).
    """
    arr, scalar = _as_array(x)
    if not np.all(np.isfinite(arr)) or np.any(arr < -1.0) or np.any(arr > 0.0):
        raise ValueError("reflect_negative expects arguments in [-1, 0]")
    flat = arr.reshape(-1)
    out = _kernels.reflect(flat).reshape(arr.shape)
    return float(out) if scalar else out


def _reflect_unchecked(arr):
    flat = arr.reshape(-1)
    return _kernels.reflect(flat).reshape(arr.shape)


def phi_prime(x, shape=DEFAULT_SHAPE):
    """Weight kernel evaluated at ``x >= -1``; values lie in ``[0, 1]``."""
    arr, scalar = _as_array(x)
    _check_domain(arr)
    u = np.where(arr < 0.0, _reflect_unchecked(np.minimum(arr, 0.0)), arr)
    out = _nonneg_branch(u, shape)
    return float(out) if scalar else out


def phi_prime_scaled(x, rho=RhoPair(), shape=DEFAULT_SHAPE):
    """Two-sided scaled kernel: ``phi'(x/rho2)`` for ``x >= 0`` and
    ``phi'(x'/rho1)`` for ``x < 0`` where ``x'`` is the reflection of ``x``."""
    arr, scalar = _as_array(x)
    _check_domain(arr)
    neg = arr < 0.0
    u = np.empty_like(arr)
    u[~neg] = arr[~neg] / rho.rho2
    if neg.any():
        u[neg] = _reflect_unchecked(arr[neg]) / rho.rho1
    out = _nonneg_branch(u, shape)
    return float(out) if scalar else out


def _gauss_legendre_panels(edges, nodes_per_panel):
    x0, w0 = leggauss(nodes_per_panel)
    lo, hi = edges[:-1, None], edges[1:, None]
    half = 0.5 * (hi - lo)
    x = (half * x0[None, :] + 0.5 * (hi + lo)).ravel()
    w = (half * w0[None, :]).ravel()
    return x, w


def expect_exponential(func, quadrature_points=10_000, shape=DEFAULT_SHAPE, upper=None):
    """Integrate ``func(x) * exp(-x)`` over ``[0, upper]`` by composite
    Gauss-Legendre with 64 nodes per panel.

    Panels are aligned with the kernel's kinks at ``x = 1`` (reflection
    point), ``x = 1 + a`` and ``x = 1 + b``. ``upper`` defaults to ``1 + b``,
    beyond which any integrand carrying a ``phi'(x - 1)`` factor is zero.
    """
    if quadrature_points < 64:
        raise ValueError("need at least 64 quadrature points")
    if upper is None:
        upper = 1.0 + shape.b
    breaks = [0.0, 1.0, 1.0 + shape.a, 1.0 + shape.b]
    breaks = sorted({min(max(p, 0.0), upper) for p in breaks} | {upper})
    breaks = np.array(breaks)
    lengths = np.diff(breaks)
    n_panels = max(len(lengths), quadrature_points // 64)
    counts = np.maximum(1, np.round(n_panels * lengths / lengths.sum()).astype(int))
    edges = np.concatenate([np.linspace(lo, hi, c + 1)[:-1] for lo, hi, c in
                            zip(breaks[:-1], breaks[1:], counts)] + [[breaks[-1]]])
    x, w = _gauss_legendre_panels(edges, 64)
    return float(np.sum(w * func(x) * np.exp(-x)))


def catoni_unbiasedness_residual(quadrature_points=10_000, shape=DEFAULT_SHAPE):
    """Quadrature of ``E[(X - 1) phi'(X - 1)]`` for ``X ~ Exp(1)``; ~0."""
    if quadrature_points < 100:
        raise ValueError("quadrature_points must be >= 100")
    return expect_exponential(lambda x: (x - 1.0) * phi_prime(x - 1.0, shape),
                              quadrature_points, shape)


def kept_fraction(rho=RhoPair(), shape=DEFAULT_SHAPE, quadrature_points=10_000):
    """``E[X phi'_rho(X - 1)]`` for ``X ~ Exp(1)``: the expected share of
    time kept by the weights when the working model is exact."""
    upper = 1.0 + shape.b * rho.rho2
    return expect_exponential(lambda x: x * phi_prime_scaled(x - 1.0, rho, shape),
                              quadrature_points, shape, upper=upper)
