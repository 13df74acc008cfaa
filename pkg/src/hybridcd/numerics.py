"""Special functions, quadrature, root finding and random streams.

Everything else in the package is built on these few primitives. The
vectorised helpers (``ndtr``-style calls on arrays, :func:`bisect_array`)
are what the grid and quadrature code uses internally; the scalar entry
points validate their arguments and raise :class:`DomainError` on bad
input.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import special

__all__ = [
    "BracketError",
    "ConvergenceError",
    "DomainError",
    "RngStream",
    "Tolerance",
    "bisect_array",
    "draw_normal",
    "find_root",
    "integrate",
    "log_gamma",
    "std_normal_cdf",
    "std_normal_quantile",
]


class DomainError(ValueError):
    """Argument outside the mathematical domain of the function."""


class BracketError(ValueError):
    """The supplied interval does not bracket a sign change."""


class ConvergenceError(RuntimeError):
    """Iteration budget exhausted; ``estimate`` holds the last value."""

    def __init__(self, message: str, estimate: float):
        super().__init__(message)
        self.estimate = estimate


@dataclass(frozen=True)
class Tolerance:
    abs_tol: float = 1e-10
    rel_tol: float = 0.0
    max_iter: int = 200

    def __post_init__(self):
        if not self.abs_tol > 0:
            raise DomainError("abs_tol must be positive")
        if self.rel_tol < 0:
            raise DomainError("rel_tol must be nonnegative")
        if self.max_iter < 1:
            raise DomainError("max_iter must be at least 1")


# ---------------------------------------------------------------------------
# special functions

def std_normal_cdf(x):
    """Standard Normal CDF. Accepts scalars or arrays."""
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError("std_normal_cdf requires finite input")
    out = special.ndtr(arr)
    return float(out) if out.ndim == 0 else out


def std_normal_quantile(p):
    """Inverse of :func:`std_normal_cdf` on the open unit interval."""
    arr = np.asarray(p, dtype=float)
    if not np.all((arr > 0) & (arr < 1)):
        raise DomainError("std_normal_quantile requires 0 < p < 1")
    out = special.ndtri(arr)
    return float(out) if out.ndim == 0 else out


def log_gamma(x):
    """ln Gamma(x) for x > 0."""
    arr = np.asarray(x, dtype=float)
    if not np.all(arr > 0):
        raise DomainError("log_gamma requires x > 0")
    out = special.gammaln(arr)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# quadrature

# 7-point Gauss / 15-point Kronrod pair on [-1, 1] (QUADPACK qk15 constants).
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])

_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
_KRONROD_W = np.concatenate([_WGK[:-1], _WGK[::-1]])
_GAUSS_W = np.zeros(15)
# Gauss nodes are the odd-indexed Kronrod abscissae (x[1], x[3], x[5], 0).
_GAUSS_W[[1, 3, 5]] = _WG[:3]
_GAUSS_W[[13, 11, 9]] = _WG[:3]
_GAUSS_W[7] = _WG[3]


def _gk15(f, a: np.ndarray, b: np.ndarray):
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    x = mid[:, None] + half[:, None] * _NODES[None, :]
    fx = np.asarray(f(x.ravel()), dtype=float).reshape(x.shape)
    if not np.all(np.isfinite(fx)):
        raise DomainError("integrand returned non-finite values")
    kron = half * (fx @ _KRONROD_W)
    gauss = half * (fx @ _GAUSS_W)
    return kron, np.abs(kron - gauss)


def integrate(f: Callable[[np.ndarray], np.ndarray], lo: float, hi: float,
              tol: Tolerance | None = None,
              points: Sequence[float] | None = None,
              initial_panels: int = 1) -> float:
    """Adaptive Gauss-Kronrod (7/15) integral of ``f`` over ``[lo, hi]``.

    ``f`` is called with a 1-D array of abscissae and must return an array of
    the same length. All panels that still need work are evaluated in a
    single call, so a vectorised integrand pays the Python overhead once per
    refinement sweep rather than once per node.

    ``points`` are interior locations where the integrand may have kinks;
    they become panel boundaries from the start.

    Raises :class:`ConvergenceError` when ``tol.max_iter`` refinement sweeps
    do not bring the summed error estimate below
    ``max(tol.abs_tol, tol.rel_tol * |I|)``.
    """
    tol = tol or Tolerance(abs_tol=1e-10, max_iter=60)
    if not (math.isfinite(lo) and math.isfinite(hi)):
        raise DomainError("integration limits must be finite")
    if not lo < hi:
        raise DomainError("integrate requires lo < hi")

    edges = np.linspace(lo, hi, max(1, int(initial_panels)) + 1)
    if points is not None:
        inner = [p for p in points if lo < p < hi and math.isfinite(p)]
        edges = np.unique(np.concatenate([edges, inner]))
    a, b = edges[:-1], edges[1:]
    vals, errs = _gk15(f, a, b)

    done_val = 0.0
    done_err = 0.0
    for _ in range(tol.max_iter):
        total = done_val + vals.sum()
        err = done_err + errs.sum()
        target = max(tol.abs_tol, tol.rel_tol * abs(total))
        if err <= target:
            return float(total)
        # Panels whose error is small relative to their share of the interval
        # are frozen; the rest are bisected.
        share = target * (b - a) / (hi - lo)
        keep = errs <= share
        if keep.all():
            keep[np.argmax(errs)] = False
        done_val += vals[keep].sum()
        done_err += errs[keep].sum()
        a, b = a[~keep], b[~keep]
        m = 0.5 * (a + b)
        a, b = np.concatenate([a, m]), np.concatenate([m, b])
        vals, errs = _gk15(f, a, b)
    total = done_val + vals.sum()
    raise ConvergenceError(
        f"integrate: no convergence after {tol.max_iter} sweeps "
        f"(error estimate {done_err + errs.sum():.3g})", float(total))


# ---------------------------------------------------------------------------
# root finding

def find_root(f: Callable[[float], float], lo: float, hi: float,
              tol: Tolerance | None = None) -> float:
    """Bisection on a sign-changing bracket, finished with one secant step.

    The secant step is only accepted when it lands inside the final bracket
    and improves on both endpoints, so the result is always within
    ``tol.abs_tol`` of a sign change.
    """
    tol = tol or Tolerance(abs_tol=1e-12, max_iter=200)
    flo, fhi = f(lo), f(hi)
    if flo == 0:
        return lo
    if fhi == 0:
        return hi
    if not (np.sign(flo) * np.sign(fhi) < 0):
        raise BracketError(f"no sign change on [{lo}, {hi}]: f={flo:.3g}, {fhi:.3g}")
    a, b, fa, fb = lo, hi, flo, fhi
    for _ in range(tol.max_iter):
        if abs(b - a) <= tol.abs_tol + tol.rel_tol * abs(a):
            break
        m = 0.5 * (a + b)
        fm = f(m)
        if fm == 0:
            return m
        if np.sign(fm) == np.sign(fa):
            a, fa = m, fm
        else:
            b, fb = m, fm
    else:
        raise ConvergenceError("find_root: bracket did not shrink to tolerance", 0.5 * (a + b))
    if fb != fa:
        x = b - fb * (b - a) / (fb - fa)
        if min(a, b) <= x <= max(a, b):
            fx = f(x)
            if abs(fx) <= min(abs(fa), abs(fb)):
                return x
    return a if abs(fa) <= abs(fb) else b


def bisect_array(f: Callable[[np.ndarray], np.ndarray], lo: np.ndarray, hi: np.ndarray,
                 abs_tol: float = 1e-10, max_iter: int = 200) -> np.ndarray:
    """Elementwise bisection for a vector of independent 1-D problems.

    ``f`` maps an array of trial points to an array of function values; the
    i-th value must depend only on the i-th point. Each bracket
    ``[lo[i], hi[i]]`` must contain a sign change.
    """
    a = np.array(lo, dtype=float, copy=True)
    b = np.array(hi, dtype=float, copy=True)
    fa = f(a)
    fb = f(b)
    bad = np.sign(fa) * np.sign(fb) > 0
    if np.any(bad):
        raise BracketError(f"{int(bad.sum())} brackets without a sign change")
    for _ in range(max_iter):
        if np.all(np.abs(b - a) <= abs_tol):
            break
        m = 0.5 * (a + b)
        fm = f(m)
        left = np.sign(fm) == np.sign(fa)
        a = np.where(left, m, a)
        fa = np.where(left, fm, fa)
        b = np.where(left, b, m)
    else:
        raise ConvergenceError("bisect_array: iteration budget exhausted", float("nan"))
    return 0.5 * (a + b)


# ---------------------------------------------------------------------------
# random streams

@dataclass(frozen=True)
class RngStream:
    """Immutable descriptor of an independent random stream.

    The generator is rebuilt from ``(seed, stream_id)`` on every call to
    :meth:`generator`, so two equal descriptors always produce the same
    draws and can be shipped to worker processes freely.
    """

    seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("seed", "stream_id"):
            v = getattr(self, name)
            if not (0 <= v < 2**64):
                raise DomainError(f"{name} must be a 64-bit unsigned integer")

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, *keys: int) -> "RngStream":
        """Derive a new stream id from this one and extra integer keys."""
        ss = np.random.SeedSequence([self.stream_id, *keys])
        return RngStream(self.seed, int(ss.generate_state(1, dtype=np.uint64)[0]))


def draw_normal(stream: RngStream, mean: float, sd: float, n: int) -> np.ndarray:
    if not sd > 0:
        raise DomainError("sd must be positive")
    if n < 1:
        raise DomainError("n must be at least 1")
    return stream.generator().normal(mean, sd, size=n)
