"""Gamma-ratio sequences of the walk and their limits.

All sequences are 1-indexed and stored with a leading zero entry, so
``tables.a[n]`` is ``a_n`` and ``tables.A[0] == 0``.
"""

from __future__ import annotations

import csv
import enum
import functools
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple

import numpy as np
from scipy import integrate
from scipy.special import digamma, poch, rgamma
from scipy.special import gamma as gamma_fn

HYP_TAIL_TOL = 1e-12
# summation length before the Euler-Maclaurin tail takes over
_HYP_MAX_TERMS = 4096


@dataclass(frozen=True, eq=False)
class SequenceTables:
    """Precomputed ``a, A, v, f, b, B`` up to ``horizon`` (arrays of length ``horizon + 1``)."""

    alpha: float
    gamma: float
    horizon: int
    a: np.ndarray
    A: np.ndarray
    v: np.ndarray
    f: np.ndarray
    b: np.ndarray
    B: np.ndarray


def _product_sequence(x: float, horizon: int) -> np.ndarray:
    out = np.zeros(horizon + 1)
    out[1] = 1.0
    if horizon > 1:
        k = np.arange(1, horizon, dtype=np.float64)
        out[2:] = np.cumprod(k / (k + x))
    return out


def _prefix(x: np.ndarray) -> np.ndarray:
    out = np.cumsum(x)
    out[0] = 0.0
    return out


@functools.lru_cache(maxsize=4)
def build_tables(alpha: float, gamma: float, horizon: int) -> SequenceTables:
    """Build the sequences by multiplicative recursion ``a_{k+1} = a_k k / (k + alpha)``.

    Results are cached per ``(alpha, gamma, horizon)`` and returned read-only.
    """
    horizon = int(horizon)
    if horizon < 1:
        raise ValueError(f"horizon must be >= 1, got {horizon}")
    if not abs(alpha) < 1:
        raise ValueError(f"|alpha| < 1 required, got {alpha}")
    if not 0 <= gamma < 1:
        raise ValueError(f"0 <= gamma < 1 required, got {gamma}")
    a = _product_sequence(alpha, horizon)
    b = _product_sequence(gamma, horizon)
    A = _prefix(a)
    v = _prefix(a * a)
    f = np.zeros_like(a)
    f[1:] = a[1:] ** 2 / v[1:]
    B = _prefix(b)
    for arr in (a, A, v, f, b, B):
        arr.flags.writeable = False
    return SequenceTables(float(alpha), float(gamma), horizon, a, A, v, f, b, B)


def a_gamma_quotient(n, alpha: float):
    """``Gamma(n) Gamma(alpha+1) / Gamma(n+alpha)``; the cross-check form of ``a_n``."""
    return gamma_fn(alpha + 1.0) / poch(np.asarray(n, dtype=np.float64), alpha)


def a_ratio_identity(n: int, alpha: float) -> float:
    """Closed form of ``A_n / (n a_n)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if alpha == 0:
        return 1.0
    # Gamma(n+alpha) / (Gamma(n+1) Gamma(alpha))
    ratio = poch(float(n) + 1.0, alpha - 1.0) * rgamma(alpha)
    return (ratio - 1.0) / (alpha - 1.0)


class LimitKind(str, enum.Enum):
    POWER_LAW = "power_law"  # v_n / n^(1-2 alpha) -> value
    LOG = "log"  # v_n / log n -> value
    CONSTANT = "constant"  # v_n -> value


class VLimit(NamedTuple):
    kind: LimitKind
    value: float


def v_limit(alpha: float) -> VLimit:
    if not abs(alpha) < 1:
        raise ValueError(f"|alpha| < 1 required, got {alpha}")
    if abs(alpha - 0.5) <= 1e-12:
        return VLimit(LimitKind.LOG, math.pi / 4.0)
    if alpha < 0.5:
        return VLimit(LimitKind.POWER_LAW, gamma_fn(alpha + 1.0) ** 2 / (1.0 - 2.0 * alpha))
    return VLimit(LimitKind.CONSTANT, hyp3f2_unit(alpha))


def _term(x, alpha: float):
    """``(Gamma(alpha+1) Gamma(x+1) / Gamma(x+alpha+1))^2`` for real ``x >= 0``."""
    return (gamma_fn(alpha + 1.0) / poch(np.asarray(x, dtype=np.float64) + 1.0, alpha)) ** 2


def _tail_integral(alpha: float, start: float) -> float:
    # x = start * s^(-1/(2 alpha - 1)) maps [start, inf) onto (0, 1] and
    # leaves a bounded, smooth integrand
    e = 2.0 * alpha - 1.0
    scale = start ** (1.0 - 2.0 * alpha) / e
    g_inf = gamma_fn(alpha + 1.0) ** 2

    def integrand(s: float) -> float:
        log_x = math.log(start) - math.log(s) / e if s > 0 else math.inf
        if log_x > 35.0:
            # x^(2 alpha) * term(x) = g_inf (1 + O(1/x))
            return g_inf * scale
        x = math.exp(log_x)
        return float(_term(x, alpha)) * x ** (2.0 * alpha) * scale

    val, _ = integrate.quad(integrand, 0.0, 1.0, epsabs=1e-14, epsrel=1e-12, limit=200)
    return val


def hyp3f2_unit(alpha: float) -> float:
    """``3F2(1, 1, 1; alpha+1, alpha+1; 1) = sum_k (Gamma(alpha+1) k! / Gamma(k+alpha+1))^2``.

    Terms follow ``t_{k+1} = t_k ((k+1)/(k+1+alpha))^2``.  Summation stops
    once the integral-comparison tail bound ``t_k k / (2 alpha - 1)`` drops
    below ``1e-12``; terms decay only like ``k^(-2 alpha)``, so in practice the
    series is cut after a few thousand terms and the remainder is added with an
    Euler-Maclaurin estimate (integral + two boundary terms).
    """
    if not alpha > 0.5:
        raise ValueError(f"series diverges unless alpha > 1/2, got {alpha}")
    e = 2.0 * alpha - 1.0
    total = 0.0
    comp = 0.0
    t = 1.0
    k = 0
    while True:
        y = t - comp
        s = total + y
        comp = (s - total) - y
        total = s
        k += 1
        t *= (k / (k + alpha)) ** 2
        if t * k / e < HYP_TAIL_TOL:
            return total + t
        if k >= _HYP_MAX_TERMS:
            break
    fk = float(_term(k, alpha))
    dfk = 2.0 * fk * (digamma(k + 1.0) - digamma(k + 1.0 + alpha))
    return total + _tail_integral(alpha, float(k)) + fk / 2.0 - dfk / 12.0


def dump_tables_csv(tables: SequenceTables, path, indices: Iterable[int] | None = None) -> None:
    """Write ``n, a, A, v, f, b, B`` rows at the given (default: log-spaced) indices."""
    if indices is None:
        indices = np.unique(np.geomspace(1, tables.horizon, num=min(tables.horizon, 200)).astype(int))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["n", "a", "A", "v", "f", "b", "B"])
        for n in indices:
            n = int(n)
            if not 1 <= n <= tables.horizon:
                raise IndexError(f"index {n} outside 1..{tables.horizon}")
            w.writerow([n] + [repr(float(getattr(tables, k)[n])) for k in ("a", "A", "v", "f", "b", "B")])
