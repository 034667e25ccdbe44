"""Exact law of ``(S_n, Z_n)`` by dynamic programming, and closed-form moments.

The DP state at level ``n`` is the pair of counts ``(N+, N-)`` with
``N+ + N- <= n``; mass is stored densely in an ``(n+1, n+1)`` array.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterator, Optional

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import poch

from .model import DerivedConstants, ModelParams, Regime, _nabla, derive_constants, superdiffusive_constants
from .special import SequenceTables, build_tables

DEFAULT_CAP = 500
MASS_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ExactDistribution:
    """Law of the walk after ``n`` steps; ``table[i, j] = P(N+ = i, N- = j)``."""

    n: int
    table: np.ndarray

    def __post_init__(self) -> None:
        total = float(self.table.sum())
        if abs(total - 1.0) > MASS_TOL:
            raise ArithmeticError(f"mass {total!r} at level {self.n} is not 1 within {MASS_TOL}")
        if (self.table < 0).any():
            raise ArithmeticError(f"negative mass at level {self.n}")

    def support(self):
        """Arrays ``(s, z, mass)`` over the nonzero entries."""
        i, j = np.nonzero(self.table)
        return i - j, i + j, self.table[i, j]

    @property
    def mass(self) -> dict:
        s, z, m = self.support()
        return {(int(a), int(b)): float(c) for a, b, c in zip(s, z, m)}

    def marginal_s(self) -> dict:
        out: dict = {}
        for (s, _), m in self.mass.items():
            out[s] = out.get(s, 0.0) + m
        return dict(sorted(out.items()))


def _step_table(table: np.ndarray, params: ModelParams, n: int) -> np.ndarray:
    """Push level-``n`` mass (``n >= 1``) through the transition kernel."""
    p, q, th = params.p, params.q, params.theta
    size = table.shape[0]
    i = np.arange(size, dtype=np.float64)[:, None]
    j = np.arange(size, dtype=np.float64)[None, :]
    p_plus = (1.0 - th) * p + th * (p * i + q * j) / n
    p_minus = (1.0 - th) * q + th * (q * i + p * j) / n
    p_zero = params.r + th * (p + q) * np.maximum(n - i - j, 0.0) / n
    out = np.zeros((size + 1, size + 1))
    out[:size, :size] += table * p_zero
    out[1:, :size] += table * p_plus
    out[:size, 1:] += table * p_minus
    return out


def exact_levels(params: ModelParams, n_max: int, cap: int = DEFAULT_CAP) -> Iterator[ExactDistribution]:
    """Yield the exact distributions for ``n = 1, ..., n_max``."""
    if n_max < 1:
        raise ValueError(f"n must be >= 1, got {n_max}")
    if n_max > cap:
        raise ValueError(f"n={n_max} exceeds the oracle cap {cap}; pass a larger cap to allow it")
    table = np.array([[params.r, params.q], [params.p, 0.0]])
    for n in range(1, n_max + 1):
        if n > 1:
            table = _step_table(table, params, n - 1)
        yield ExactDistribution(n, table)


def evolve_exact(params: ModelParams, n: int, cap: int = DEFAULT_CAP) -> ExactDistribution:
    dist = None
    for dist in exact_levels(params, n, cap):
        pass
    return dist


@dataclass(frozen=True)
class MomentRecord:
    n: int
    ES: float
    ES2: float
    EZ: float
    var_S: float
    EM: float
    EM2: float


def exact_moments(dist: ExactDistribution, tables: SequenceTables, constants: DerivedConstants) -> MomentRecord:
    if abs(tables.alpha - constants.alpha) > 1e-15:
        raise ValueError(f"tables built for alpha={tables.alpha}, constants have alpha={constants.alpha}")
    if tables.horizon < dist.n:
        raise ValueError(f"tables reach n={tables.horizon}, need {dist.n}")
    s, z, m = dist.support()
    s = s.astype(np.float64)
    n = dist.n
    M = tables.a[n] * s - constants.omega * tables.A[n]
    ES = float(np.dot(m, s))
    ES2 = float(np.dot(m, s * s))
    return MomentRecord(
        n=n,
        ES=ES,
        ES2=ES2,
        EZ=float(np.dot(m, z)),
        var_S=float(np.dot(m, (s - ES) ** 2)),
        EM=float(np.dot(m, M)),
        EM2=float(np.dot(m, M * M)),
    )


def closed_form_ES(n: int, constants: DerivedConstants, tables: SequenceTables) -> float:
    if n < 1:
        raise ValueError("n must be >= 1")
    return (constants.beta + constants.omega * (tables.A[n] - 1.0)) / tables.a[n]


def closed_form_EZ(n: int, params: ModelParams, tables: SequenceTables) -> float:
    if n < 1:
        raise ValueError("n must be >= 1")
    tau = (1.0 - params.theta) * (params.p + params.q)
    return (params.p + params.q + tau * (tables.B[n] - 1.0)) / tables.b[n]


def closed_form_ES2(n: int, params: ModelParams, constants: DerivedConstants, tables: SequenceTables) -> float:
    """``E[S_n^2]`` from ``E[S_{k+1}^2] = (1 + 2 alpha/k) E[S_k^2] + 2 omega E[S_k] + gamma E[Z_k]/k + tau``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    c = constants
    val = params.p + params.q
    for k in range(1, n):
        h = 2.0 * c.omega * closed_form_ES(k, c, tables) + c.gamma * closed_form_EZ(k, params, tables) / k + c.tau
        val = (1.0 + 2.0 * c.alpha / k) * val + h
    return val


def _product(x: float, n: int) -> float:
    k = np.arange(1, n, dtype=np.float64)
    return float(np.prod(k / (k + x)))


def _chain_parts(params: ModelParams, legacy: bool):
    c = derive_constants(params)
    sc = superdiffusive_constants(params)
    factor = 1.0 if legacy else 1.0 / (1.0 - c.gamma)
    nabla = _nabla(params, c, t2_factor=factor)
    return c, sc, nabla, factor


def prelimit_ES2(n: int, params: ModelParams, *, legacy: bool = False) -> float:
    """Closed-form ``E[S_n^2]`` for superdiffusive parameters.

    ``legacy=True`` drops the ``1/(1-gamma)`` factor on the ``t2`` terms,
    reproducing the commonly quoted expression for comparison.
    """
    c, sc, nabla, factor = _chain_parts(params, legacy)
    a, w, g = c.alpha, c.omega, c.gamma
    an, bn = _product(a, n), _product(g, n)
    return (
        poch(float(n), 2.0 * a) / gamma_fn(2.0 * a + 1.0) * nabla
        - n / (2.0 * a - 1.0) * (c.tau / (1.0 - g) - w**2 * (n * (2.0 * a - 1.0) + 1.0) / (a - 1.0) ** 2)
        + (n + 1.0) * sc.t1 / (an * (a - 1.0))
        - g * sc.t2 * factor / ((2.0 * a - g) * bn)
    )


def prelimit_EM2(n: int, params: ModelParams, *, legacy: bool = False) -> float:
    """Closed-form ``E[M_n^2]`` for superdiffusive parameters (see :func:`prelimit_ES2`)."""
    c, sc, nabla, factor = _chain_parts(params, legacy)
    a, w, g, b = c.alpha, c.omega, c.gamma, c.beta
    an, bn = _product(a, n), _product(g, n)
    an2 = an * an
    return (
        an2 * poch(float(n), 2.0 * a) * nabla / gamma_fn(2.0 * a + 1.0)
        - c.tau * n * an2 / ((2.0 * a - 1.0) * (1.0 - g))
        + n * w**2 * an2 / ((2.0 * a - 1.0) * (a - 1.0) ** 2)
        - g * sc.t2 * factor * an2 / ((2.0 * a - g) * bn)
        + 2.0 * w * (b - w) * a / (1.0 - a)
        - a**2 * w**2 / (1.0 - a) ** 2
        + sc.t1 * an / (a - 1.0)
    )


@dataclass(frozen=True)
class MartingaleReport:
    n_max: int
    states_checked: int
    violations: int
    max_error_M: float
    max_error_xi: float
    max_error_variance: float
    first_violation: Optional[dict]

    @property
    def ok(self) -> bool:
        return self.violations == 0


def conditional_variance(params: ModelParams, n: int, s: int, z: int) -> float:
    """``Var(xi_{n+1} | state) = gamma z/n + tau - (alpha s/n + omega)^2``."""
    c = derive_constants(params)
    return c.gamma * z / n + c.tau - (c.alpha * s / n + c.omega) ** 2


def martingale_property_check(params: ModelParams, n_max: int, tol: float = 1e-12, cap: int = DEFAULT_CAP) -> MartingaleReport:
    """Check ``E[M_{n+1} | state] = M_n``, ``E[xi_{n+1} | state] = 0`` and the
    conditional variance formula at every reachable state with ``1 <= n < n_max``.

    The ``M`` comparison is relative to ``max(1, |M_n|)``; the other two are absolute.
    """
    c = derive_constants(params)
    tables = build_tables(c.alpha, c.gamma, n_max + 1)
    p, q, th = params.p, params.q, params.theta
    checked = 0
    bad = 0
    first = None
    err_m = err_xi = err_var = 0.0
    for dist in exact_levels(params, n_max, cap):
        n = dist.n
        if n >= n_max:
            break
        i, j = np.nonzero(dist.table)
        s = (i - j).astype(np.float64)
        z = (i + j).astype(np.float64)
        p_plus = (1.0 - th) * p + th * (p * i + q * j) / n
        p_minus = (1.0 - th) * q + th * (q * i + p * j) / n
        p_zero = 1.0 - p_plus - p_minus
        a1, A1 = tables.a[n + 1], tables.A[n + 1]
        m_now = tables.a[n] * s - c.omega * tables.A[n]
        m_next = p_plus * (a1 * (s + 1)) + p_minus * (a1 * (s - 1)) + p_zero * (a1 * s) - c.omega * A1
        drift = c.alpha * s / n + c.omega
        e_xi = p_plus * (1.0 - drift) + p_minus * (-1.0 - drift) + p_zero * (-drift)
        var_xi = p_plus * (1.0 - drift) ** 2 + p_minus * (1.0 + drift) ** 2 + p_zero * drift**2
        var_formula = c.gamma * z / n + c.tau - drift**2
        dm = np.abs(m_next - m_now) / np.maximum(1.0, np.abs(m_now))
        dx = np.abs(e_xi)
        dv = np.abs(var_xi - var_formula)
        err_m = max(err_m, float(dm.max()))
        err_xi = max(err_xi, float(dx.max()))
        err_var = max(err_var, float(dv.max()))
        viol = (dm > tol) | (dx > tol) | (dv > tol)
        checked += len(s)
        if viol.any():
            bad += int(viol.sum())
            if first is None:
                k = int(np.flatnonzero(viol)[0])
                first = {
                    "n": n,
                    "s": int(s[k]),
                    "z": int(z[k]),
                    "M_n": float(m_now[k]),
                    "E[M_n+1|state]": float(m_next[k]),
                    "E[xi|state]": float(e_xi[k]),
                    "Var[xi|state]": float(var_xi[k]),
                    "variance_formula": float(var_formula[k]),
                }
    return MartingaleReport(n_max, checked, bad, err_m, err_xi, err_var, first)


def write_distribution_csv(dist: ExactDistribution, path) -> None:
    s, z, m = dist.support()
    order = np.lexsort((z, s))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["s", "z", "mass"])
        for k in order:
            w.writerow([int(s[k]), int(z[k]), repr(float(m[k]))])


@dataclass(frozen=True)
class ComparisonRow:
    quantity: str
    max_abs_diff: float
    max_rel_diff: float


def compare_closed_forms(params: ModelParams, n_max: int, cap: int = DEFAULT_CAP) -> list:
    """Max oracle-vs-closed-form differences over ``n = 1..n_max`` for each moment."""
    c = derive_constants(params)
    tables = build_tables(c.alpha, c.gamma, n_max)
    diffs = {k: [0.0, 0.0] for k in ("E[S_n]", "E[S_n^2]", "E[Z_n]", "E[M_n]", "E[M_n^2] chain")}
    es2 = params.p + params.q
    for dist in exact_levels(params, n_max, cap):
        n = dist.n
        if n > 1:
            k = n - 1
            es2 = (1.0 + 2.0 * c.alpha / k) * es2 + (
                2.0 * c.omega * closed_form_ES(k, c, tables) + c.gamma * closed_form_EZ(k, params, tables) / k + c.tau
            )
        mom = exact_moments(dist, tables, c)
        pairs = [
            ("E[S_n]", mom.ES, closed_form_ES(n, c, tables)),
            ("E[S_n^2]", mom.ES2, es2),
            ("E[Z_n]", mom.EZ, closed_form_EZ(n, params, tables)),
            ("E[M_n]", mom.EM, c.beta - c.omega),
        ]
        if c.regime is Regime.SUPERDIFFUSIVE:
            pairs.append(("E[M_n^2] chain", mom.EM2, prelimit_EM2(n, params)))
        for name, exact, closed in pairs:
            d = abs(exact - closed)
            diffs[name][0] = max(diffs[name][0], d)
            diffs[name][1] = max(diffs[name][1], d / max(abs(exact), 1e-300) if exact else d)
    if c.regime is not Regime.SUPERDIFFUSIVE:
        del diffs["E[M_n^2] chain"]
    return [ComparisonRow(k, v[0], v[1]) for k, v in diffs.items()]
