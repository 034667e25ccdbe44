"""Model parameters, derived constants and the one-step kernel of the LRRW.

The walk is driven by the sufficient statistic ``(n, S_n, Z_n)``: position and
number of nonzero steps.  Conditioning on it, the latent draws (memory switch,
agreement mark, uniformly chosen past step) marginalize to a three-point law
on the next increment, which is what :func:`transition_kernel` returns.
"""

from __future__ import annotations

import enum
import math
import sys
from dataclasses import dataclass
from typing import Mapping, Optional

from scipy.special import gamma as _gamma

SUM_TOL = 1e-12
CRITICAL_TOL = 1e-12


class ParameterError(ValueError):
    """Raised when model parameters violate an invariant."""


class Regime(str, enum.Enum):
    DIFFUSIVE = "diffusive"
    CRITICAL = "critical"
    SUPERDIFFUSIVE = "superdiffusive"


@dataclass(frozen=True)
class ModelParams:
    """Step probabilities ``p`` (+1), ``q`` (-1), ``r`` (0) and memory probability ``theta``."""

    p: float
    q: float
    r: float
    theta: float

    def __post_init__(self) -> None:
        for name in ("p", "q", "r", "theta"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or math.isnan(v):
                raise ParameterError(f"{name} must be a real number, got {v!r}")
            object.__setattr__(self, name, float(v))
        for name in ("p", "q", "r"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} >= 0 violated: {name}={getattr(self, name)}")
        total = self.p + self.q + self.r
        if abs(total - 1.0) > SUM_TOL:
            raise ParameterError(f"p + q + r = 1 violated: p + q + r = {total!r}")
        if not 0.0 <= self.theta < 1.0:
            raise ParameterError(f"0 <= theta < 1 violated: theta={self.theta}")

    @classmethod
    def normalized(cls, p: float, q: float, r: float, theta: float) -> "ModelParams":
        """Build parameters after explicitly rescaling ``p, q, r`` to sum to one."""
        total = p + q + r
        if total <= 0:
            raise ParameterError("p + q + r must be positive to renormalize")
        return cls(p / total, q / total, r / total, theta)

    @classmethod
    def from_mapping(cls, values: Mapping[str, object]) -> "ModelParams":
        missing = [k for k in ("p", "q", "r", "theta") if k not in values]
        if missing:
            raise ParameterError(f"missing parameter(s): {', '.join(missing)}")
        try:
            return cls(*(float(values[k]) for k in ("p", "q", "r", "theta")))
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ParameterError):
                raise
            raise ParameterError(f"non-numeric parameter value: {exc}") from exc

    def as_dict(self) -> dict:
        return {"p": self.p, "q": self.q, "r": self.r, "theta": self.theta}


def classify_regime(alpha: float) -> Regime:
    if abs(alpha - 0.5) <= CRITICAL_TOL:
        return Regime.CRITICAL
    return Regime.DIFFUSIVE if alpha < 0.5 else Regime.SUPERDIFFUSIVE


@dataclass(frozen=True)
class DerivedConstants:
    """Scalar constants of the walk.

    ``mu`` is the almost-sure limit of ``S_n / n``; ``sigma2`` is the limit of
    the conditional variance of the martingale increments.  ``ell`` (the
    limit of ``v_n / n^(1 - 2 alpha)``) only exists in the diffusive regime.
    """

    alpha: float
    omega: float
    beta: float
    tau: float
    gamma: float
    sigma2: float
    regime: Regime
    mu: float
    ell: Optional[float]

    @property
    def center(self) -> float:
        """Centering of ``S_n / n`` used by the limit theorems (``2 omega`` when critical)."""
        return 2.0 * self.omega if self.regime is Regime.CRITICAL else self.mu

    @property
    def critical_variance(self) -> float:
        return self.tau / (1.0 - self.gamma) - 4.0 * self.omega**2

    def as_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "omega": self.omega,
            "beta": self.beta,
            "tau": self.tau,
            "gamma": self.gamma,
            "sigma2": self.sigma2,
            "regime": self.regime.value,
            "mu": self.mu,
            "ell": self.ell,
        }


def derive_constants(params: ModelParams) -> DerivedConstants:
    p, q, theta = params.p, params.q, params.theta
    beta = p - q
    alpha = theta * beta
    omega = beta * (1.0 - theta)
    tau = (1.0 - theta) * (p + q)
    gam = theta * (p + q)
    mu = omega / (1.0 - alpha)
    sigma2 = tau / (1.0 - gam) - mu**2
    if sigma2 < 0:
        # only reachable through rounding on degenerate walks
        if sigma2 < -1e-12:
            raise ParameterError(f"sigma2 >= 0 violated: sigma2={sigma2}")
        sigma2 = 0.0
    regime = classify_regime(alpha)
    ell = _gamma(alpha + 1.0) ** 2 / (1.0 - 2.0 * alpha) if alpha < 0.5 and regime is Regime.DIFFUSIVE else None
    return DerivedConstants(alpha, omega, beta, tau, gam, sigma2, regime, mu, ell)


@dataclass(frozen=True)
class SuperdiffusiveConstants:
    """Moments of the limit ``L`` of ``n^(1-alpha) (S_n/n - mu)`` and of the martingale limit ``M``.

    ``second_moment_L`` comes from ``E[M^2]`` and ``L = (M - omega alpha/(1-alpha)) / Gamma(alpha+1)``.
    ``legacy_nabla`` and ``legacy_second_moment_L`` hold the commonly quoted
    simplified expressions, kept for side-by-side reporting only: they drop a
    ``1/(1-gamma)`` factor on the ``r gamma^2`` term and carry an extra
    ``2 omega / ((1-alpha) Gamma(alpha))^2`` term, so they do not vanish for
    the deterministic walk ``p = 1``.
    """

    nabla: float
    t1: float
    t2: float
    mean_L: float
    second_moment_L: float
    mean_M: float
    second_moment_M: float
    legacy_nabla: float
    legacy_second_moment_L: float

    @property
    def variance_L(self) -> float:
        return self.second_moment_L - self.mean_L**2

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__} | {"variance_L": self.variance_L}


def _nabla(params: ModelParams, c: DerivedConstants, *, t2_factor: float) -> float:
    a, w, b = c.alpha, c.omega, c.beta
    return (
        params.p
        + params.q
        + c.tau / ((1.0 - c.gamma) * (2.0 * a - 1.0))
        - 2.0 * a * w**2 / ((2.0 * a - 1.0) * (a - 1.0) ** 2)
        + 4.0 * w * a * (b - 1.0) / (a - 1.0) ** 2
        + params.r * c.gamma**2 / (2.0 * a - c.gamma) * t2_factor
    )


def superdiffusive_constants(params: ModelParams) -> SuperdiffusiveConstants:
    c = derive_constants(params)
    if c.regime is not Regime.SUPERDIFFUSIVE:
        raise ParameterError(f"superdiffusive constants need alpha > 1/2, got alpha={c.alpha}")
    a, w, b, theta = c.alpha, c.omega, c.beta, params.theta
    t1 = 2.0 * w * (a * w - (1.0 - a) * b * theta) / (1.0 - a)
    t2 = c.gamma * params.r
    # identity used to simplify the E[M_n^2] chain; must vanish
    gate = t1 / (a - 1.0) + 2.0 * a * w**2 / (1.0 - a) ** 2 - 2.0 * w * (b - w) / (1.0 - a)
    if abs(gate) > 1e-12 * max(1.0, abs(t1)):
        raise ArithmeticError(f"t1 simplification identity off by {gate}")

    g1 = _gamma(a + 1.0)
    g2 = _gamma(2.0 * a + 1.0)
    nabla = _nabla(params, c, t2_factor=1.0 / (1.0 - c.gamma))
    mean_M = b - w
    second_M = g1**2 * nabla / g2 + a**2 * w * (2.0 - b * (theta + 1.0)) / (1.0 - a) ** 2
    shift = w * a / (1.0 - a)
    mean_L = (b * (1.0 - a) - w) / (g1 * (1.0 - a))
    second_L = (second_M - 2.0 * shift * mean_M + shift**2) / g1**2
    # snap cancellation noise (the deterministic walk has L = 0 exactly)
    scale = (abs(second_M) + 2.0 * abs(shift * mean_M) + shift**2) / g1**2
    if abs(second_L) <= 16.0 * sys.float_info.epsilon * scale:
        second_L = 0.0
    if second_L < mean_L**2 - 1e-12 * max(1.0, mean_L**2):
        raise ArithmeticError(f"E[L^2]={second_L} < E[L]^2={mean_L**2}")

    legacy_nabla = _nabla(params, c, t2_factor=1.0)
    legacy_second_L = legacy_nabla / g2 + 2.0 * w * (1.0 / ((1.0 - a) * _gamma(a))) ** 2
    return SuperdiffusiveConstants(
        nabla=nabla,
        t1=t1,
        t2=t2,
        mean_L=mean_L,
        second_moment_L=second_L,
        mean_M=mean_M,
        second_moment_M=second_M,
        legacy_nabla=legacy_nabla,
        legacy_second_moment_L=legacy_second_L,
    )


@dataclass(frozen=True)
class WalkState:
    n: int
    s: int
    z: int

    def __post_init__(self) -> None:
        if self.n < 0:
            raise ValueError(f"n >= 0 violated: n={self.n}")
        if not abs(self.s) <= self.z <= self.n:
            raise ValueError(f"|s| <= z <= n violated: {self}")
        if (self.s - self.z) % 2:
            raise ValueError(f"s = z (mod 2) violated: {self}")

    @property
    def n_plus(self) -> int:
        return (self.z + self.s) // 2

    @property
    def n_minus(self) -> int:
        return (self.z - self.s) // 2

    @property
    def n_zero(self) -> int:
        return self.n - self.z

    def advance(self, x: int) -> "WalkState":
        return WalkState(self.n + 1, self.s + x, self.z + x * x)


@dataclass(frozen=True)
class StepKernel:
    p_plus: float
    p_minus: float
    p_zero: float

    def as_tuple(self) -> tuple:
        return (self.p_plus, self.p_minus, self.p_zero)


def initial_kernel(params: ModelParams) -> StepKernel:
    return StepKernel(params.p, params.q, params.r)


def transition_kernel(params: ModelParams, state: WalkState) -> StepKernel:
    """Law of ``X_{n+1}`` given ``(n, S_n, Z_n)``, for ``n >= 1``."""
    if state.n < 1:
        raise ValueError("transition_kernel needs n >= 1; use initial_kernel for the first step")
    p, q, r, th = params.p, params.q, params.r, params.theta
    n = state.n
    n_plus, n_minus, n_zero = state.n_plus, state.n_minus, state.n_zero
    p_plus = (1.0 - th) * p + th * (p * n_plus + q * n_minus) / n
    p_minus = (1.0 - th) * q + th * (q * n_plus + p * n_minus) / n
    p_zero = r + th * (p + q) * n_zero / n
    return StepKernel(p_plus, p_minus, p_zero)
