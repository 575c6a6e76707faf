"""Threshold constants, regime classification and binomial-tail calculators."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from .ring import as_fraction


class DomainError(ValueError):
    pass


class Regime(enum.Enum):
    COMPLETE_SEGREGATION = "CompleteSegregation"
    STATIC = "Static"
    UNCLASSIFIED = "Unclassified"


@dataclass(frozen=True)
class Thresholds:
    kappa0: float
    lambda0: float
    tol: float
    residuals: dict = field(default_factory=dict)


@dataclass(frozen=True)
class RegimeReport:
    regime: Regime
    matched_condition: str
    g_value: float
    thresholds: Thresholds
    all_matched: tuple = ()

    def as_dict(self) -> dict:
        return {"regime": self.regime.value, "matched_condition": self.matched_condition,
                "all_matched": list(self.all_matched), "g_value": self.g_value,
                "kappa0": self.thresholds.kappa0, "lambda0": self.thresholds.lambda0}


# -- threshold equations -------------------------------------------------------


def _xlogx(x: float) -> float:
    return x * math.log(x) if x > 0 else 0.0


def kappa_residual(x: float) -> float:
    """ln of (1-x)^(1-x) / (0.5-x)^(0.5-x); zero at kappa0."""
    return _xlogx(1 - x) - _xlogx(0.5 - x)


def lambda_residual(x: float) -> float:
    """ln of (1-x)^(1-x) / ((0.5-x)^(0.5-x) sqrt(2x)); zero at lambda0."""
    return kappa_residual(x) - 0.5 * math.log(2 * x)


def lambda_residual_squared(x: float) -> float:
    """2x (0.5-x)^(1-2x) - (1-x)^(2(1-x)), the squared form of the same equation."""
    return 2 * x * (0.5 - x) ** (1 - 2 * x) - (1 - x) ** (2 * (1 - x))


def bisect(f: Callable[[float], float], lo: float, hi: float, tol: float,
           probes: int = 64) -> float:
    """Root of a decreasing residual on [lo, hi].

    The residual is checked to change sign and to decrease along a probe grid
    before bisecting.
    """
    flo, fhi = f(lo), f(hi)
    if not (flo > 0 > fhi):
        raise DomainError(f"no sign change on [{lo}, {hi}]: f={flo:.3g}, {fhi:.3g}")
    grid = [f(lo + (hi - lo) * i / probes) for i in range(probes + 1)]
    if any(b >= a for a, b in zip(grid, grid[1:])):
        raise DomainError("residual is not monotone on the bracket")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def solve_thresholds(tol: float = 1e-12) -> Thresholds:
    if not tol > 0:
        raise DomainError("tol must be positive")
    kappa = bisect(kappa_residual, 0.25, 0.45, tol)
    lam = bisect(lambda_residual, 0.25, 0.45, tol)
    res = {
        "kappa": kappa_residual(kappa),
        "lambda": lambda_residual(lam),
        "lambda_squared": lambda_residual_squared(lam),
    }
    return Thresholds(kappa0=kappa, lambda0=lam, tol=tol, residuals=res)


_DEFAULT_THRESHOLDS: Thresholds | None = None


def default_thresholds() -> Thresholds:
    global _DEFAULT_THRESHOLDS
    if _DEFAULT_THRESHOLDS is None:
        _DEFAULT_THRESHOLDS = solve_thresholds(1e-13)
    return _DEFAULT_THRESHOLDS


def g_func(tau: float, rho: float) -> float:
    """g(tau, rho) = ((1-tau)^(1-tau) / (0.5-tau)^(0.5-tau))^2 / 2 - rho."""
    tau = float(tau)
    if not 0 < tau < 0.5:
        raise DomainError(f"g needs 0 < tau < 0.5, got {tau}")
    return math.exp(2 * kappa_residual(tau)) / 2 - float(rho)


def classify_regime(tau, rho, thresholds: Thresholds | None = None) -> RegimeReport:
    tau, rho = as_fraction(tau), as_fraction(rho)
    th = thresholds or default_thresholds()
    if not 0 <= rho <= Fraction(1, 2):
        raise DomainError("rho must be in [0, 0.5]; mirror the types first")
    if not 0 < tau < 1:
        raise DomainError("tau must be in (0, 1)")
    g = g_func(tau, rho) if tau < Fraction(1, 2) else math.nan
    if tau > Fraction(1, 2) and rho < Fraction(1, 2) and tau + rho != 1:
        cond = "tau>0.5 & rho<0.5 & tau+rho!=1"
        return RegimeReport(Regime.COMPLETE_SEGREGATION, cond, g, th, (cond,))
    k, lam = th.kappa0, th.lambda0
    t, r = float(tau), float(rho)
    clauses = [
        ("tau<=lambda0 & rho<=lambda0", t <= lam and r <= lam),
        ("tau<=kappa0 & rho<0.5", t <= k and rho < Fraction(1, 2)),
        ("tau<=0.5 & rho<=0.25", tau <= Fraction(1, 2) and rho <= Fraction(1, 4)),
        ("2rho(1-2kappa0)+tau+kappa0<1", 2 * r * (1 - 2 * k) + t + k < 1),
    ]
    matched = tuple(name for name, ok in clauses if ok)
    if matched:
        return RegimeReport(Regime.STATIC, matched[0], g, th, matched)
    return RegimeReport(Regime.UNCLASSIFIED, "none", g, th, ())


# -- binomial tails -------------------------------------------------------------


def _threshold(k) -> int:
    """Smallest integer count meeting 'at least k'."""
    if isinstance(k, (int, Fraction)):
        return math.ceil(k)
    return math.ceil(as_fraction(k))


def log_binomial_tail(t: int, p, k) -> float:
    """ln P(B(t, p) >= k) by log-gamma terms and log-sum-exp."""
    p = float(as_fraction(p))
    if not 0 < p < 1:
        raise DomainError("p must lie in (0, 1)")
    lo = max(_threshold(k), 0)
    if lo == 0:
        return 0.0
    if lo > t:
        return -math.inf
    j = np.arange(lo, t + 1, dtype=np.float64)
    lgt = math.lgamma(t + 1)
    terms = np.array([lgt - math.lgamma(x + 1) - math.lgamma(t - x + 1) for x in j])
    terms += j * math.log(p) + (t - j) * math.log1p(-p)
    m = terms.max()
    return float(m + math.log(np.exp(terms - m).sum()))


def binomial_tail_exact(t: int, p, k) -> Fraction:
    """P(B(t, p) >= k) as an exact rational; the small-t oracle."""
    p = as_fraction(p)
    lo = max(_threshold(k), 0)
    return sum((math.comb(t, j) * p ** j * (1 - p) ** (t - j) for j in range(lo, t + 1)),
               Fraction(0))


def rare_event_probs(w: int, tau, rho) -> tuple[float, float]:
    """(ln P_stab, ln lower bound of P_unhap)."""
    tau, rho = as_fraction(tau), as_fraction(rho)
    if not (0 < tau <= Fraction(1, 2) and 0 < rho <= Fraction(1, 2)):
        raise DomainError("need 0 < tau <= 0.5 and 0 < rho <= 0.5")
    stab = log_binomial_tail(w, 1 - rho, (2 * w + 1) * tau)
    unhap = log_binomial_tail(2 * w, rho, 2 * w * (1 - tau))
    return stab, unhap


class HappinessRegime(enum.Enum):
    BALANCED = "Balanced"
    UNBALANCED = "Unbalanced"
    NOT_APPLICABLE = "NotApplicable"


def expected_initial(n: int, w: int, rho, tau=None) -> dict:
    """Expected initial mixing index and the happiness regime of (tau, rho)."""
    rho = as_fraction(rho)
    mix = 2 * n * w * rho * (1 - rho)
    regime = HappinessRegime.NOT_APPLICABLE
    if tau is not None:
        tau = as_fraction(tau)
        if tau > Fraction(1, 2) and tau + rho > 1:
            regime = HappinessRegime.BALANCED
        elif tau > Fraction(1, 2) and tau + rho < 1:
            regime = HappinessRegime.UNBALANCED
    return {"mixing_expectation": mix, "regime": regime}


# -- biased random walks ---------------------------------------------------------


def ruin_bound(r: float, t0: float, delta: float) -> float:
    """Upper bound on ever hitting 0 for a walk started at r with up-bias delta."""
    if delta == 0:
        raise ZeroDivisionError("delta must be non-zero")
    if r <= 0 or t0 <= 0 or delta < 0:
        raise DomainError("need r, t0, delta > 0")
    return math.exp(-2 * r * delta ** 2 / t0) / -math.expm1(-2 * delta ** 2)


def simulate_ruin(r: int, t0: int, t1: int, p_up: float, trials: int, horizon: int,
                  seed=0) -> float:
    """Fraction of walks (+t1 w.p. p_up, else -t0) from r that reach <= 0 by horizon."""
    rng = np.random.default_rng(seed)
    pos = np.full(trials, r, np.int64)
    ruined = np.zeros(trials, bool)
    for _ in range(horizon):
        up = rng.random(trials) < p_up
        pos += np.where(up, t1, -t0)
        ruined |= pos <= 0
    return float(ruined.mean())


def block_walk(w: int) -> tuple[int, int, float, float]:
    """(t0, t1, p_up, delta) of the walk dominating a long beta-block's length."""
    delta = 2 * w / (2 * w + 1) - w / (w + 1)
    return w, 1, 2 * w / (2 * w + 1), delta
