"""Closed-form information quantities, risk bounds, sample complexities.

For the correlated Gaussian data model: the exact mutual information
(n/2) log(1 / (1 - rho^2)), an independent Monte-Carlo plug-in oracle
for it, the generalization-risk lower bound
b(n, rho) = (2 pi e)^((n-2)/2) (1 - rho^2)^(n/2) with its large-n
regime classification, and the tight estimation bound n (1 - rho^2)
that coincides with the Bayes risk.

b(n, rho) and the tight bound disagree for some (n, rho): b is
implemented exactly as displayed and can exceed the Bayes risk (for
n = 1 and rho near 1), so no code here asserts empirical risk >= b.
Reports should always show both columns.  Everything involving powers
of (2 pi e) or (1 - rho^2) is evaluated in log space so that n in the
millions neither overflows nor underflows prematurely.

Sample-complexity formulas return ceilings (they gate sample counts):

- single log-probability loss:
  N >= (2 L~^2 / (q0~^2 t) + 4 L~ / (3 q0~ sqrt(t))) * log((m+1)/delta)
- combined loss, conditional and marginal blocks:
  N1 = (4 L~^2 / (q0~^2 eps) + 4 sqrt(2) L~ / (3 q0~ sqrt(eps))) * log(2(m+1)/delta)
  N2 = same shape with (L-bar, q0-bar, m') and lambda_ent scaling,
  N = max(N1, N2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core_math import RngState, ValidationError
from .data_model import JointGaussianSpec

__all__ = [
    "LOG_2PI_E",
    "THRESHOLD_RHO",
    "RegimeLabel",
    "ComplexityInputs",
    "mutual_information_exact",
    "mi_plugin_mc",
    "fano_bound_paper",
    "fano_bound_tight",
    "asymptotic_regime",
    "sample_complexity_lemma42",
    "sample_complexity_thm43",
]

LOG_2PI_E = math.log(2.0 * math.pi) + 1.0

# Correlation at which 2 pi e (1 - rho^2) = 1: the boundary between the
# diverging and vanishing large-n regimes of b(n, rho).
THRESHOLD_RHO = math.sqrt(1.0 - 1.0 / (2.0 * math.pi * math.e))

_REGIME_TOL = 1e-12


def _validate_domain(n: int, rho: float) -> None:
    if not (isinstance(n, (int, np.integer)) and n >= 1):
        raise ValidationError(f"n must be a positive integer, got {n}")
    if not (0.0 < rho < 1.0):
        raise ValidationError(f"rho must lie in (0, 1), got {rho}")


@dataclass(frozen=True)
class RegimeLabel:
    """Large-n behaviour of b(n, rho): diverges, constant, or vanishes."""

    label: str
    threshold_rho: float = THRESHOLD_RHO

    def __post_init__(self):
        if self.label not in ("diverges", "constant", "vanishes"):
            raise ValidationError(f"unknown regime label {self.label!r}")


@dataclass(frozen=True)
class ComplexityInputs:
    """Constants for the combined-loss sample-complexity bound.

    (L_tilde, q0_tilde, m) describe the conditional density block;
    (L_bar, q0_bar, m_prime) the marginal block, whose contribution
    scales with lambda_ent.  The field ``t`` is the deviation threshold
    used by the single-block bound.
    """

    epsilon: float
    delta: float
    t: float
    L_tilde: float
    q0_tilde: float
    L_bar: float
    q0_bar: float
    lambda_ent: float
    m: int
    m_prime: int

    def __post_init__(self):
        for name in ("epsilon", "delta", "t", "L_tilde", "q0_tilde", "L_bar", "q0_bar"):
            if getattr(self, name) <= 0.0:
                raise ValidationError(f"{name} must be positive")
        if self.delta >= 1.0:
            raise ValidationError(f"delta must be < 1, got {self.delta}")
        if self.lambda_ent < 0.0:
            raise ValidationError("lambda_ent must be >= 0")
        if self.m < 1 or self.m_prime < 1:
            raise ValidationError("m and m_prime must be positive integers")


def mutual_information_exact(n: int, rho: float) -> float:
    """I(input; label) = (n/2) log(1 / (1 - rho^2)) in nats."""
    _validate_domain(n, rho)
    return -0.5 * n * math.log1p(-rho * rho)


def mi_plugin_mc(
    spec: JointGaussianSpec, count: int, state: RngState
) -> tuple[float, float]:
    """Independent Monte-Carlo oracle for the exact mutual information.

    Averages log p(y | x) - log p(y) over fresh joint draws using the
    model's known conditional N(rho x, (1 - rho^2) I) and marginal
    N(0, I); the estimator is unbiased for I(X; Y).  Returns
    (estimate, standard error).
    """
    if count < 2:
        raise ValidationError(f"count must be at least 2, got {count}")
    n, rho = spec.n, spec.rho
    one_minus = 1.0 - rho * rho
    y = state.normal_array(count * n).reshape(count, n)
    z = state.normal_array(count * n).reshape(count, n)
    x = rho * y + math.sqrt(one_minus) * z
    resid = y - rho * x
    log_cond = -0.5 * np.sum(resid * resid, axis=1) / one_minus \
        - 0.5 * n * math.log(one_minus)
    log_marg = -0.5 * np.sum(y * y, axis=1)
    # The shared -n/2 log(2 pi) terms cancel in the ratio.
    vals = log_cond - log_marg
    estimate = float(np.mean(vals))
    std_error = float(np.std(vals, ddof=1) / math.sqrt(count))
    return estimate, std_error


def fano_bound_paper(n: int, rho: float) -> float:
    """Risk lower bound b(n, rho) = (2 pi e)^((n-2)/2) (1 - rho^2)^(n/2).

    Evaluated as exp of the log expression; see the module docstring
    for the caveat against asserting it empirically.
    """
    _validate_domain(n, rho)
    log_b = 0.5 * (n - 2) * LOG_2PI_E + 0.5 * n * math.log1p(-rho * rho)
    return math.exp(log_b)


def fano_bound_tight(n: int, rho: float) -> float:
    """Tight estimation counterpart n (1 - rho^2); equals the Bayes risk."""
    _validate_domain(n, rho)
    return n * (1.0 - rho * rho)


def asymptotic_regime(rho: float) -> tuple[RegimeLabel, float]:
    """Classify the large-n behaviour of b(n, rho).

    The per-n increment of log b is 0.5 * log(2 pi e (1 - rho^2)):
    positive slope diverges, negative vanishes, zero (within 1e-12)
    stays constant at 1 / (2 pi e).
    """
    _validate_domain(1, rho)
    log_slope = 0.5 * (LOG_2PI_E + math.log1p(-rho * rho))
    if log_slope > _REGIME_TOL:
        label = "diverges"
    elif log_slope < -_REGIME_TOL:
        label = "vanishes"
    else:
        label = "constant"
    return RegimeLabel(label), log_slope


def sample_complexity_lemma42(
    t: float, delta: float, L_tilde: float, q0_tilde: float, m: int
) -> int:
    """Batch size guaranteeing squared gradient deviation <= t w.p. 1 - delta
    for one log-probability loss block (natural log, ceiling)."""
    if t <= 0.0 or L_tilde <= 0.0 or q0_tilde <= 0.0:
        raise ValidationError("t, L_tilde and q0_tilde must be positive")
    if not (0.0 < delta < 1.0):
        raise ValidationError(f"delta must lie in (0, 1), got {delta}")
    if m < 1:
        raise ValidationError("m must be a positive integer")
    coef = 2.0 * L_tilde**2 / (q0_tilde**2 * t) \
        + 4.0 * L_tilde / (3.0 * q0_tilde * math.sqrt(t))
    return math.ceil(coef * math.log((m + 1) / delta))


def sample_complexity_thm43(inputs: ComplexityInputs) -> tuple[int, int, int]:
    """(N1, N2, max) for the combined conditional + marginal loss.

    N2 carries the lambda_ent scaling (quadratic in the dominant term),
    so lambda_ent = 0 makes the marginal block free and N = N1.
    """
    eps = inputs.epsilon
    sqrt_eps = math.sqrt(eps)
    coef1 = 4.0 * inputs.L_tilde**2 / (inputs.q0_tilde**2 * eps) \
        + 4.0 * math.sqrt(2.0) * inputs.L_tilde / (3.0 * inputs.q0_tilde * sqrt_eps)
    n1 = math.ceil(coef1 * math.log(2.0 * (inputs.m + 1) / inputs.delta))
    lam = inputs.lambda_ent
    coef2 = 4.0 * inputs.L_bar**2 * lam**2 / (inputs.q0_bar**2 * eps) \
        + 4.0 * math.sqrt(2.0) * inputs.L_bar * lam / (3.0 * inputs.q0_bar * sqrt_eps)
    n2 = math.ceil(coef2 * math.log(2.0 * (inputs.m_prime + 1) / inputs.delta))
    return n1, n2, max(n1, n2)
