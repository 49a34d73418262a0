"""Synthetic data generation and the Bayes oracle.

Two generators are provided: the multi-output correlated Gaussian model
(input = rho * label + sqrt(1 - rho^2) * noise, with label and noise
standard normal in n dimensions) and a scalar-regression model
(label = truth(input) + Gaussian noise, inputs standard normal).  The
closed-form Bayes predictor and risk for the correlated Gaussian model
serve as oracles for the information bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core_math import RngState, ValidationError, as_matrix, as_vector

__all__ = [
    "JointGaussianSpec",
    "ScalarRegressionSpec",
    "Dataset",
    "TRUTH_FN_NAMES",
    "sample_joint_gaussian",
    "sample_scalar_regression",
    "bayes_predict",
    "bayes_risk",
    "population_risk_mc",
]

TRUTH_FN_NAMES = ("linear", "quadratic", "sine")


@dataclass(frozen=True)
class JointGaussianSpec:
    """Correlated joint Gaussian data model of dimension ``n``.

    ``rho`` must lie strictly inside (0, 1): the endpoints are rejected
    because the model degenerates at 1 (the mutual information diverges)
    and the correlation structure vanishes at 0.
    """

    n: int
    rho: float

    def __post_init__(self):
        if not (isinstance(self.n, int) and self.n >= 1):
            raise ValidationError(f"n must be a positive integer, got {self.n}")
        if not (0.0 < self.rho < 1.0):
            raise ValidationError(
                f"rho must lie in the open interval (0, 1), got {self.rho}"
            )


@dataclass(frozen=True)
class ScalarRegressionSpec:
    """Additive-noise scalar regression model.

    ``truth_fn`` selects the ground-truth mapping from the fixed catalog:

    - ``linear``: beta . x (requires ``beta`` of length ``input_dim``)
    - ``quadratic``: ||x||^2 / input_dim
    - ``sine``: sin(2 pi x_1)
    """

    input_dim: int
    truth_fn: str
    noise_sigma: float
    beta: tuple[float, ...] | None = None

    def __post_init__(self):
        if not (isinstance(self.input_dim, int) and self.input_dim >= 1):
            raise ValidationError(
                f"input_dim must be a positive integer, got {self.input_dim}"
            )
        if self.truth_fn not in TRUTH_FN_NAMES:
            raise ValidationError(
                f"truth_fn must be one of {TRUTH_FN_NAMES}, got {self.truth_fn!r}"
            )
        if not self.noise_sigma > 0.0:
            raise ValidationError(
                f"noise_sigma must be positive, got {self.noise_sigma}"
            )
        if self.truth_fn == "linear":
            if self.beta is None or len(self.beta) != self.input_dim:
                raise ValidationError(
                    "linear truth_fn requires beta with length input_dim"
                )
        elif self.beta is not None:
            raise ValidationError(f"beta is only valid for linear, got {self.truth_fn!r}")

    def truth_values(self, inputs: np.ndarray) -> np.ndarray:
        """Evaluate the noise-free ground truth on an N x input_dim matrix."""
        x = as_matrix(inputs, cols=self.input_dim, name="inputs")
        if self.truth_fn == "linear":
            return x @ np.asarray(self.beta, dtype=np.float64)
        if self.truth_fn == "quadratic":
            return np.sum(x * x, axis=1) / self.input_dim
        return np.sin(2.0 * math.pi * x[:, 0])


@dataclass(frozen=True)
class Dataset:
    """Paired (input, label) rows with declared dimensions."""

    input_dim: int
    label_dim: int
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        as_matrix(self.inputs, cols=self.input_dim, name="inputs")
        as_matrix(self.labels, cols=self.label_dim, name="labels")
        if self.inputs.shape[0] != self.labels.shape[0]:
            raise ValidationError(
                "inputs and labels must have the same number of rows: "
                f"{self.inputs.shape[0]} vs {self.labels.shape[0]}"
            )

    def __len__(self) -> int:
        return self.inputs.shape[0]


def sample_joint_gaussian(
    spec: JointGaussianSpec, count: int, state: RngState
) -> Dataset:
    """Draw ``count`` rows from the correlated Gaussian model.

    Each row draws the label and an independent noise vector from
    N(0, I_n) and forms the input as rho * label + sqrt(1 - rho^2) * noise,
    so inputs and labels share dimension ``spec.n``.
    """
    if count < 1:
        raise ValidationError(f"count must be positive, got {count}")
    n = spec.n
    y = state.normal_array(count * n).reshape(count, n)
    z = state.normal_array(count * n).reshape(count, n)
    x = spec.rho * y + math.sqrt(1.0 - spec.rho * spec.rho) * z
    return Dataset(input_dim=n, label_dim=n, inputs=x, labels=y)


def sample_scalar_regression(
    spec: ScalarRegressionSpec, count: int, state: RngState
) -> Dataset:
    """Draw ``count`` rows: inputs N(0, I), label = truth(x) + noise."""
    if count < 1:
        raise ValidationError(f"count must be positive, got {count}")
    d = spec.input_dim
    x = state.normal_array(count * d).reshape(count, d)
    noise = spec.noise_sigma * state.normal_array(count)
    y = spec.truth_values(x) + noise
    return Dataset(input_dim=d, label_dim=1, inputs=x, labels=y.reshape(count, 1))


def bayes_predict(spec: JointGaussianSpec, x) -> np.ndarray:
    """Conditional-mean predictor for the correlated Gaussian model.

    E[label | input = x] = rho * x, read off the joint covariance blocks
    (identity marginals, rho * identity cross-covariance).
    """
    v = as_vector(x, dim=spec.n, name="x")
    return spec.rho * v


def bayes_risk(spec: JointGaussianSpec) -> float:
    """Population risk of the Bayes predictor: n * (1 - rho^2)."""
    return spec.n * (1.0 - spec.rho * spec.rho)


def population_risk_mc(
    predictor: Callable[[np.ndarray], np.ndarray],
    spec: JointGaussianSpec,
    count: int,
    state: RngState,
    vectorized: bool = False,
) -> tuple[float, float]:
    """Monte-Carlo estimate of E ||label - predictor(input)||^2.

    Returns (estimate, standard error of the estimate).  Requires
    ``count`` >= 2 for the standard error to be defined.  By default the
    predictor is called once per input row; with ``vectorized=True`` it
    is called once on the full N x n input matrix and must return an
    N x n matrix of predictions (row i equal to the row-wise call).
    """
    if count < 2:
        raise ValidationError(f"count must be at least 2, got {count}")
    ds = sample_joint_gaussian(spec, count, state)
    if vectorized:
        preds = as_matrix(predictor(ds.inputs), cols=spec.n, name="predictions")
        if preds.shape[0] != count:
            raise ValidationError("vectorized predictor returned wrong row count")
    else:
        preds = np.empty((count, spec.n), dtype=np.float64)
        for i in range(count):
            preds[i] = predictor(ds.inputs[i])
        if not np.all(np.isfinite(preds)):
            raise ValidationError("predictor produced non-finite values")
    diff = ds.labels - preds
    sq = np.sum(diff * diff, axis=1)
    estimate = float(np.mean(sq))
    std_error = float(np.std(sq, ddof=1) / math.sqrt(count))
    return estimate, std_error
