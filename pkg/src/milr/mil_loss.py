"""Training objectives and plug-in estimators.

Conditional cross-entropy (the negative mean conditional log density),
marginal cross-entropy against either a parametric marginal or the
weight-shared batch-mixture marginal, the combined loss with an entropy
weight, exact batch gradients for the two-network configuration, the
squared-error baseline, and the mutual information estimate as the
difference of the two cross-entropies.

All entropies are in nats.  Batch means accumulate with ``math.fsum``,
so every estimator here is exactly invariant under permutation of the
batch rows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core_math import LOG_2PI, ValidationError, as_matrix
from .data_model import Dataset
from .density_models import (
    ConditionalGaussianHead,
    MarginalGaussian,
    cond_log_density_batch,
    head_forward_batch,
    mixture_marginal_log_density,
)

__all__ = [
    "MarginalModelChoice",
    "parametric_marginal",
    "mixture_marginal",
    "LossReport",
    "conditional_ce",
    "marginal_ce",
    "mil_loss_batch",
    "mil_grad_batch",
    "mse_loss_and_grad",
    "nll_mse_offset",
    "mi_estimate",
]


@dataclass(frozen=True)
class MarginalModelChoice:
    """Marginal estimator selector.

    ``kind == "parametric"`` scores labels under a separate
    :class:`MarginalGaussian`; ``kind == "mixture"`` reuses the
    conditional head as an equal-weight mixture over the batch inputs
    (weight sharing, no extra parameters).
    """

    kind: str
    marginal: MarginalGaussian | None = None

    def __post_init__(self):
        if self.kind not in ("parametric", "mixture"):
            raise ValidationError(f"unknown marginal kind {self.kind!r}")
        if self.kind == "parametric" and self.marginal is None:
            raise ValidationError("parametric choice requires a MarginalGaussian")
        if self.kind == "mixture" and self.marginal is not None:
            raise ValidationError("mixture choice carries no parameters")


def parametric_marginal(marginal: MarginalGaussian) -> MarginalModelChoice:
    return MarginalModelChoice("parametric", marginal)


def mixture_marginal() -> MarginalModelChoice:
    return MarginalModelChoice("mixture")


@dataclass(frozen=True)
class LossReport:
    """One batch evaluation of the training objective (all in nats)."""

    conditional_ce: float
    marginal_ce: float
    mil_loss: float
    mi_estimate: float
    lambda_ent: float


def _unpack_batch(batch) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(batch, Dataset):
        inputs, labels = batch.inputs, batch.labels
    else:
        inputs, labels = batch
    inputs = as_matrix(inputs, name="batch inputs")
    labels = as_matrix(labels, name="batch labels")
    if inputs.shape[0] != labels.shape[0]:
        raise ValidationError("batch inputs and labels must have equal row counts")
    if inputs.shape[0] == 0:
        raise ValidationError("batch must be non-empty")
    return inputs, labels


def conditional_ce(head: ConditionalGaussianHead, batch) -> float:
    """Mean of -log q(y_i | x_i): the conditional cross-entropy estimate.

    Uses uniform empirical mass over the batch rows, each carrying its
    own observed label.
    """
    inputs, labels = _unpack_batch(batch)
    logq = cond_log_density_batch(head, inputs, labels)
    return -math.fsum(logq.tolist()) / inputs.shape[0]


def marginal_ce(
    choice: MarginalModelChoice, head: ConditionalGaussianHead | None, batch
) -> float:
    """Mean of -log q_Y(y_j) under the chosen marginal model.

    The mixture choice scores every label against the equal-weight
    mixture of conditionals over the same batch's inputs (O(N^2) in the
    batch size).
    """
    inputs, labels = _unpack_batch(batch)
    n = inputs.shape[0]
    if choice.kind == "parametric":
        logq = choice.marginal.log_density_batch(labels)
        return -math.fsum(logq.tolist()) / n
    if head is None:
        raise ValidationError("mixture marginal requires the conditional head")
    vals = [
        -mixture_marginal_log_density(head, inputs, labels[j]) for j in range(n)
    ]
    return math.fsum(vals) / n


def mil_loss_batch(
    head: ConditionalGaussianHead,
    choice: MarginalModelChoice,
    batch,
    lambda_ent: float,
) -> LossReport:
    """Evaluate both cross-entropies and combine them.

    mil_loss = conditional_ce + lambda_ent * marginal_ce and
    mi_estimate = marginal_ce - conditional_ce, by construction.
    """
    if lambda_ent < 0.0:
        raise ValidationError(f"lambda_ent must be >= 0, got {lambda_ent}")
    cce = conditional_ce(head, batch)
    mce = marginal_ce(choice, head, batch)
    return LossReport(
        conditional_ce=cce,
        marginal_ce=mce,
        mil_loss=cce + lambda_ent * mce,
        mi_estimate=mce - cce,
        lambda_ent=lambda_ent,
    )


def mil_grad_batch(
    head: ConditionalGaussianHead,
    marginal: MarginalGaussian,
    batch,
    lambda_ent: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Exact batch-mean gradients of the combined loss.

    Two-network (parametric marginal) configuration only.  Returns the
    gradient with respect to the head parameters and the gradient with
    respect to the marginal parameters (the latter carries the
    lambda_ent factor).
    """
    if lambda_ent < 0.0:
        raise ValidationError(f"lambda_ent must be >= 0, got {lambda_ent}")
    inputs, labels = _unpack_batch(batch)
    if inputs.shape[1] != head.input_dim or labels.shape[1] != head.label_dim:
        raise ValidationError("batch dimensions do not match the head")
    if labels.shape[1] != marginal.label_dim:
        raise ValidationError("batch dimensions do not match the marginal")
    n = inputs.shape[0]
    inv_n = 1.0 / n

    mu, sigma, exp_raw, acts = head._forward_cached(inputs)
    dmu = (mu - labels) / (sigma * sigma) * inv_n
    z = (labels - mu) / sigma
    draw = (1.0 - z * z) * head.sigma_interior_mask(exp_raw) * inv_n
    grad_head = head._backward(acts, dmu, draw)

    msigma = marginal.sigma
    mz = (labels - marginal.mu) / msigma
    g_mu = (marginal.mu - labels) / (msigma * msigma)
    m_exp_raw = np.exp(marginal.raw_sigma)
    interior = (
        (m_exp_raw > marginal.sigma_min) & (m_exp_raw < marginal.sigma_max)
    ).astype(np.float64)
    g_raw = (1.0 - mz * mz) * interior
    grad_marginal = lambda_ent * inv_n * np.concatenate(
        [g_mu.sum(axis=0), g_raw.sum(axis=0)]
    )
    return grad_head, grad_marginal


def mse_loss_and_grad(
    head: ConditionalGaussianHead, batch
) -> tuple[float, np.ndarray]:
    """Mean squared error (1/N) sum ||mu(x_i) - y_i||^2 and its gradient.

    The scale path receives zero gradient: this is pure mean
    regression.
    """
    inputs, labels = _unpack_batch(batch)
    if inputs.shape[1] != head.input_dim or labels.shape[1] != head.label_dim:
        raise ValidationError("batch dimensions do not match the head")
    n = inputs.shape[0]
    inv_n = 1.0 / n
    mu, _, _, acts = head._forward_cached(inputs)
    diff = mu - labels
    loss = math.fsum(np.sum(diff * diff, axis=1).tolist()) * inv_n
    dmu = 2.0 * diff * inv_n
    draw = np.zeros_like(dmu)
    return loss, head._backward(acts, dmu, draw)


def nll_mse_offset(label_dim: int) -> float:
    """Constant separating the two objectives at unit scale.

    For any head with sigma pinned to 1,
    conditional_ce = 0.5 * mse_loss + label_dim * 0.5 * log(2 pi).
    """
    if label_dim < 1:
        raise ValidationError(f"label_dim must be positive, got {label_dim}")
    return label_dim * 0.5 * LOG_2PI


def mi_estimate(
    head: ConditionalGaussianHead, choice: MarginalModelChoice, dataset
) -> float:
    """Plug-in mutual information: marginal_ce - conditional_ce.

    With the mixture marginal the value can never exceed log N because
    the mixture places at least weight 1/N on each row's own
    conditional component.
    """
    return marginal_ce(choice, head, dataset) - conditional_ce(head, dataset)
