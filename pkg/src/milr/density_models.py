"""Parametric densities: the conditional Gaussian head and the marginal.

The conditional head is a tanh MLP that maps an input vector to
2 * label_dim outputs interpreted as (mu(x), raw(x)), with the scale
recovered as sigma(x) = clamp(exp(raw(x)), sigma_min, sigma_max).  Label
components are modelled as independent Gaussians (diagonal covariance).
The marginal is a single diagonal Gaussian with the same raw-scale
parameterization.  Both models flatten their parameters to one vector
in a fixed order (per layer: weights row-major, then bias; marginal:
mean then raw scales), and all gradients are exact reverse-mode
derivatives with the clamp contributing zero gradient outside its
active range (boundary included).

Setting ``sigma_min == sigma_max`` pins the scale: sigma is constant and
the raw-scale parameters receive zero gradient, which is how the
unit-variance (pure mean regression) configuration is expressed.
"""

from __future__ import annotations

import math

import numpy as np

from .core_math import LOG_2PI, RngState, ValidationError, as_matrix, as_vector, logsumexp

__all__ = [
    "ConditionalGaussianHead",
    "MarginalGaussian",
    "head_forward",
    "head_forward_batch",
    "cond_log_density",
    "cond_log_density_batch",
    "head_backward",
    "marginal_log_density_and_grad",
    "mixture_marginal_log_density",
    "predict",
    "DEFAULT_SIGMA_MIN",
    "DEFAULT_SIGMA_MAX",
]

DEFAULT_SIGMA_MIN = 1e-3
DEFAULT_SIGMA_MAX = 1e3

MODEL_SCHEMA_VERSION = 1


def _validate_sigma_bounds(sigma_min: float, sigma_max: float) -> None:
    if not (0.0 < sigma_min <= sigma_max < math.inf):
        raise ValidationError(
            f"need 0 < sigma_min <= sigma_max < inf, got ({sigma_min}, {sigma_max})"
        )


class ConditionalGaussianHead:
    """Tanh MLP emitting per-input diagonal Gaussian parameters.

    ``layer_sizes`` lists the hidden widths; the final affine layer maps
    the last hidden activation (or the input, if no hidden layers) to
    2 * label_dim values.  Weight matrices are stored (out, in).
    """

    def __init__(
        self,
        input_dim: int,
        label_dim: int,
        weights: list[np.ndarray],
        biases: list[np.ndarray],
        activation: str = "tanh",
        sigma_min: float = DEFAULT_SIGMA_MIN,
        sigma_max: float = DEFAULT_SIGMA_MAX,
    ):
        if input_dim < 1 or label_dim < 1:
            raise ValidationError("input_dim and label_dim must be positive")
        if activation != "tanh":
            raise ValidationError(f"unsupported activation {activation!r}")
        _validate_sigma_bounds(sigma_min, sigma_max)
        if len(weights) != len(biases) or not weights:
            raise ValidationError("need one bias per weight matrix, at least one layer")
        fan_in = input_dim
        for idx, (w, b) in enumerate(zip(weights, biases)):
            w = as_matrix(w, name=f"weights[{idx}]")
            b = as_vector(b, name=f"biases[{idx}]")
            if w.shape[1] != fan_in or w.shape[0] != b.shape[0]:
                raise ValidationError(
                    f"layer {idx} shape mismatch: {w.shape} with fan_in {fan_in}"
                )
            fan_in = w.shape[0]
        if fan_in != 2 * label_dim:
            raise ValidationError(
                f"final layer must emit 2 * label_dim = {2 * label_dim} values"
            )
        self.input_dim = input_dim
        self.label_dim = label_dim
        self.activation = activation
        self.sigma_min = float(sigma_min)
        self.sigma_max = float(sigma_max)
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]

    # -- construction ---------------------------------------------------

    @classmethod
    def create(
        cls,
        input_dim: int,
        label_dim: int,
        layer_sizes: list[int],
        state: RngState | None = None,
        activation: str = "tanh",
        sigma_min: float = DEFAULT_SIGMA_MIN,
        sigma_max: float = DEFAULT_SIGMA_MAX,
    ) -> "ConditionalGaussianHead":
        """Standard initialization.

        Hidden layers draw uniform +-sqrt(6 / (fan_in + fan_out))
        (requires ``state``); the final layer is zero so a fresh head is
        exactly the standard-normal density regardless of its input.
        ``layer_sizes == []`` gives a single affine layer, initialized
        to zero.
        """
        dims = [input_dim] + list(layer_sizes) + [2 * label_dim]
        weights, biases = [], []
        for i in range(len(dims) - 1):
            fan_in, fan_out = dims[i], dims[i + 1]
            last = i == len(dims) - 2
            if last:
                w = np.zeros((fan_out, fan_in))
            else:
                if state is None:
                    raise ValidationError("hidden layers require an RngState to initialize")
                bound = math.sqrt(6.0 / (fan_in + fan_out))
                u = state.uniform_array(fan_out * fan_in).reshape(fan_out, fan_in)
                w = (2.0 * u - 1.0) * bound
            weights.append(w)
            biases.append(np.zeros(fan_out))
        return cls(
            input_dim,
            label_dim,
            weights,
            biases,
            activation=activation,
            sigma_min=sigma_min,
            sigma_max=sigma_max,
        )

    @classmethod
    def zero_init(
        cls,
        input_dim: int,
        label_dim: int,
        layer_sizes: list[int] | None = None,
        sigma_min: float = DEFAULT_SIGMA_MIN,
        sigma_max: float = DEFAULT_SIGMA_MAX,
    ) -> "ConditionalGaussianHead":
        """All-zero parameters: mu(x) = 0 and sigma(x) = clamp(1)."""
        dims = [input_dim] + list(layer_sizes or []) + [2 * label_dim]
        weights = [np.zeros((dims[i + 1], dims[i])) for i in range(len(dims) - 1)]
        biases = [np.zeros(dims[i + 1]) for i in range(len(dims) - 1)]
        return cls(
            input_dim, label_dim, weights, biases,
            sigma_min=sigma_min, sigma_max=sigma_max,
        )

    # -- parameter vector -----------------------------------------------

    @property
    def layer_sizes(self) -> list[int]:
        return [w.shape[0] for w in self.weights[:-1]]

    @property
    def param_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def get_params(self) -> np.ndarray:
        """Flatten to one vector: per layer, weights row-major then bias."""
        parts = []
        for w, b in zip(self.weights, self.biases):
            parts.append(w.ravel())
            parts.append(b)
        return np.concatenate(parts)

    def set_params(self, theta: np.ndarray) -> None:
        theta = as_vector(theta, dim=self.param_count, name="theta")
        pos = 0
        for w, b in zip(self.weights, self.biases):
            w[...] = theta[pos : pos + w.size].reshape(w.shape)
            pos += w.size
            b[...] = theta[pos : pos + b.size]
            pos += b.size

    def clone(self) -> "ConditionalGaussianHead":
        return ConditionalGaussianHead(
            self.input_dim,
            self.label_dim,
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            activation=self.activation,
            sigma_min=self.sigma_min,
            sigma_max=self.sigma_max,
        )

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "schema_version": MODEL_SCHEMA_VERSION,
            "input_dim": self.input_dim,
            "label_dim": self.label_dim,
            "activation": self.activation,
            "sigma_min": self.sigma_min,
            "sigma_max": self.sigma_max,
            "layers": [
                {
                    "rows": w.shape[0],
                    "cols": w.shape[1],
                    "weights": w.ravel().tolist(),
                    "bias": b.tolist(),
                }
                for w, b in zip(self.weights, self.biases)
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ConditionalGaussianHead":
        required = {
            "schema_version", "input_dim", "label_dim", "activation",
            "sigma_min", "sigma_max", "layers",
        }
        if not isinstance(doc, dict):
            raise ValidationError("model document must be an object")
        unknown = set(doc) - required
        if unknown:
            raise ValidationError(f"unknown model fields: {sorted(unknown)}")
        missing = required - set(doc)
        if missing:
            raise ValidationError(f"missing model fields: {sorted(missing)}")
        if doc["schema_version"] != MODEL_SCHEMA_VERSION:
            raise ValidationError(
                f"unsupported schema_version {doc['schema_version']!r}"
            )
        weights, biases = [], []
        for idx, layer in enumerate(doc["layers"]):
            layer_fields = {"rows", "cols", "weights", "bias"}
            if set(layer) != layer_fields:
                raise ValidationError(f"layer {idx} must have fields {sorted(layer_fields)}")
            rows, cols = int(layer["rows"]), int(layer["cols"])
            w = np.asarray(layer["weights"], dtype=np.float64)
            if w.size != rows * cols:
                raise ValidationError(f"layer {idx} weights length != rows * cols")
            weights.append(w.reshape(rows, cols))
            biases.append(np.asarray(layer["bias"], dtype=np.float64))
        return cls(
            int(doc["input_dim"]),
            int(doc["label_dim"]),
            weights,
            biases,
            activation=doc["activation"],
            sigma_min=float(doc["sigma_min"]),
            sigma_max=float(doc["sigma_max"]),
        )

    # -- forward / backward ------------------------------------------------

    def _forward_cached(self, x_batch: np.ndarray):
        """Forward pass keeping the per-layer activations for backprop.

        Returns (mu, sigma, exp_raw, cache) where every array has one
        row per batch element and cache holds [input, hidden...] plus
        the raw final output.
        """
        acts = [x_batch]
        a = x_batch
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            a = np.tanh(a @ w.T + b)
            acts.append(a)
        z = a @ self.weights[-1].T + self.biases[-1]
        dy = self.label_dim
        mu = z[:, :dy]
        exp_raw = np.exp(z[:, dy:])
        sigma = np.clip(exp_raw, self.sigma_min, self.sigma_max)
        return mu, sigma, exp_raw, acts

    def _backward(self, acts, dmu: np.ndarray, draw: np.ndarray) -> np.ndarray:
        """Reverse pass from final-layer adjoints to the flat gradient.

        ``dmu`` and ``draw`` are the adjoints of the mean outputs and
        the raw (pre-exp) scale outputs; the caller applies the chain
        rule through sigma and the clamp mask before calling.
        """
        dz = np.concatenate([dmu, draw], axis=1)
        grads: list[np.ndarray] = []
        for layer in range(len(self.weights) - 1, -1, -1):
            w = self.weights[layer]
            a_prev = acts[layer]
            gw = dz.T @ a_prev
            gb = dz.sum(axis=0)
            grads.append(gb)
            grads.append(gw.ravel())
            if layer > 0:
                da = dz @ w
                h = acts[layer]
                dz = da * (1.0 - h * h)
        return np.concatenate(grads[::-1])

    def sigma_interior_mask(self, exp_raw: np.ndarray) -> np.ndarray:
        """1.0 where the clamp is inactive (strict interior), else 0.0."""
        return (
            (exp_raw > self.sigma_min) & (exp_raw < self.sigma_max)
        ).astype(np.float64)


def head_forward_batch(head: ConditionalGaussianHead, x_batch) -> tuple[np.ndarray, np.ndarray]:
    """(mu, sigma) for every row of an N x input_dim matrix."""
    xb = as_matrix(x_batch, cols=head.input_dim, name="x_batch")
    mu, sigma, _, _ = head._forward_cached(xb)
    return mu, sigma


def head_forward(head: ConditionalGaussianHead, x) -> tuple[np.ndarray, np.ndarray]:
    """(mu(x), sigma(x)) for a single input vector."""
    xv = as_vector(x, dim=head.input_dim, name="x")
    mu, sigma = head_forward_batch(head, xv.reshape(1, -1))
    return mu[0], sigma[0]


def _batch_log_density(mu: np.ndarray, sigma: np.ndarray, y: np.ndarray) -> np.ndarray:
    z = (y - mu) / sigma
    return (
        -0.5 * np.sum(z * z, axis=1)
        - np.sum(np.log(sigma), axis=1)
        - 0.5 * LOG_2PI * mu.shape[1]
    )


def cond_log_density_batch(head: ConditionalGaussianHead, x_batch, y_batch) -> np.ndarray:
    """Row-wise log q(y_i | x_i) for paired batches."""
    xb = as_matrix(x_batch, cols=head.input_dim, name="x_batch")
    yb = as_matrix(y_batch, cols=head.label_dim, name="y_batch")
    if xb.shape[0] != yb.shape[0]:
        raise ValidationError("x_batch and y_batch must have equal row counts")
    mu, sigma = head_forward_batch(head, xb)
    return _batch_log_density(mu, sigma, yb)


def cond_log_density(head: ConditionalGaussianHead, x, y) -> float:
    """log q(y | x) for a single (input, label) pair (diagonal Gaussian)."""
    xv = as_vector(x, dim=head.input_dim, name="x")
    yv = as_vector(y, dim=head.label_dim, name="y")
    return float(cond_log_density_batch(head, xv.reshape(1, -1), yv.reshape(1, -1))[0])


def head_backward(head: ConditionalGaussianHead, x, y) -> np.ndarray:
    """Gradient of -log q(y | x) with respect to the flat parameters."""
    xv = as_vector(x, dim=head.input_dim, name="x")
    yv = as_vector(y, dim=head.label_dim, name="y")
    mu, sigma, exp_raw, acts = head._forward_cached(xv.reshape(1, -1))
    resid = (mu - yv.reshape(1, -1)) / (sigma * sigma)
    zsq = ((yv.reshape(1, -1) - mu) / sigma) ** 2
    draw = (1.0 - zsq) * head.sigma_interior_mask(exp_raw)
    return head._backward(acts, resid, draw)


def predict(head: ConditionalGaussianHead, x) -> np.ndarray:
    """Point prediction: the conditional mean mu(x)."""
    mu, _ = head_forward(head, x)
    return mu


def predict_batch(head: ConditionalGaussianHead, x_batch) -> np.ndarray:
    """Conditional means for every row of an input matrix."""
    mu, _ = head_forward_batch(head, x_batch)
    return mu


def mixture_marginal_log_density(head: ConditionalGaussianHead, batch_inputs, y) -> float:
    """log of the equal-weight mixture (1/N) sum_i q(y | x_i).

    Computed as logsumexp of the component log densities minus log N,
    so it is overflow-safe and exactly invariant under permutation of
    the batch rows.
    """
    xb = as_matrix(batch_inputs, cols=head.input_dim, name="batch_inputs")
    if xb.shape[0] == 0:
        raise ValidationError("mixture marginal requires a non-empty batch")
    yv = as_vector(y, dim=head.label_dim, name="y")
    mu, sigma = head_forward_batch(head, xb)
    comp = _batch_log_density(mu, sigma, yv.reshape(1, -1))
    return logsumexp(comp) - math.log(xb.shape[0])


class MarginalGaussian:
    """Diagonal Gaussian marginal with raw (pre-exp) scale parameters."""

    def __init__(
        self,
        mu,
        raw_sigma,
        sigma_min: float = DEFAULT_SIGMA_MIN,
        sigma_max: float = DEFAULT_SIGMA_MAX,
    ):
        _validate_sigma_bounds(sigma_min, sigma_max)
        self.mu = as_vector(mu, name="mu").copy()
        self.raw_sigma = as_vector(raw_sigma, dim=self.mu.shape[0], name="raw_sigma").copy()
        self.sigma_min = float(sigma_min)
        self.sigma_max = float(sigma_max)

    @classmethod
    def standard(
        cls,
        label_dim: int,
        sigma_min: float = DEFAULT_SIGMA_MIN,
        sigma_max: float = DEFAULT_SIGMA_MAX,
    ) -> "MarginalGaussian":
        """N(0, I): the training start point."""
        return cls(np.zeros(label_dim), np.zeros(label_dim), sigma_min, sigma_max)

    @property
    def label_dim(self) -> int:
        return self.mu.shape[0]

    @property
    def param_count(self) -> int:
        return 2 * self.label_dim

    @property
    def sigma(self) -> np.ndarray:
        return np.clip(np.exp(self.raw_sigma), self.sigma_min, self.sigma_max)

    def get_params(self) -> np.ndarray:
        return np.concatenate([self.mu, self.raw_sigma])

    def set_params(self, theta: np.ndarray) -> None:
        theta = as_vector(theta, dim=self.param_count, name="theta")
        d = self.label_dim
        self.mu[...] = theta[:d]
        self.raw_sigma[...] = theta[d:]

    def clone(self) -> "MarginalGaussian":
        return MarginalGaussian(self.mu, self.raw_sigma, self.sigma_min, self.sigma_max)

    def to_dict(self) -> dict:
        return {
            "schema_version": MODEL_SCHEMA_VERSION,
            "label_dim": self.label_dim,
            "mu": self.mu.tolist(),
            "raw_sigma": self.raw_sigma.tolist(),
            "sigma_min": self.sigma_min,
            "sigma_max": self.sigma_max,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "MarginalGaussian":
        required = {"schema_version", "label_dim", "mu", "raw_sigma", "sigma_min", "sigma_max"}
        if not isinstance(doc, dict) or set(doc) != required:
            raise ValidationError(f"marginal document must have fields {sorted(required)}")
        if doc["schema_version"] != MODEL_SCHEMA_VERSION:
            raise ValidationError(f"unsupported schema_version {doc['schema_version']!r}")
        m = cls(doc["mu"], doc["raw_sigma"], float(doc["sigma_min"]), float(doc["sigma_max"]))
        if m.label_dim != int(doc["label_dim"]):
            raise ValidationError("label_dim does not match parameter lengths")
        return m

    def log_density_batch(self, y_batch) -> np.ndarray:
        yb = as_matrix(y_batch, cols=self.label_dim, name="y_batch")
        sigma = self.sigma
        return _batch_log_density(
            self.mu.reshape(1, -1), sigma.reshape(1, -1), yb
        )


def marginal_log_density_and_grad(
    marginal: MarginalGaussian, y
) -> tuple[float, np.ndarray]:
    """log q(y) and the exact gradient of -log q(y) wrt (mu, raw_sigma)."""
    yv = as_vector(y, dim=marginal.label_dim, name="y")
    sigma = marginal.sigma
    z = (yv - marginal.mu) / sigma
    logq = float(-0.5 * z @ z - np.sum(np.log(sigma)) - 0.5 * LOG_2PI * marginal.label_dim)
    dmu = (marginal.mu - yv) / (sigma * sigma)
    exp_raw = np.exp(marginal.raw_sigma)
    interior = (
        (exp_raw > marginal.sigma_min) & (exp_raw < marginal.sigma_max)
    ).astype(np.float64)
    draw = (1.0 - z * z) * interior
    return logq, np.concatenate([dmu, draw])
