"""Feed-forward ReLU classifier f = h(g(x)).

``g`` (the feature extractor) is every layer but the last; ``h`` is the
final linear layer. All forward functions go through the autodiff engine
so the same code serves training, poisoning and evaluation.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .rng import RngState


@dataclass
class MlpSpec:
    input_dim: int
    num_classes: int
    hidden_dims: list[int] = field(default_factory=lambda: [64, 64])
    activation: str = "relu"

    def __post_init__(self):
        self.hidden_dims = [int(h) for h in self.hidden_dims]
        if not self.hidden_dims:
            raise ValueError("need at least one hidden layer so that g is not the identity")
        if self.activation != "relu":
            raise ValueError("only relu activations are supported")
        if self.input_dim < 1 or self.num_classes < 2 or min(self.hidden_dims) < 1:
            raise ValueError(f"invalid layer sizes in {self}")

    @property
    def feature_dim(self) -> int:
        return self.hidden_dims[-1]

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim, *self.hidden_dims, self.num_classes]


@dataclass
class ModelState:
    spec: MlpSpec
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    epoch: int = 0

    def params(self) -> list[np.ndarray]:
        """Flat [W0, b0, W1, b1, ...]; the arrays are shared, not copied."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "ModelState":
        return copy.deepcopy(self)


def init_model(spec: MlpSpec, rng: RngState) -> ModelState:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases."""
    weights, biases = [], []
    sizes = spec.layer_sizes
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / math.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, fan_out))
    return ModelState(spec, weights, biases)


def _check_input(spec: MlpSpec, x) -> None:
    shape = x.shape
    if len(shape) != 2 or shape[1] != spec.input_dim:
        raise ValueError(f"expected inputs of shape (batch, {spec.input_dim}), got {shape}")


def mlp_features(params, x):
    """g(x) for a flat parameter list (arrays or Tensors)."""
    h = x
    n_layers = len(params) // 2
    for i in range(n_layers - 1):
        h = ad.relu(ad.matmul(h, params[2 * i]) + params[2 * i + 1])
    return ad.as_tensor(h)


def linear_head(params, z):
    return ad.matmul(z, params[-2]) + params[-1]


def mlp_logits(params, x):
    return linear_head(params, mlp_features(params, x))


def forward_features(model: ModelState, x) -> ad.Tensor:
    """Penultimate activations Z = g(x)."""
    _check_input(model.spec, x)
    return mlp_features(model.params(), x)


def forward_logits(model: ModelState, x) -> ad.Tensor:
    _check_input(model.spec, x)
    return mlp_logits(model.params(), x)


def one_hot(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    out = np.zeros((labels.shape[0], num_classes))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def ce_loss(logits, labels) -> ad.Tensor:
    """Mean cross-entropy, -log softmax(logits)[label], with max subtraction."""
    logits = ad.as_tensor(logits)
    onehot = one_hot(labels, logits.shape[1])
    picked = ad.sum(logits * onehot, axis=1)
    return ad.mean(ad.logsumexp(logits, axis=1) - picked)


def predict(model: ModelState, x: np.ndarray, batch: int = 4096) -> np.ndarray:
    out = [forward_logits(model, x[i:i + batch]).data.argmax(axis=1) for i in range(0, x.shape[0], batch)]
    return np.concatenate(out) if out else np.empty(0, dtype=np.int64)


def accuracy(model: ModelState, x: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(predict(model, x) == labels))
