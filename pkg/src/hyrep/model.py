"""The phoneme classifier: a hyperbolic feed-forward feature extractor and
a hyperbolic multiclass logistic-regression head, plus the all-Euclidean
variant sharing the same parameter shapes and interface.

The forward functions take raw parameter arrays (ndarray or tape Var), so
the same code serves inference and gradient-based training.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import ball
from . import tape as tp

__all__ = [
    "ModelConfig",
    "Model",
    "ffnn_forward",
    "mlr_logits",
    "euclidean_logits",
    "forward_logits",
    "forward_latent",
    "cross_entropy",
    "predict",
    "predict_batch",
    "save_checkpoint",
    "load_checkpoint",
]

ACTIVATIONS = {
    "relu": tp.relu,
    "tanh": tp.tanh,
    "identity": lambda x: x,
}

# below this norm an MLR hyperplane normal is treated as degenerate (logit 0)
DEGENERATE_NORMAL = 1e-12

CHECKPOINT_FORMAT = "hyrep-checkpoint-v1"


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    num_classes: int
    latent_dim: int = 256
    curvature: float = 2.0
    space: str = "hyperbolic"  # "hyperbolic" | "euclidean"
    activation: str = "relu"

    def __post_init__(self):
        if self.input_dim < 1 or self.latent_dim < 1:
            raise ValueError("dimensions must be >= 1")
        if self.num_classes < 2:
            raise ValueError("need at least 2 classes")
        ball.check_curvature(self.curvature)
        if self.space not in ("hyperbolic", "euclidean"):
            raise ValueError(f"unknown space: {self.space!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation: {self.activation!r}")


def init_params(config, rng):
    """Fresh parameter arrays: weight, bias, mlr normals a, mlr offsets p.

    Weights uniform in [-1/sqrt(d), 1/sqrt(d)], biases zero, hyperplane
    offsets p at the origin, normals a standard normal scaled by
    1/sqrt(latent_dim).
    """
    d, l, k = config.input_dim, config.latent_dim, config.num_classes
    bound = 1.0 / np.sqrt(d)
    weight = rng.uniform(-bound, bound, size=(l, d))
    bias = np.zeros(l)
    a = rng.standard_normal((k, l)) / np.sqrt(l)
    p = np.zeros((k, l))
    return weight, bias, a, p


@dataclass
class Model:
    """Config plus parameters; immutable during inference."""

    config: ModelConfig
    weight: np.ndarray
    bias: np.ndarray
    mlr_a: np.ndarray
    mlr_p: np.ndarray
    seed: int = 0

    @classmethod
    def initialize(cls, config, seed=0):
        rng = np.random.default_rng(seed)
        weight, bias, a, p = init_params(config, rng)
        return cls(config, weight, bias, a, p, seed=seed)

    @property
    def params(self):
        return self.weight, self.bias, self.mlr_a, self.mlr_p

    def logits(self, x_e):
        return forward_logits(self.config, self.weight, self.bias, self.mlr_a, self.mlr_p, x_e)


def ffnn_forward(x_h, weight, bias, activation, c):
    """Hyperbolic feed-forward layer: exp0(act(W log0(x) + b)).

    ``x_h`` has shape (..., d) on the ball; result lands on the ball of the
    weight's output dimension.
    """
    act = ACTIVATIONS[activation]
    single = tp.value(x_h).ndim == 1
    if single:
        x_h = tp.reshape(x_h, (1, -1))
    u = ball.log0(x_h, c)
    lin = tp.matmul(u, tp.transpose(weight)) + bias
    out = ball.exp0(act(lin), c)
    if single:
        out = tp.reshape(out, (tp.value(out).shape[-1],))
    return out


def mlr_logits(x_l, a, p, c):
    """Hyperbolic MLR logits for points ``x_l`` of shape (n, l) -> (n, K).

    logit_k = (lambda_{p_k} ||a_k|| / sqrt(c)) *
              asinh(2 sqrt(c) <(-p_k) (+) x, a_k> /
                    ((1 - c ||(-p_k) (+) x||^2) ||a_k||))

    Hyperplanes with a degenerate normal (||a_k|| < 1e-12) contribute a
    zero logit rather than a division error.
    """
    c = ball.check_curvature(c)
    sc = np.sqrt(c)
    n, l = tp.value(x_l).shape
    k = tp.value(a).shape[0]

    xb = tp.reshape(x_l, (1, n, l))
    pb = tp.reshape(p, (k, 1, l))
    ab = tp.reshape(a, (k, 1, l))

    z = ball.mobius_add(tp.mul(pb, -1.0), xb, c)  # (k, n, l)
    a_norm = tp.norm(ab, axis=-1, keepdims=True)  # (k, 1, 1)
    degenerate = tp.value(a_norm) < DEGENERATE_NORMAL
    a_safe = tp.where(degenerate, np.ones_like(tp.value(a_norm)), a_norm)

    dot = tp.vsum(z * ab, axis=-1, keepdims=True)  # (k, n, 1)
    z2 = tp.vsum(z * z, axis=-1, keepdims=True)
    lam_p = 2.0 / (1.0 - c * tp.vsum(pb * pb, axis=-1, keepdims=True))  # (k, 1, 1)

    inner = (2.0 * sc * dot) / ((1.0 - c * z2) * a_safe)
    logit = (lam_p * a_safe / sc) * tp.asinh(inner)  # (k, n, 1)
    logit = tp.where(np.broadcast_to(degenerate, tp.value(logit).shape), np.zeros((k, n, 1)), logit)
    return tp.transpose(tp.reshape(logit, (k, n)), (1, 0))


def euclidean_logits(h, a, p):
    """Euclidean head with the same parameter shapes: logit_k = <h - p_k, a_k>."""
    offset = tp.vsum(tp.mul(a, p), axis=-1)  # (K,)
    return tp.matmul(h, tp.transpose(a)) - offset


def forward_latent(config, weight, bias, x_e):
    """Input features (n, d) -> latent representation (n, latent_dim).

    Hyperbolic: point on the ball via exp0 -> FFNN.  Euclidean: plain
    affine layer plus activation.
    """
    act = ACTIVATIONS[config.activation]
    if config.space == "hyperbolic":
        x_h = ball.exp0(x_e, config.curvature)
        return ffnn_forward(x_h, weight, bias, config.activation, config.curvature)
    return act(tp.matmul(x_e, tp.transpose(weight)) + bias)


def forward_logits(config, weight, bias, a, p, x_e):
    """Full forward pass: features (n, d) -> logits (n, K)."""
    xv = tp.value(x_e)
    squeeze = xv.ndim == 1
    if squeeze:
        x_e = tp.reshape(x_e, (1, -1)) if isinstance(x_e, tp.Var) else xv.reshape(1, -1)
    if tp.value(x_e).shape[-1] != config.input_dim:
        raise ValueError("input dimension mismatch")
    latent = forward_latent(config, weight, bias, x_e)
    if config.space == "hyperbolic":
        out = mlr_logits(latent, a, p, config.curvature)
    else:
        out = euclidean_logits(latent, a, p)
    if squeeze:
        out = tp.reshape(out, (config.num_classes,)) if isinstance(out, tp.Var) else tp.value(out)[0]
    return out


def cross_entropy(logits, label):
    """Mean cross-entropy -log softmax(logits)[label], max-subtracted.

    Accepts a single (K,) logit vector with an integer label, or a batch
    (n, K) with an integer array; returns the scalar (mean) loss.
    """
    lv = tp.value(logits)
    if lv.ndim == 1:
        logits = tp.reshape(logits, (1, -1)) if isinstance(logits, tp.Var) else lv.reshape(1, -1)
        labels = np.array([label])
    else:
        labels = np.atleast_1d(np.asarray(label))
    n, k = tp.value(logits).shape
    if labels.shape != (n,):
        raise ValueError("label count does not match batch size")
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValueError("label out of range")
    onehot = np.eye(k)[labels]
    lse = tp.logsumexp(logits, axis=-1)
    true = tp.vsum(tp.mul(logits, onehot), axis=-1)
    return tp.vmean(tp.sub(lse, true))


def predict_batch(model, x_e):
    """Features (n, d) -> (predicted labels (n,), probabilities (n, K))."""
    logits = model.logits(np.atleast_2d(np.asarray(x_e, dtype=float)))
    probs = tp.softmax(logits, axis=-1)
    return np.argmax(probs, axis=-1), probs


def predict(model, x_e):
    """Single feature vector -> (predicted class id, probability vector)."""
    labels, probs = predict_batch(model, np.asarray(x_e, dtype=float).reshape(1, -1))
    return int(labels[0]), probs[0]


# -- checkpoint io ------------------------------------------------------


def _checkpoint_dict(model):
    return {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(model.config),
        "params": {
            "weight": model.weight.tolist(),
            "bias": model.bias.tolist(),
            "mlr_a": model.mlr_a.tolist(),
            "mlr_p": model.mlr_p.tolist(),
        },
        "seed": int(model.seed),
    }


def checkpoint_bytes(model):
    return (json.dumps(_checkpoint_dict(model), sort_keys=True, separators=(",", ":")) + "\n").encode()


def save_checkpoint(model, path):
    with open(path, "wb") as f:
        f.write(checkpoint_bytes(model))


def load_checkpoint(path):
    with open(path, "rb") as f:
        doc = json.loads(f.read())
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"not a model checkpoint: {path}")
    config = ModelConfig(**doc["config"])
    params = doc["params"]
    return Model(
        config,
        np.array(params["weight"], dtype=float),
        np.array(params["bias"], dtype=float),
        np.array(params["mlr_a"], dtype=float),
        np.array(params["mlr_p"], dtype=float),
        seed=int(doc.get("seed", 0)),
    )
