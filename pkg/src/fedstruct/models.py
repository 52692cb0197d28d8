"""Heterogeneous MLP zoo: tanh feature extractors + linear classifier heads.

Forward, backward, and SGD steps are written out by hand on numpy arrays so
the arithmetic is fully inspectable and byte-deterministic.  Each client
model maps inputs -> shared feature space (dimension feature_dim) -> logits;
architectures differ only in their hidden widths.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, NumericFailureError

ACTIVATIONS = ("tanh", "linear")


@dataclass(frozen=True)
class ArchitectureSpec:
    """Hidden widths of one extractor; () means a single linear map to features."""

    hidden_widths: tuple[int, ...]
    feature_dim: int

    def __post_init__(self):
        if any((not isinstance(w, (int, np.integer))) or w < 1 for w in self.hidden_widths):
            raise ContractError(f"hidden widths must be positive ints, got {self.hidden_widths}")
        if self.feature_dim < 1:
            raise ContractError(f"feature_dim must be >= 1, got {self.feature_dim}")


def default_zoo(feature_dim: int = 8) -> list[ArchitectureSpec]:
    """The four-architecture family used throughout: depths 1-4 into a shared space."""
    return [
        ArchitectureSpec((), feature_dim),
        ArchitectureSpec((16,), feature_dim),
        ArchitectureSpec((32, 16), feature_dim),
        ArchitectureSpec((64, 32, 16), feature_dim),
    ]


@dataclass
class Layer:
    weights: np.ndarray  # (fan_in, fan_out)
    bias: np.ndarray  # (fan_out,)
    activation: str  # "tanh" or "linear"


@dataclass
class ClientModel:
    extractor: list[Layer]
    classifier_weights: np.ndarray  # (feature_dim, num_classes)
    classifier_bias: np.ndarray  # (num_classes,)
    feature_dim: int
    architecture_id: int = 0

    @property
    def input_dim(self) -> int:
        return self.extractor[0].weights.shape[0]

    @property
    def num_classes(self) -> int:
        return self.classifier_weights.shape[1]

    @property
    def parameter_count(self) -> int:
        total = self.classifier_weights.size + self.classifier_bias.size
        for layer in self.extractor:
            total += layer.weights.size + layer.bias.size
        return int(total)

    def copy(self) -> "ClientModel":
        return ClientModel(
            extractor=[
                Layer(l.weights.copy(), l.bias.copy(), l.activation) for l in self.extractor
            ],
            classifier_weights=self.classifier_weights.copy(),
            classifier_bias=self.classifier_bias.copy(),
            feature_dim=self.feature_dim,
            architecture_id=self.architecture_id,
        )


@dataclass
class ForwardCache:
    """Intermediate activations: layer_inputs[i] feeds extractor layer i;
    layer_inputs[-1] is the embedding matrix."""

    layer_inputs: list[np.ndarray] = field(default_factory=list)


def build_model(
    spec: ArchitectureSpec,
    input_dim: int,
    num_classes: int,
    seed,
    architecture_id: int = 0,
) -> ClientModel:
    """Seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization.

    The draw order (per layer: weights then bias, classifier last) is part of
    the determinism contract.
    """
    if input_dim < 1 or num_classes < 2:
        raise ContractError(
            f"need input_dim >= 1 and num_classes >= 2, got {input_dim}, {num_classes}"
        )
    rng = np.random.default_rng(seed)
    widths = list(spec.hidden_widths) + [spec.feature_dim]
    fan_in = input_dim
    layers = []
    for i, width in enumerate(widths):
        s = 1.0 / np.sqrt(fan_in)
        w = rng.uniform(-s, s, size=(fan_in, width))
        b = rng.uniform(-s, s, size=(width,))
        act = "tanh" if i < len(widths) - 1 else "linear"
        layers.append(Layer(w, b, act))
        fan_in = width
    s = 1.0 / np.sqrt(spec.feature_dim)
    cw = rng.uniform(-s, s, size=(spec.feature_dim, num_classes))
    cb = rng.uniform(-s, s, size=(num_classes,))
    return ClientModel(layers, cw, cb, spec.feature_dim, architecture_id)


def forward(model: ClientModel, batch) -> tuple[np.ndarray, np.ndarray, ForwardCache]:
    """Return (embeddings, logits, cache). batch is (n, input_dim)."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != model.input_dim:
        raise ContractError(
            f"batch shape {batch.shape} incompatible with input_dim {model.input_dim}"
        )
    cache = ForwardCache([batch])
    # overflow is detected explicitly below, so the IEEE warnings that
    # precede the non-finite check are suppressed rather than surfaced
    with np.errstate(over="ignore", invalid="ignore"):
        h = batch
        for layer in model.extractor:
            pre = h @ layer.weights + layer.bias
            h = np.tanh(pre) if layer.activation == "tanh" else pre
            cache.layer_inputs.append(h)
        embeddings = h
        logits = embeddings @ model.classifier_weights + model.classifier_bias
    if not (np.all(np.isfinite(embeddings)) and np.all(np.isfinite(logits))):
        raise NumericFailureError("forward pass produced non-finite values")
    return embeddings, logits, cache


def loss_supervised(logits, labels) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy; returns (value, grad_wrt_logits).

    grad = (softmax - onehot) / n, the standard stable form with shifted
    logits.  Uniform logits over C classes give exactly ln C.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ContractError(f"labels shape {labels.shape} != ({n},)")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ContractError(f"labels must be integers, got {labels.dtype}")
    if labels.min() < 0 or labels.max() >= c:
        raise ContractError(f"labels out of range [0, {c})")
    # shifting makes the softmax stable for any reasonable logits; extreme
    # (runaway-training) magnitudes may still overflow the mean, which the
    # caller's non-finite check turns into a NumericFailureError, so the
    # intermediate IEEE warnings are suppressed
    with np.errstate(over="ignore", invalid="ignore"):
        shifted = logits - logits.max(axis=1, keepdims=True)
        expz = np.exp(shifted)
        probs = expz / expz.sum(axis=1, keepdims=True)
        picked = shifted[np.arange(n), labels] - np.log(expz.sum(axis=1))
        value = float(-np.mean(picked))
    grad = probs.copy()
    grad[np.arange(n), labels] -= 1.0
    return value, grad / n


def backward_and_step(
    model: ClientModel,
    cache: ForwardCache,
    grad_logits,
    grad_embeddings,
    learning_rate: float,
) -> ClientModel:
    """One in-place plain-SGD step from upstream gradients.

    grad_logits drives the classifier head; grad_embeddings must already
    contain the FULL gradient at the embedding layer (classifier path plus
    any alignment terms) and drives the extractor.  All parameter gradients
    are computed and checked finite before any parameter is touched, so a
    numeric failure never leaves a half-updated model.
    """
    grad_logits = np.asarray(grad_logits, dtype=np.float64)
    grad_embeddings = np.asarray(grad_embeddings, dtype=np.float64)
    embeddings = cache.layer_inputs[-1]
    n = embeddings.shape[0]
    if grad_logits.shape != (n, model.num_classes):
        raise ContractError(
            f"grad_logits shape {grad_logits.shape} != ({n}, {model.num_classes})"
        )
    if grad_embeddings.shape != embeddings.shape:
        raise ContractError(
            f"grad_embeddings shape {grad_embeddings.shape} != {embeddings.shape}"
        )
    if not (learning_rate >= 0.0 and np.isfinite(learning_rate)):
        raise ContractError(f"learning_rate must be finite and >= 0, got {learning_rate}")

    grads = []
    gcw = embeddings.T @ grad_logits
    gcb = grad_logits.sum(axis=0)
    g = grad_embeddings
    for i in range(len(model.extractor) - 1, -1, -1):
        layer = model.extractor[i]
        out = cache.layer_inputs[i + 1]
        if layer.activation == "tanh":
            g = g * (1.0 - out * out)
        gw = cache.layer_inputs[i].T @ g
        gb = g.sum(axis=0)
        grads.append((i, gw, gb))
        if i > 0:
            g = g @ layer.weights.T

    for arr in (gcw, gcb, *(x for _, gw, gb in grads for x in (gw, gb))):
        if not np.all(np.isfinite(arr)):
            raise NumericFailureError("non-finite parameter gradient; step aborted")

    model.classifier_weights -= learning_rate * gcw
    model.classifier_bias -= learning_rate * gcb
    for i, gw, gb in grads:
        model.extractor[i].weights -= learning_rate * gw
        model.extractor[i].bias -= learning_rate * gb
    return model


def save_checkpoint(model: ClientModel, path) -> None:
    """JSON checkpoint with exact float round-trip (repr-encoded doubles)."""
    payload = {
        "architecture_id": model.architecture_id,
        "feature_dim": model.feature_dim,
        "extractor": [
            {
                "weights": layer.weights.tolist(),
                "bias": layer.bias.tolist(),
                "activation": layer.activation,
            }
            for layer in model.extractor
        ],
        "classifier": {
            "weights": model.classifier_weights.tolist(),
            "bias": model.classifier_bias.tolist(),
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path) -> ClientModel:
    with open(path) as fh:
        payload = json.load(fh)
    try:
        layers = [
            Layer(
                np.array(entry["weights"], dtype=np.float64),
                np.array(entry["bias"], dtype=np.float64),
                entry["activation"],
            )
            for entry in payload["extractor"]
        ]
        model = ClientModel(
            extractor=layers,
            classifier_weights=np.array(payload["classifier"]["weights"], dtype=np.float64),
            classifier_bias=np.array(payload["classifier"]["bias"], dtype=np.float64),
            feature_dim=int(payload["feature_dim"]),
            architecture_id=int(payload["architecture_id"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ContractError(f"malformed checkpoint {path}: {exc}") from exc
    for layer in model.extractor:
        if layer.activation not in ACTIVATIONS:
            raise ContractError(f"unknown activation {layer.activation!r} in checkpoint")
        if layer.weights.ndim != 2 or layer.bias.shape != (layer.weights.shape[1],):
            raise ContractError(f"inconsistent layer shapes in checkpoint {path}")
    if model.extractor[-1].weights.shape[1] != model.feature_dim:
        raise ContractError("checkpoint feature_dim does not match last layer width")
    return model
