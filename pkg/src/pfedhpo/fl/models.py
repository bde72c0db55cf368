"""Softmax classifiers with hand-derived gradients.

Two model kinds share one code path: ``logistic_regression`` is a single
affine layer, ``feedforward`` stacks tanh hidden layers before it. Parameter
slots are named ``W0, b0, ..., WL, bL`` with ``WL, bL`` the output layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from pfedhpo.datasets import DataSet
from pfedhpo.params import ParamVector, make_layout
from pfedhpo.seeding import derive_rng

LOGISTIC = "logistic_regression"
FEEDFORWARD = "feedforward"


class DivergenceError(ArithmeticError):
    """Raised when training produces a non-finite loss or parameters."""


@dataclass(frozen=True)
class ModelSpec:
    kind: str
    num_features: int
    num_classes: int
    hidden: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.kind not in (LOGISTIC, FEEDFORWARD):
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.kind == LOGISTIC and self.hidden:
            raise ValueError("logistic regression takes no hidden layers")
        if self.kind == FEEDFORWARD and not self.hidden:
            raise ValueError("feedforward model needs at least one hidden layer")
        if self.num_features < 1 or self.num_classes < 1 or any(h < 1 for h in self.hidden):
            raise ValueError("model dimensions must be positive")

    @property
    def widths(self) -> list[int]:
        return [self.num_features, *self.hidden, self.num_classes]

    @property
    def num_layers(self) -> int:
        return len(self.widths) - 1

    @property
    def model_id(self) -> str:
        if self.kind == LOGISTIC:
            return f"{LOGISTIC}({self.num_features},{self.num_classes})"
        dims = ",".join(str(w) for w in self.widths)
        return f"{FEEDFORWARD}({dims})"

    def layout(self):
        shapes = []
        for i, (fan_in, fan_out) in enumerate(zip(self.widths, self.widths[1:])):
            shapes.append((f"W{i}", (fan_in, fan_out)))
            shapes.append((f"b{i}", (fan_out,)))
        return make_layout(shapes)

    @property
    def num_params(self) -> int:
        return sum(s.size for s in self.layout())

    def to_dict(self) -> dict:
        return {"kind": self.kind, "num_features": self.num_features,
                "num_classes": self.num_classes, "hidden": list(self.hidden)}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(d["kind"], int(d["num_features"]), int(d["num_classes"]), tuple(d.get("hidden", ())))


def glorot_init(layout, rng: np.random.Generator, weight_prefix: str = "W") -> np.ndarray:
    """Weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.

    Slots whose name starts with ``weight_prefix`` are weight matrices; all
    other slots are left at zero.
    """
    values = np.zeros(sum(s.size for s in layout))
    for slot in layout:
        if slot.name.startswith(weight_prefix):
            fan_in, fan_out = slot.shape
            r = math.sqrt(6.0 / (fan_in + fan_out))
            values[slot.offset:slot.offset + slot.size] = rng.uniform(-r, r, slot.size)
    return values


def model_init(spec: ModelSpec, seed: int) -> ParamVector:
    layout = spec.layout()
    return ParamVector(glorot_init(layout, derive_rng(seed, "model-init")), layout)


def _unpack(spec: ModelSpec, w: ParamVector) -> list[tuple[np.ndarray, np.ndarray]]:
    return [(w[f"W{i}"], w[f"b{i}"]) for i in range(spec.num_layers)]


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def logits(spec: ModelSpec, w: ParamVector, x: np.ndarray) -> np.ndarray:
    h = x
    layers = _unpack(spec, w)
    for W, b in layers[:-1]:
        h = np.tanh(h @ W + b)
    W, b = layers[-1]
    return h @ W + b


def metrics(spec: ModelSpec, w: ParamVector, data: DataSet) -> tuple[float, float]:
    """Mean cross-entropy (no regularization) and accuracy, dropout-free."""
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    out = logits(spec, w, data.features)
    logp = log_softmax(out)
    loss = float(-logp[np.arange(len(data)), data.labels].mean())
    acc = float(np.mean(out.argmax(axis=1) == data.labels))
    return loss, acc


def loss_and_grad(
    spec: ModelSpec,
    w: ParamVector,
    batch: DataSet,
    weight_decay: float = 0.0,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
) -> tuple[float, ParamVector]:
    """Mean cross-entropy + (weight_decay / 2) * ||weights||^2 and its exact gradient.

    Biases are not decayed. Dropout (inverted scaling) acts on hidden
    activations only, so it is a no-op for logistic regression.
    """
    n = len(batch)
    if n == 0:
        raise ValueError("empty batch")
    layers = _unpack(spec, w)
    use_dropout = dropout > 0.0 and spec.kind == FEEDFORWARD
    if use_dropout and rng is None:
        raise ValueError("dropout requires an rng")

    acts = [batch.features]
    tanhs, masks = [], []
    h = batch.features
    for W, b in layers[:-1]:
        t = np.tanh(h @ W + b)
        tanhs.append(t)
        if use_dropout:
            m = (rng.random(t.shape) >= dropout) / (1.0 - dropout)
            h = t * m
        else:
            m = None
            h = t
        masks.append(m)
        acts.append(h)
    W_out, b_out = layers[-1]
    out = h @ W_out + b_out
    logp = log_softmax(out)
    rows = np.arange(n)
    loss = -logp[rows, batch.labels].mean()
    if weight_decay:
        loss += 0.5 * weight_decay * sum(float(np.sum(W * W)) for W, _ in layers)
    loss = float(loss)
    if not math.isfinite(loss):
        raise DivergenceError(f"non-finite loss {loss}")

    delta = np.exp(logp)
    delta[rows, batch.labels] -= 1.0
    delta /= n
    grads: list[np.ndarray] = [None] * (2 * spec.num_layers)
    for i in range(spec.num_layers - 1, -1, -1):
        W, _ = layers[i]
        gW = acts[i].T @ delta
        if weight_decay:
            gW = gW + weight_decay * W
        grads[2 * i] = gW
        grads[2 * i + 1] = delta.sum(axis=0)
        if i > 0:
            d_h = delta @ W.T
            if masks[i - 1] is not None:
                d_h = d_h * masks[i - 1]
            delta = d_h * (1.0 - tanhs[i - 1] ** 2)
    flat = np.concatenate([g.ravel() for g in grads])
    return loss, w.replace_values(flat)
