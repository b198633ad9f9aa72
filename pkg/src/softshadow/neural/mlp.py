"""Dense ReLU network with a sigmoid output, written out by hand.

Layout for filter size ``s`` and ``h`` hidden layers::

    encoded (64) -> s -> [s -> s] * h -> 1 -> sigmoid

ReLU follows every layer except the last. Weights are stored as
``(fan_in, fan_out)`` so a batch goes through as ``x @ w + b``.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .encoding import EncodingConfig

FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


def param_count(s: int, h: int, input_size: int = 64) -> int:
    if s < 1 or h < 1:
        raise ValueError("s and h must be >= 1")
    return (input_size * s + s) + h * (s * s + s) + (s + 1)


def layer_shapes(input_size: int, s: int, h: int) -> list[tuple[int, int]]:
    return [(input_size, s)] + [(s, s)] * h + [(s, 1)]


@dataclass
class MlpModel:
    encoding: EncodingConfig
    s: int
    h: int
    weights: list[np.ndarray] = field(repr=False)
    biases: list[np.ndarray] = field(repr=False)

    def __post_init__(self):
        shapes = layer_shapes(self.encoding.size, self.s, self.h)
        if len(self.weights) != len(shapes) or len(self.biases) != len(shapes):
            raise ModelFormatError(f"expected {len(shapes)} layers, got {len(self.weights)}")
        for k, (shape, w, b) in enumerate(zip(shapes, self.weights, self.biases)):
            if w.shape != shape or b.shape != (shape[1],):
                raise ModelFormatError(f"layer {k}: expected w{shape}, got w{w.shape} b{b.shape}")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ModelFormatError(f"layer {k}: non-finite parameters")

    @classmethod
    def init(cls, s: int, h: int, encoding: EncodingConfig = EncodingConfig(), seed: int = 0) -> "MlpModel":
        """Glorot-uniform weights, zero biases."""
        rng = np.random.default_rng(seed)
        weights, biases = [], []
        for fan_in, fan_out in layer_shapes(encoding.size, s, h):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-lim, lim, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(encoding, s, h, weights, biases)

    @property
    def params(self) -> list[np.ndarray]:
        """Parameter arrays in layer order (w0, b0, w1, b1, ...), shared with the model."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def copy(self) -> "MlpModel":
        return MlpModel(self.encoding, self.s, self.h,
                        [w.copy() for w in self.weights], [b.copy() for b in self.biases])


def sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def forward(model: MlpModel, x: np.ndarray) -> np.ndarray:
    """Network output for a batch ``(n, input)`` or a single vector."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    if xb.shape[1] != model.encoding.size:
        raise ValueError(f"input has {xb.shape[1]} features, model expects {model.encoding.size}")
    a = xb
    last = len(model.weights) - 1
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        a = z if k == last else np.maximum(z, 0.0)
    out = sigmoid(a[:, 0])
    return float(out[0]) if single else out


def mlp_forward(model: MlpModel, encoded) -> float:
    return forward(model, np.asarray(encoded, dtype=np.float64).reshape(-1))


def loss_and_grad(model: MlpModel, x: np.ndarray, y: np.ndarray):
    """Mean squared error of the batch and its gradient for every parameter.

    Returns ``(loss, grads, v_est)``; ``grads`` lines up with ``model.params``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    n = len(y)
    if n == 0 or x.shape[0] != n:
        raise ValueError("batch must be nonempty and x, y must agree in length")

    acts = [x]
    pre = []
    last = len(model.weights) - 1
    a = x
    for k, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = a @ w + b
        pre.append(z)
        a = z if k == last else np.maximum(z, 0.0)
        acts.append(a)
    v = sigmoid(pre[-1][:, 0])
    r = v - y
    loss = float(np.mean(r * r))

    delta = (2.0 / n) * r * v * (1.0 - v)
    delta = delta[:, None]
    grads: list[np.ndarray] = [None] * (2 * len(model.weights))  # type: ignore[list-item]
    for k in range(last, -1, -1):
        grads[2 * k] = acts[k].T @ delta
        grads[2 * k + 1] = delta.sum(axis=0)
        if k > 0:
            delta = (delta @ model.weights[k].T) * (pre[k - 1] > 0.0)
    return loss, grads, v


# --------------------------------------------------------------------------
# Serialization


def model_to_dict(model: MlpModel) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "s": model.s,
        "h": model.h,
        "l_pos": model.encoding.l_pos,
        "l_dir": model.encoding.l_dir,
        "layers": [{"w": w.tolist(), "b": b.tolist()} for w, b in zip(model.weights, model.biases)],
    }


def model_from_dict(doc: dict) -> MlpModel:
    try:
        version = doc["format_version"]
        if version != FORMAT_VERSION:
            raise ModelFormatError(f"unsupported model format_version {version!r}")
        enc = EncodingConfig(int(doc["l_pos"]), int(doc["l_dir"]))
        s, h = int(doc["s"]), int(doc["h"])
        layers = doc["layers"]
        weights = [np.array(layer["w"], dtype=np.float64) for layer in layers]
        biases = [np.array(layer["b"], dtype=np.float64) for layer in layers]
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed model document: {exc}") from exc
    return MlpModel(enc, s, h, weights, biases)


def save_model(model: MlpModel, path) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    try:
        tmp.write_text(json.dumps(model_to_dict(model)))
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def load_model(path) -> MlpModel:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: not valid JSON ({exc})") from exc
    return model_from_dict(doc)
