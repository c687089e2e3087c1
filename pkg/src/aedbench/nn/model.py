"""Sequential model container: loss, input gradients, checkpoint format.

Multi-label binary cross-entropy is evaluated from the pre-sigmoid logits
(log(1 + e^z) - y*z per class, averaged), which stays finite even when a
score saturates; the returned scores themselves come from the sigmoid head.

Checkpoint layout: b"APNN", u32 version, u32 header length, a canonical JSON
header (layer graph description, metadata, parameter manifest), then each
parameter as raw little-endian float64 in manifest order.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .layers import GradientStore, Layer, Parameter, Sigmoid, build_layer, sigmoid

__all__ = ["Model", "CheckpointError", "save_model", "load_model", "grad_check"]

CHECKPOINT_MAGIC = b"APNN"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Checkpoint bytes are malformed or inconsistent with their manifest."""


def _collect_named_params(layers) -> list[tuple[str, Parameter]]:
    named: list[tuple[str, Parameter]] = []

    def walk(layer: Layer, prefix: str) -> None:
        for name, param in layer.local_params():
            named.append((f"{prefix}.{name}", param))
        for name, child in layer.children():
            walk(child, f"{prefix}.{name}")

    for i, layer in enumerate(layers):
        walk(layer, f"l{i:02d}")
    seen = set()
    for name, _ in named:
        if name in seen:
            raise ValueError(f"duplicate parameter name {name!r}")
        seen.add(name)
    return named


class Model:
    """A stack of layers ending in the sigmoid score head."""

    def __init__(self, layers, n_classes: int, meta: dict | None = None):
        layers = list(layers)
        if not layers or not isinstance(layers[-1], Sigmoid):
            raise ValueError("the last layer must be the sigmoid score head")
        self.layers = layers
        self.n_classes = int(n_classes)
        self.meta = dict(meta or {})
        self._named_params = _collect_named_params(layers)

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self._named_params]

    def named_parameters(self) -> list[tuple[str, Parameter]]:
        return list(self._named_params)

    def n_parameters(self) -> int:
        return sum(p.value.size for p in self.parameters())

    def _check_labels(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=np.float64)
        if y.shape != (self.n_classes,):
            raise ValueError(f"labels must have shape ({self.n_classes},), got {y.shape}")
        if not np.isin(y, (0.0, 1.0)).all():
            raise ValueError("labels must be binary")
        return y

    def forward(self, x) -> np.ndarray:
        """Per-class scores in (0, 1)."""
        y = np.asarray(x, dtype=np.float64)
        for layer in self.layers:
            y, _ = layer.forward(y)
        if y.shape != (self.n_classes,):
            raise ValueError(f"head produced shape {y.shape}, expected ({self.n_classes},)")
        return y

    def _logits_and_caches(self, x):
        y = np.asarray(x, dtype=np.float64)
        caches = []
        for layer in self.layers[:-1]:
            y, cache = layer.forward(y)
            caches.append(cache)
        if y.shape != (self.n_classes,):
            raise ValueError(f"head produced shape {y.shape}, expected ({self.n_classes},)")
        return y, caches

    def loss_value(self, x, y) -> float:
        y = self._check_labels(y)
        logits, _ = self._logits_and_caches(x)
        return float(np.mean(np.logaddexp(0.0, logits) - y * logits))

    def loss_and_gradients(self, x, y, grads: GradientStore | None = None):
        """Mean BCE plus its exact gradients w.r.t. the input and parameters.

        Pass grads=None to skip parameter gradients (cheaper for attacks);
        pass a shared store to accumulate a batch.
        """
        y = self._check_labels(y)
        logits, caches = self._logits_and_caches(x)
        loss = float(np.mean(np.logaddexp(0.0, logits) - y * logits))
        dy = (sigmoid(logits) - y) / self.n_classes
        for layer, cache in zip(reversed(self.layers[:-1]), reversed(caches)):
            dy = layer.backward(cache, dy, grads)
        return loss, dy, grads

    def loss_and_input_gradient(self, x, y):
        loss, dx, _ = self.loss_and_gradients(x, y, grads=None)
        return loss, dx

    def describe_layers(self) -> list[dict]:
        return [layer.describe() for layer in self.layers]


def grad_check(model: Model, x, y, h: float = 1e-5, n_coords: int = 120, seed: int = 0) -> float:
    """Max relative error of the analytic input gradient vs central differences.

    Samples n_coords input coordinates (at least 100 recommended); relative
    error uses |a - n| / max(1e-12, |a| + |n|).
    """
    if h <= 0:
        raise ValueError(f"step must be positive, got {h}")
    x = np.asarray(x, dtype=np.float64)
    _, dx = model.loss_and_input_gradient(x, y)
    rng = np.random.default_rng(seed)
    count = min(n_coords, x.size)
    coords = rng.choice(x.size, size=count, replace=False)
    worst = 0.0
    flat = x.reshape(-1)
    for c in coords:
        orig = flat[c]
        flat[c] = orig + h
        hi = model.loss_value(x, y)
        flat[c] = orig - h
        lo = model.loss_value(x, y)
        flat[c] = orig
        numeric = (hi - lo) / (2.0 * h)
        analytic = dx.reshape(-1)[c]
        rel = abs(analytic - numeric) / max(1e-12, abs(analytic) + abs(numeric))
        worst = max(worst, rel)
    return worst


def save_model(model: Model, path) -> None:
    """Write the byte-stable checkpoint (see module docstring)."""
    header = {
        "n_classes": model.n_classes,
        "meta": model.meta,
        "layers": model.describe_layers(),
        "params": [
            {"name": name, "shape": list(p.value.shape)}
            for name, p in model.named_parameters()
        ],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        f.write(blob)
        for _, p in model.named_parameters():
            f.write(p.value.astype("<f8").tobytes())


def load_model(path) -> Model:
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad checkpoint magic")
    version, header_len = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    if len(data) < 12 + header_len:
        raise CheckpointError("truncated checkpoint header")
    try:
        header = json.loads(data[12 : 12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from exc

    layers = [build_layer(desc) for desc in header["layers"]]
    model = Model(layers, header["n_classes"], meta=header.get("meta"))

    manifest = header["params"]
    named = model.named_parameters()
    if [m["name"] for m in manifest] != [n for n, _ in named]:
        raise CheckpointError("parameter manifest does not match the layer graph")
    pos = 12 + header_len
    for entry, (_, param) in zip(manifest, named):
        shape = tuple(entry["shape"])
        if shape != param.value.shape:
            raise CheckpointError(
                f"parameter {entry['name']!r} shape {shape} != expected {param.value.shape}"
            )
        nbytes = int(np.prod(shape)) * 8 if shape else 8
        chunk = data[pos : pos + nbytes]
        if len(chunk) < nbytes:
            raise CheckpointError(f"truncated data for parameter {entry['name']!r}")
        param.value = np.frombuffer(chunk, dtype="<f8").reshape(shape).astype(np.float64)
        pos += nbytes
    if pos != len(data):
        raise CheckpointError("trailing bytes after the last parameter")
    return model
