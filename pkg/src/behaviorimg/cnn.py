"""A small NumPy convolutional network with Adam, freezing and checkpoints.

All arithmetic is float64. Network inputs are NCHW ``(n, 1, 32, 32)``;
layers pass channels-last ``(n, h, w, c)`` tensors between each other.
Class order of the two-way softmax is ``[non-malicious, malicious]``.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

CHECKPOINT_MAGIC = b"BIMGCNN\x00"
CHECKPOINT_VERSION = 1


class ShapeMismatch(ValueError):
    pass


class NoForwardCache(RuntimeError):
    pass


class EmptyDataset(ValueError):
    pass


class CheckpointError(ValueError):
    pass


class VersionMismatch(CheckpointError):
    pass


class CorruptFile(CheckpointError):
    pass


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.frozen = False
        self.lr_scale = 1.0
        self._cache = None

    @property
    def trainable(self) -> bool:
        return bool(self.params) and not self.frozen

    def spec(self) -> dict:
        return {"kind": self.kind}

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray, need_input_grad: bool = True) -> np.ndarray | None:
        raise NotImplementedError

    def _take_cache(self):
        if self._cache is None:
            raise NoForwardCache(f"{self.kind}: backward called without a forward pass")
        return self._cache


def _im2col(x: np.ndarray) -> np.ndarray:
    """(n, h, w, c) -> (n*h*w, 9*c) patch rows for a 3x3, pad-1 convolution.

    Column order is (kernel row, kernel col, channel).
    """
    n, h, w, c = x.shape
    xp = np.zeros((n, h + 2, w + 2, c))
    xp[:, 1:-1, 1:-1, :] = x
    cols = np.empty((n, h, w, 9, c))
    for i in range(3):
        for j in range(3):
            cols[:, :, :, 3 * i + j, :] = xp[:, i:i + h, j:j + w, :]
    return cols.reshape(n * h * w, 9 * c)


class Conv2D(Layer):
    """3x3 convolution, stride 1, zero padding 1. Weights stored (out, in, 3, 3)."""

    kind = "conv2d"

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator | None = None):
        super().__init__()
        self.in_channels, self.out_channels = in_channels, out_channels
        fan_in = in_channels * 9
        w = np.zeros((out_channels, in_channels, 3, 3))
        if rng is not None:
            w = rng.standard_normal(w.shape) * np.sqrt(2.0 / fan_in)
        self.params = {"W": w, "b": np.zeros(out_channels)}

    def spec(self):
        return {"kind": self.kind, "in_channels": self.in_channels, "out_channels": self.out_channels}

    def _weight_matrix(self) -> np.ndarray:
        # (out, in, 3, 3) -> (9*in, out) matching _im2col's column order
        return self.params["W"].transpose(2, 3, 1, 0).reshape(9 * self.in_channels, self.out_channels)

    def forward(self, x):
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            raise ShapeMismatch(f"conv2d expects (n, h, w, {self.in_channels}), got {x.shape}")
        n, h, w, _ = x.shape
        cols = _im2col(x)
        self._cache = (cols, x.shape)
        return (cols @ self._weight_matrix() + self.params["b"]).reshape(n, h, w, self.out_channels)

    def backward(self, grad, need_input_grad=True):
        cols, (n, h, w, c) = self._take_cache()
        g = grad.reshape(n * h * w, self.out_channels)
        if not self.frozen:
            dw = (cols.T @ g).reshape(3, 3, c, self.out_channels).transpose(3, 2, 0, 1)
            self.grads = {"W": np.ascontiguousarray(dw), "b": g.sum(axis=0)}
        if not need_input_grad:
            return None
        dcols = (g @ self._weight_matrix().T).reshape(n, h, w, 9, c)
        dxp = np.zeros((n, h + 2, w + 2, c))
        for i in range(3):
            for j in range(3):
                dxp[:, i:i + h, j:j + w, :] += dcols[:, :, :, 3 * i + j, :]
        return dxp[:, 1:-1, 1:-1, :]


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        mask = x > 0
        self._cache = mask
        return x * mask

    def backward(self, grad, need_input_grad=True):
        return grad * self._take_cache()


_POOL_OFFSETS = ((0, 0), (0, 1), (1, 0), (1, 1))


class MaxPool2D(Layer):
    """2x2 max pooling, stride 2. On ties the gradient goes to the first maximum
    in row-major window order."""

    kind = "maxpool2d"

    def forward(self, x):
        n, h, w, c = x.shape
        if h % 2 or w % 2:
            raise ShapeMismatch(f"maxpool2d needs even spatial dims, got {x.shape}")
        parts = [x[:, i::2, j::2, :] for i, j in _POOL_OFFSETS]
        out = np.maximum(np.maximum(parts[0], parts[1]), np.maximum(parts[2], parts[3]))
        taken = np.zeros(out.shape, dtype=bool)
        masks = []
        for part in parts[:3]:
            m = (part == out) & ~taken
            taken |= m
            masks.append(m)
        masks.append(~taken)
        self._cache = (masks, x.shape)
        return out

    def backward(self, grad, need_input_grad=True):
        masks, shape = self._take_cache()
        dx = np.empty(shape)
        for (i, j), m in zip(_POOL_OFFSETS, masks):
            dx[:, i::2, j::2, :] = grad * m
        return dx


class GlobalAveragePool(Layer):
    """(n, h, w, d) -> (n, 1, 1, d), each output the mean of its h*w inputs."""

    kind = "globalavgpool"

    def forward(self, x):
        self._cache = x.shape
        return x.mean(axis=(1, 2), keepdims=True)

    def backward(self, grad, need_input_grad=True):
        n, h, w, c = self._take_cache()
        return np.broadcast_to(grad / (h * w), (n, h, w, c)).copy()


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_units: int, out_units: int, rng: np.random.Generator | None = None):
        super().__init__()
        self.in_units, self.out_units = in_units, out_units
        w = np.zeros((in_units, out_units))
        if rng is not None:
            w = rng.standard_normal(w.shape) * np.sqrt(2.0 / in_units)
        self.params = {"W": w, "b": np.zeros(out_units)}

    def spec(self):
        return {"kind": self.kind, "in_units": self.in_units, "out_units": self.out_units}

    def forward(self, x):
        flat = x.reshape(x.shape[0], -1)
        if flat.shape[1] != self.in_units:
            raise ShapeMismatch(f"dense expects {self.in_units} inputs, got {flat.shape[1]}")
        self._cache = (flat, x.shape)
        return flat @ self.params["W"] + self.params["b"]

    def backward(self, grad, need_input_grad=True):
        flat, shape = self._take_cache()
        if not self.frozen:
            self.grads = {"W": flat.T @ grad, "b": grad.sum(axis=0)}
        if not need_input_grad:
            return None
        return (grad @ self.params["W"].T).reshape(shape)


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x):
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=1, keepdims=True)
        self._cache = p
        return p

    def backward(self, grad, need_input_grad=True):
        p = self._take_cache()
        return p * (grad - (grad * p).sum(axis=1, keepdims=True))


_LAYER_TYPES = {cls.kind: cls for cls in (Conv2D, ReLU, MaxPool2D, GlobalAveragePool, Dense, Softmax)}


def _layer_from_spec(spec: dict) -> Layer:
    kind = spec["kind"]
    if kind == "conv2d":
        return Conv2D(spec["in_channels"], spec["out_channels"])
    if kind == "dense":
        return Dense(spec["in_units"], spec["out_units"])
    if kind not in _LAYER_TYPES:
        raise CheckpointError(f"unknown layer kind {kind!r}")
    return _LAYER_TYPES[kind]()


@dataclass
class AdamState:
    step: int = 0
    m: dict[tuple[int, str], np.ndarray] = field(default_factory=dict)
    v: dict[tuple[int, str], np.ndarray] = field(default_factory=dict)


class Network:
    def __init__(self, layers: Sequence[Layer], seed: int = 0, input_shape=(1, 32, 32)):
        self.layers = list(layers)
        self.seed = seed
        self.input_shape = tuple(input_shape)
        self.adam = AdamState()

    # -- structure ---------------------------------------------------------
    def param_layers(self) -> list[int]:
        return [i for i, layer in enumerate(self.layers) if layer.params]

    @property
    def head_index(self) -> int:
        return self.param_layers()[-1]

    def parameter_count(self) -> int:
        return sum(p.size for layer in self.layers for p in layer.params.values())

    def parameters(self) -> dict[tuple[int, str], np.ndarray]:
        return {(i, k): p for i, layer in enumerate(self.layers) for k, p in layer.params.items()}

    def gradients(self) -> dict[tuple[int, str], np.ndarray]:
        return {
            (i, k): g
            for i, layer in enumerate(self.layers)
            if layer.trainable
            for k, g in layer.grads.items()
        }

    # -- passes ------------------------------------------------------------
    def _to_channels_last(self, batch: np.ndarray) -> np.ndarray:
        x = np.asarray(batch, dtype=np.float64)
        if x.ndim != 4 or x.shape[1:] != self.input_shape:
            raise ShapeMismatch(f"expected batch of shape (n, {', '.join(map(str, self.input_shape))}), got {x.shape}")
        return np.ascontiguousarray(x.transpose(0, 2, 3, 1))

    def forward(self, batch: np.ndarray) -> np.ndarray:
        """(n, 1, 32, 32) batch -> (n, 2) class probabilities."""
        x = self._to_channels_last(batch)
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def logits(self, batch: np.ndarray) -> np.ndarray:
        x = self._to_channels_last(batch)
        for layer in self.layers[:-1]:
            x = layer.forward(x)
        return x

    def backward(self, grad_logits: np.ndarray) -> dict[tuple[int, str], np.ndarray]:
        """Backpropagate the loss gradient taken w.r.t. the pre-softmax logits.

        Frozen layers still pass gradients downward; propagation stops once no
        trainable layer remains below.
        """
        for layer in self.layers:
            layer.grads = {}
            if layer._cache is None and layer is not self.layers[-1]:
                raise NoForwardCache("backward called before forward")
        trainable_below = [False] * len(self.layers)
        seen = False
        for i, layer in enumerate(self.layers):
            trainable_below[i] = seen
            seen = seen or layer.trainable
        g = grad_logits
        body = self.layers[:-1] if isinstance(self.layers[-1], Softmax) else self.layers
        for i in range(len(body) - 1, -1, -1):
            layer = body[i]
            need = trainable_below[i]
            if not layer.trainable and not need:
                break
            g = layer.backward(g, need_input_grad=need)
            if not need:
                break
        return self.gradients()

    def clear_cache(self) -> None:
        for layer in self.layers:
            layer._cache = None


def build_default_network(seed: int = 0) -> Network:
    rng = np.random.default_rng(seed)
    layers = [
        Conv2D(1, 16, rng), ReLU(), MaxPool2D(),
        Conv2D(16, 32, rng), ReLU(), MaxPool2D(),
        GlobalAveragePool(),
        Dense(32, 2, rng),
        Softmax(),
    ]
    return Network(layers, seed=seed)


def reset_head(net: Network, seed: int) -> None:
    """Replace the dense head's weights with a fresh seeded draw and clear its Adam moments."""
    idx = net.head_index
    old = net.layers[idx]
    fresh = Dense(old.in_units, old.out_units, np.random.default_rng(seed))
    fresh.frozen, fresh.lr_scale = old.frozen, old.lr_scale
    net.layers[idx] = fresh
    for key in [k for k in net.adam.m if k[0] == idx]:
        del net.adam.m[key], net.adam.v[key]


# ---------------------------------------------------------------------------
# loss and optimizer

def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean two-class cross-entropy and its gradient w.r.t. the softmax logits."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.ndim == 2:
        onehot = labels.astype(np.float64)
    else:
        onehot = np.zeros_like(probs)
        onehot[np.arange(len(labels)), labels.astype(int)] = 1.0
    n = probs.shape[0]
    clipped = np.clip(probs, 1e-12, 1 - 1e-12)
    loss = float(-(onehot * np.log(clipped)).sum() / n)
    return loss, (probs - onehot) / n


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 64
    epochs: int = 20
    seed: int = 0
    freeze_mode: str = "full"  # full | feature-extraction | fine-tune
    fine_tune_layers: int = 1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1 and beta2 must lie in [0, 1)")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.freeze_mode not in ("full", "feature-extraction", "fine-tune"):
            raise ValueError(f"unknown freeze_mode {self.freeze_mode!r}")


def adam_step(net: Network, grads: dict[tuple[int, str], np.ndarray], config: TrainConfig) -> Network:
    state = net.adam
    state.step += 1
    t = state.step
    b1, b2 = config.beta1, config.beta2
    for key, g in grads.items():
        layer = net.layers[key[0]]
        if layer.frozen:
            continue
        param = layer.params[key[1]]
        if g.shape != param.shape:
            raise ShapeMismatch(f"gradient {key} has shape {g.shape}, parameter {param.shape}")
        m = state.m.get(key)
        if m is None:
            m = state.m[key] = np.zeros_like(param)
            state.v[key] = np.zeros_like(param)
        v = state.v[key]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        param -= config.learning_rate * layer.lr_scale * m_hat / (np.sqrt(v_hat) + config.epsilon)
    return net


def apply_freeze_mode(net: Network, config: TrainConfig) -> None:
    """Set per-layer freeze flags and learning-rate scales for a training mode.

    ``feature-extraction`` trains only the dense head; ``fine-tune`` also
    reopens the top ``fine_tune_layers`` parameterised extractor layers at a
    tenth of the learning rate; ``full`` trains everything at full rate.
    """
    head = net.head_index
    extractor = [i for i in net.param_layers() if i != head]
    reopened = set(extractor[len(extractor) - config.fine_tune_layers:]) if config.fine_tune_layers > 0 else set()
    for i in net.param_layers():
        layer = net.layers[i]
        layer.lr_scale = 1.0
        if config.freeze_mode == "full" or i == head:
            layer.frozen = False
        elif config.freeze_mode == "feature-extraction":
            layer.frozen = True
        else:
            layer.frozen = i not in reopened
            if i in reopened:
                layer.lr_scale = 0.1


@dataclass
class EpochStats:
    epoch: int
    loss: float
    train_accuracy: float


def train(
    net: Network,
    images: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig = TrainConfig(),
    on_epoch: Callable[[EpochStats], None] | None = None,
) -> tuple[Network, list[EpochStats]]:
    """Mini-batch Adam training on (n, 1, 32, 32) inputs scaled to [0, 1]."""
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    if len(images) == 0:
        raise EmptyDataset("training set is empty")
    if len(images) != len(labels):
        raise ShapeMismatch(f"{len(images)} images but {len(labels)} labels")
    apply_freeze_mode(net, config)
    rng = np.random.default_rng(config.seed)
    history = []
    n = len(images)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total_loss = 0.0
        correct = 0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            probs = net.forward(images[idx])
            loss, grad = cross_entropy(probs, labels[idx])
            grads = net.backward(grad)
            adam_step(net, grads, config)
            total_loss += loss * len(idx)
            correct += int((predict_labels(probs) == labels[idx]).sum())
        stats = EpochStats(epoch, total_loss / n, correct / n)
        history.append(stats)
        if on_epoch is not None:
            on_epoch(stats)
    net.clear_cache()
    return net, history


def predict_labels(probs: np.ndarray) -> np.ndarray:
    """Argmax over [non-malicious, malicious]; ties go to non-malicious."""
    return (probs[:, 1] > probs[:, 0]).astype(np.int64)


def predict(net: Network, images: np.ndarray, batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    images = np.asarray(images, dtype=np.float64)
    if images.ndim != 4 or images.shape[1:] != net.input_shape:
        raise ShapeMismatch(f"expected images of shape (n, {', '.join(map(str, net.input_shape))}), got {images.shape}")
    chunks = [net.forward(images[s:s + batch_size]) for s in range(0, len(images), batch_size)]
    net.clear_cache()
    probs = np.concatenate(chunks) if chunks else np.zeros((0, 2))
    return predict_labels(probs), probs


def write_train_log(history: Sequence[EpochStats], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss,train_accuracy\n")
        for s in history:
            fh.write(f"{s.epoch},{s.loss!r},{s.train_accuracy!r}\n")


# ---------------------------------------------------------------------------
# checkpoint: magic | u32 version | u32 header length | JSON header
#             | little-endian float64 arrays | sha256 of everything before it

def save_checkpoint(net: Network, path: str | Path) -> Path:
    arrays: list[np.ndarray] = []
    tensors = []
    for i, layer in enumerate(net.layers):
        for name, p in layer.params.items():
            tensors.append({"layer": i, "name": name, "role": "param", "shape": list(p.shape)})
            arrays.append(p)
    for role, table in (("adam_m", net.adam.m), ("adam_v", net.adam.v)):
        for (i, name) in sorted(table):
            arr = table[(i, name)]
            tensors.append({"layer": i, "name": name, "role": role, "shape": list(arr.shape)})
            arrays.append(arr)
    header = {
        "seed": net.seed,
        "input_shape": list(net.input_shape),
        "adam_step": net.adam.step,
        "layers": [
            {**layer.spec(), "frozen": layer.frozen, "lr_scale": layer.lr_scale}
            for layer in net.layers
        ],
        "tensors": tensors,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    body = bytearray(CHECKPOINT_MAGIC)
    body += struct.pack("<II", CHECKPOINT_VERSION, len(header_bytes))
    body += header_bytes
    for arr in arrays:
        body += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    body += hashlib.sha256(body).digest()
    path = Path(path)
    path.write_bytes(bytes(body))
    return path


def load_checkpoint(path: str | Path) -> Network:
    blob = Path(path).read_bytes()
    if len(blob) < len(CHECKPOINT_MAGIC) + 8 + 32 or not blob.startswith(CHECKPOINT_MAGIC):
        raise CorruptFile(f"{path}: not a network checkpoint")
    body, digest = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CorruptFile(f"{path}: checksum mismatch")
    pos = len(CHECKPOINT_MAGIC)
    version, header_len = struct.unpack_from("<II", body, pos)
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    pos += 8
    header = json.loads(body[pos:pos + header_len])
    pos += header_len
    layers = []
    for spec in header["layers"]:
        layer = _layer_from_spec(spec)
        layer.frozen = spec["frozen"]
        layer.lr_scale = spec["lr_scale"]
        layers.append(layer)
    net = Network(layers, seed=header["seed"], input_shape=header["input_shape"])
    net.adam.step = header["adam_step"]
    for t in header["tensors"]:
        count = int(np.prod(t["shape"], dtype=np.int64))
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=pos).reshape(t["shape"]).astype(np.float64)
        pos += count * 8
        key = (t["layer"], t["name"])
        if t["role"] == "param":
            net.layers[t["layer"]].params[t["name"]] = arr
        elif t["role"] == "adam_m":
            net.adam.m[key] = arr
        else:
            net.adam.v[key] = arr
    if pos != len(body):
        raise CorruptFile(f"{path}: trailing bytes after tensors")
    return net


def config_dict(config: TrainConfig) -> dict:
    return asdict(config)
