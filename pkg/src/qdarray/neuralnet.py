"""Minimal neural-network engine: layers, losses, Adam, weight files.

Just enough machinery to train the three estimator networks — dense and
5x5 same-padded convolution layers, 2x2 max pooling, ReLU, inverted
dropout, and a softmax head — with MSE or soft-target cross-entropy and
an Adam loop.  Everything runs in float64 numpy, which keeps the
gradients checkable against central differences and the results
reproducible bit-for-bit for a fixed seed.

Weight files embed the network description, the input transform, and a
SHA-256 digest, so inference needs no side channel and silent corruption
is caught at load time.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DataFormatError, TrainingDivergedError, ValidationError

WEIGHTS_MAGIC = b"QDNW"
WEIGHTS_VERSION = 1

STATE_ORDER = ("SC", "Barrier", "SD", "DD")


# ---------------------------------------------------------------------------
# network description

@dataclass(frozen=True)
class Layer:
    """One layer descriptor; unused fields stay None."""

    kind: str                  # dense | conv | maxpool | relu | dropout | softmax
    width: int | None = None
    features: int | None = None
    kernel: int | None = None
    rate: float | None = None


def dense(width: int) -> Layer:
    return Layer(kind="dense", width=width)


def conv(features: int, kernel: int = 5) -> Layer:
    return Layer(kind="conv", features=features, kernel=kernel)


def maxpool() -> Layer:
    return Layer(kind="maxpool")


def relu() -> Layer:
    return Layer(kind="relu")


def dropout(rate: float) -> Layer:
    return Layer(kind="dropout", rate=rate)


def softmax() -> Layer:
    return Layer(kind="softmax")


def _chain_shapes(input_shape, layers):
    """Propagate the input shape through the layer list; validates as it goes."""
    shapes = []
    shape = tuple(int(s) for s in input_shape)
    if not shape or any(s < 1 for s in shape):
        raise ValidationError(f"bad input shape {shape}")
    if len(shape) == 2:
        shape = shape + (1,)       # 2-D input means a single-channel image
    for i, layer in enumerate(layers):
        where = f"layer {i} ({layer.kind})"
        if layer.kind == "dense":
            if layer.width is None or layer.width < 1:
                raise ValidationError(f"{where}: width must be >= 1")
            shape = (layer.width,)
        elif layer.kind == "conv":
            if layer.features is None or layer.features < 1:
                raise ValidationError(f"{where}: features must be >= 1")
            if layer.kernel is None or layer.kernel < 1 or layer.kernel % 2 == 0:
                raise ValidationError(f"{where}: kernel must be odd and positive")
            if len(shape) != 3:
                raise ValidationError(f"{where}: needs a 2-D image, has {shape}")
            shape = (shape[0], shape[1], layer.features)
        elif layer.kind == "maxpool":
            if len(shape) != 3:
                raise ValidationError(f"{where}: needs a 2-D image, has {shape}")
            if shape[0] < 2 or shape[1] < 2:
                raise ValidationError(f"{where}: image {shape} too small to pool")
            shape = (shape[0] // 2, shape[1] // 2, shape[2])
        elif layer.kind == "dropout":
            if layer.rate is None or not 0.0 <= layer.rate < 1.0:
                raise ValidationError(f"{where}: rate must be in [0, 1)")
        elif layer.kind in ("relu", "softmax"):
            pass
        else:
            raise ValidationError(f"{where}: unknown layer kind")
        shapes.append(shape)
    return tuple(shapes)


@dataclass(frozen=True)
class NetworkSpec:
    """Ordered layers plus the input shape; output shape is derived."""

    input_shape: tuple[int, ...]
    layers: tuple[Layer, ...]

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(self.input_shape))
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "shapes", _chain_shapes(self.input_shape,
                                                         self.layers))

    @property
    def output_shape(self) -> tuple[int, ...]:
        return self.shapes[-1] if self.layers else self.input_shape

    def to_dict(self) -> dict:
        return {"input_shape": list(self.input_shape),
                "layers": [{k: v for k, v in vars(l).items() if v is not None}
                           for l in self.layers]}

    @staticmethod
    def from_dict(data: dict) -> "NetworkSpec":
        layers = tuple(Layer(**d) for d in data["layers"])
        return NetworkSpec(input_shape=tuple(data["input_shape"]), layers=layers)


# ---------------------------------------------------------------------------
# weights

@dataclass(eq=False)
class Weights:
    """Per-layer parameter tensors plus provenance."""

    spec: NetworkSpec
    tensors: dict[int, dict[str, np.ndarray]]
    seed: int
    transform: str = "none"    # input transform expected at inference

    def copy(self) -> "Weights":
        return Weights(spec=self.spec,
                       tensors={i: {k: v.copy() for k, v in t.items()}
                                for i, t in self.tensors.items()},
                       seed=self.seed, transform=self.transform)


def _param_shapes(spec: NetworkSpec):
    """(layer index, name) -> tensor shape for every trainable tensor."""
    out = {}
    shape = spec.input_shape
    for i, layer in enumerate(spec.layers):
        if layer.kind == "dense":
            fan_in = int(np.prod(shape))
            out[(i, "w")] = (fan_in, layer.width)
            out[(i, "b")] = (layer.width,)
        elif layer.kind == "conv":
            c_in = shape[2] if len(shape) == 3 else 1
            out[(i, "w")] = (layer.kernel, layer.kernel, c_in, layer.features)
            out[(i, "b")] = (layer.features,)
        shape = spec.shapes[i]
    return out


def init_weights(spec: NetworkSpec, seed: int, transform: str = "none") -> Weights:
    """Scaled-uniform fan-in initialization, U(-1/sqrt(fan_in), +1/sqrt(fan_in))."""
    rng = np.random.default_rng(seed)
    shapes = _param_shapes(spec)
    tensors: dict[int, dict[str, np.ndarray]] = {}
    for (i, name), shape in shapes.items():
        fan_in = int(np.prod(shapes[(i, "w")][:-1]))
        bound = 1.0 / np.sqrt(fan_in)
        tensors.setdefault(i, {})[name] = rng.uniform(-bound, bound, size=shape)
    return Weights(spec=spec, tensors=tensors, seed=seed, transform=transform)


def _check_weights(spec: NetworkSpec, weights: Weights) -> None:
    expected = _param_shapes(spec)
    for (i, name), shape in expected.items():
        try:
            tensor = weights.tensors[i][name]
        except KeyError:
            raise ValidationError(
                f"layer {i} ({spec.layers[i].kind}): missing tensor {name!r}")
        if tensor.shape != shape:
            raise ValidationError(
                f"layer {i} ({spec.layers[i].kind}): tensor {name!r} has shape "
                f"{tensor.shape}, spec wants {shape}")


# ---------------------------------------------------------------------------
# forward / backward

def _conv_forward(x, w):
    # x (N,H,W,C), w (k,k,C,F), stride 1, same padding
    k = w.shape[0]
    p = k // 2
    n, h, wd, _ = x.shape
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    out = np.zeros((n, h, wd, w.shape[3]))
    for di in range(k):
        for dj in range(k):
            out += xp[:, di:di + h, dj:dj + wd, :] @ w[di, dj]
    return out


def _conv_backward(grad, x, w):
    k = w.shape[0]
    p = k // 2
    n, h, wd, _ = x.shape
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    gw = np.zeros_like(w)
    gxp = np.zeros_like(xp)
    for di in range(k):
        for dj in range(k):
            patch = xp[:, di:di + h, dj:dj + wd, :]
            gw[di, dj] = np.einsum("nijc,nijf->cf", patch, grad)
            gxp[:, di:di + h, dj:dj + wd, :] += grad @ w[di, dj].T
    gx = gxp[:, p:p + h, p:p + wd, :]
    gb = grad.sum(axis=(0, 1, 2))
    return gx, gw, gb


def _pool_forward(x):
    n, h, w, c = x.shape
    ho, wo = h // 2, w // 2
    blocks = x[:, :2 * ho, :2 * wo, :].reshape(n, ho, 2, wo, 2, c)
    blocks = blocks.transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, 4)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _pool_backward(grad, x_shape, idx):
    n, h, w, c = x_shape
    ho, wo = h // 2, w // 2
    gb = np.zeros((n, ho, wo, c, 4))
    np.put_along_axis(gb, idx[..., None], grad[..., None], axis=-1)
    gb = gb.reshape(n, ho, wo, c, 2, 2).transpose(0, 1, 4, 2, 5, 3)
    gx = np.zeros(x_shape)
    gx[:, :2 * ho, :2 * wo, :] = gb.reshape(n, 2 * ho, 2 * wo, c)
    return gx


def _run(spec, weights, x, training, rng, keep_cache):
    """Shared forward pass; caches per-layer intermediates for backprop."""
    n = x.shape[0]
    if tuple(x.shape[1:]) != spec.input_shape:
        raise ValidationError(f"input shape {tuple(x.shape[1:])} does not match "
                              f"network input {spec.input_shape}")
    caches = []
    cur = np.asarray(x, dtype=np.float64)
    if len(spec.input_shape) == 2:
        cur = cur[..., None]       # single-channel image
    for i, layer in enumerate(spec.layers):
        cache = None
        if layer.kind == "dense":
            flat = cur.reshape(n, -1)
            cache = (flat, cur.shape)
            cur = flat @ weights.tensors[i]["w"] + weights.tensors[i]["b"]
        elif layer.kind == "conv":
            cache = cur
            cur = _conv_forward(cur, weights.tensors[i]["w"]) \
                + weights.tensors[i]["b"]
        elif layer.kind == "maxpool":
            x_shape = cur.shape
            cur, idx = _pool_forward(cur)
            cache = (x_shape, idx)
        elif layer.kind == "relu":
            cache = cur > 0
            cur = np.maximum(cur, 0.0)
        elif layer.kind == "dropout":
            if training and layer.rate > 0.0:
                if rng is None:
                    raise ValidationError(
                        "training-mode forward through dropout needs an rng")
                mask = rng.random(cur.shape) >= layer.rate
                cache = mask
                cur = cur * mask / (1.0 - layer.rate)
        elif layer.kind == "softmax":
            z = cur - cur.max(axis=-1, keepdims=True)
            e = np.exp(z)
            cur = e / e.sum(axis=-1, keepdims=True)
            cache = cur
        if keep_cache:
            caches.append(cache)
    return cur, caches


def forward(spec: NetworkSpec, weights: Weights, x: np.ndarray,
            training: bool = False, rng=None) -> np.ndarray:
    """Run the network on a batch; shape (n,) + input_shape.

    Inference (`training=False`) is a pure function of (weights, x);
    dropout only fires in training mode.
    """
    _check_weights(spec, weights)
    out, _ = _run(spec, weights, x, training, rng, keep_cache=False)
    return out


def backward(spec: NetworkSpec, weights: Weights, caches, grad_out):
    """Backpropagate d(loss)/d(output) to per-tensor gradients."""
    grads: dict[int, dict[str, np.ndarray]] = {}
    grad = grad_out
    for i in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[i]
        cache = caches[i]
        if layer.kind == "dense":
            flat, in_shape = cache
            grads[i] = {"w": flat.T @ grad, "b": grad.sum(axis=0)}
            grad = (grad @ weights.tensors[i]["w"].T).reshape(in_shape)
        elif layer.kind == "conv":
            gx, gw, gb = _conv_backward(grad, cache, weights.tensors[i]["w"])
            grads[i] = {"w": gw, "b": gb}
            grad = gx
        elif layer.kind == "maxpool":
            x_shape, idx = cache
            grad = _pool_backward(grad, x_shape, idx)
        elif layer.kind == "relu":
            grad = grad * cache
        elif layer.kind == "dropout":
            if cache is not None:
                grad = grad * cache / (1.0 - layer.rate)
        elif layer.kind == "softmax":
            # reached only for a softmax mid-net or a non-fused loss path
            p = cache
            grad = p * (grad - (grad * p).sum(axis=-1, keepdims=True))
    return grads


# ---------------------------------------------------------------------------
# losses

def mse_loss(out: np.ndarray, target: np.ndarray):
    """Mean squared error over every element; returns (loss, dL/dout)."""
    diff = out - target
    return float(np.mean(diff ** 2)), 2.0 * diff / diff.size


def cross_entropy_loss(prob: np.ndarray, target: np.ndarray):
    """Soft-target cross entropy on probabilities; grad is wrt the LOGITS.

    Fused with the softmax head: the returned gradient must enter the
    backward pass below the softmax layer.
    """
    n = prob.shape[0]
    loss = float(-np.sum(target * np.log(np.clip(prob, 1e-300, None))) / n)
    return loss, (prob - target) / n


# ---------------------------------------------------------------------------
# training

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    loss: str = "mse"          # 'mse' | 'cross-entropy'
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValidationError("epochs and batch_size must be >= 1")
        if self.learning_rate <= 0 or self.eps <= 0:
            raise ValidationError("learning rate and eps must be > 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValidationError("Adam betas must be in [0, 1)")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValidationError("val_fraction must be in [0, 1)")
        if self.loss not in ("mse", "cross-entropy"):
            raise ValidationError(f"unknown loss {self.loss!r}")


@dataclass(frozen=True)
class Metrics:
    """Loss history and, once evaluated, a task-specific accuracy."""

    train_loss: tuple[float, ...]
    val_loss: tuple[float, ...]
    best_epoch: int
    accuracy: float | None = None

    def __post_init__(self):
        if self.accuracy is not None and not 0.0 <= self.accuracy <= 1.0:
            raise ValidationError(f"accuracy {self.accuracy} outside [0, 1]")


def _batch_loss(spec, weights, x, y, loss_kind):
    out, _ = _run(spec, weights, x, training=False, rng=None, keep_cache=False)
    if loss_kind == "mse":
        return mse_loss(out, y)[0]
    return cross_entropy_loss(out, y)[0]


def _eval_loss(spec, weights, x, y, loss_kind, batch=256):
    total = 0.0
    for s in range(0, x.shape[0], batch):
        n = min(batch, x.shape[0] - s)
        total += _batch_loss(spec, weights, x[s:s + n], y[s:s + n], loss_kind) * n
    return total / x.shape[0]


def train(spec: NetworkSpec, data, config: TrainConfig,
          transform: str = "none") -> tuple[Weights, Metrics]:
    """Adam-train a network; returns the best-validation-loss weights.

    `data` is (inputs, targets); a `val_fraction` slice of a seeded
    permutation is held out, and the weights snapshot with the lowest
    validation loss wins.  `transform` only annotates the weights with
    the input preprocessing already applied to `data`.

    Raises
    ------
    TrainingDivergedError
        Training or validation loss became non-finite.
    """
    x, y = (np.asarray(a, dtype=np.float64) for a in data)
    if x.shape[0] != y.shape[0]:
        raise ValidationError(f"{x.shape[0]} inputs vs {y.shape[0]} targets")
    if config.loss == "cross-entropy" and \
            (not spec.layers or spec.layers[-1].kind != "softmax"):
        raise ValidationError("cross-entropy training needs a softmax head")
    rng = np.random.default_rng(config.seed)
    perm = rng.permutation(x.shape[0])
    n_val = int(round(config.val_fraction * x.shape[0]))
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if train_idx.size == 0:
        raise ValidationError("validation split leaves no training data")

    weights = init_weights(spec, seed=config.seed, transform=transform)
    adam_m = {k: np.zeros(s) for k, s in _param_shapes(spec).items()}
    adam_v = {k: np.zeros(s) for k, s in _param_shapes(spec).items()}
    fused_ce = config.loss == "cross-entropy"
    if fused_ce:
        # gradient from the fused loss is wrt logits; backprop skips the head
        body = replace(spec, layers=spec.layers[:-1])
    step = 0
    best = (np.inf, weights.copy(), 0)
    train_hist, val_hist = [], []
    for epoch in range(config.epochs):
        order = train_idx[rng.permutation(train_idx.size)]
        epoch_loss = 0.0
        for s in range(0, order.size, config.batch_size):
            idx = order[s:s + config.batch_size]
            xb, yb = x[idx], y[idx]
            out, caches = _run(spec, weights, xb, training=True, rng=rng,
                               keep_cache=True)
            if fused_ce:
                loss, grad = cross_entropy_loss(out, yb)
                grads = backward(body, weights, caches[:-1], grad)
            else:
                loss, grad = mse_loss(out, yb)
                grads = backward(spec, weights, caches, grad)
            epoch_loss += loss * idx.size
            step += 1
            lr_t = config.learning_rate * \
                np.sqrt(1.0 - config.beta2 ** step) / (1.0 - config.beta1 ** step)
            for key in adam_m:
                i, name = key
                g = grads[i][name]
                adam_m[key] = config.beta1 * adam_m[key] + (1 - config.beta1) * g
                adam_v[key] = config.beta2 * adam_v[key] + (1 - config.beta2) * g * g
                weights.tensors[i][name] -= lr_t * adam_m[key] / \
                    (np.sqrt(adam_v[key]) + config.eps)
        epoch_loss /= train_idx.size
        train_hist.append(epoch_loss)
        if val_idx.size:
            v = _eval_loss(spec, weights, x[val_idx], y[val_idx], config.loss)
        else:
            v = epoch_loss
        val_hist.append(v)
        if not np.isfinite(epoch_loss) or not np.isfinite(v):
            raise TrainingDivergedError(
                f"loss became non-finite at epoch {epoch}", epoch=epoch)
        if v < best[0]:
            best = (v, weights.copy(), epoch)
    metrics = Metrics(train_loss=tuple(train_hist), val_loss=tuple(val_hist),
                      best_epoch=best[2])
    return best[1], metrics


# ---------------------------------------------------------------------------
# evaluation helpers

def charge_accuracy(pred: np.ndarray, label: np.ndarray) -> float:
    """Fraction of points whose rounded prediction equals the label."""
    pred, label = np.asarray(pred), np.asarray(label)
    if pred.shape != label.shape:
        raise ValidationError(f"shape mismatch: {pred.shape} vs {label.shape}")
    return float(np.mean(np.rint(pred) == label))


def state_accuracy(pred: np.ndarray, label: np.ndarray) -> float:
    """Like charge_accuracy but snapped to the four state labels."""
    pred, label = np.asarray(pred), np.asarray(label)
    if pred.shape != label.shape:
        raise ValidationError(f"shape mismatch: {pred.shape} vs {label.shape}")
    return float(np.mean(np.clip(np.rint(pred), 0, 3) == label))


def top1_accuracy(prob_pred: np.ndarray, prob_true: np.ndarray) -> float:
    """Fraction of samples whose argmax class matches."""
    prob_pred, prob_true = np.asarray(prob_pred), np.asarray(prob_true)
    if prob_pred.shape != prob_true.shape:
        raise ValidationError(
            f"shape mismatch: {prob_pred.shape} vs {prob_true.shape}")
    return float(np.mean(prob_pred.argmax(axis=-1) == prob_true.argmax(axis=-1)))


# ---------------------------------------------------------------------------
# input transforms

LOG_DECADES = 12.0


def log_compress(u: np.ndarray, decades: float = LOG_DECADES) -> np.ndarray:
    """Map currents spanning many decades onto [0, 1].

    u = 1 -> 1; u <= 10^-decades -> 0.  Assumes u is already scaled so the
    record peak is order 1.
    """
    floor = 10.0 ** (-decades)
    return (np.log10(np.maximum(np.asarray(u, dtype=np.float64), floor))
            + decades) / decades


def apply_transform(name: str, x: np.ndarray) -> np.ndarray:
    """Per-record input preprocessing recorded in the weight file."""
    x = np.asarray(x, dtype=np.float64)
    if name == "none":
        return x
    if name == "maxabs-log12":
        flat = np.abs(x).reshape(x.shape[0], -1)
        scale = flat.max(axis=1)
        scale[scale == 0.0] = 1.0
        shape = (-1,) + (1,) * (x.ndim - 1)
        return log_compress(np.abs(x) / scale.reshape(shape))
    raise ValidationError(f"unknown input transform {name!r}")


def predict(weights: Weights, x: np.ndarray) -> np.ndarray:
    """Inference on raw records; applies the stored input transform."""
    return forward(weights.spec, weights, apply_transform(weights.transform, x))


def predict_probability_vector(weights: Weights, submap: np.ndarray) -> np.ndarray:
    """State probabilities (SC, Barrier, SD, DD) for one window."""
    submap = np.asarray(submap, dtype=np.float64)
    if submap.shape != weights.spec.input_shape:
        raise ValidationError(f"window shape {submap.shape} does not match "
                              f"network input {weights.spec.input_shape}")
    return predict(weights, submap[None])[0]


# ---------------------------------------------------------------------------
# serialization

def save_weights(weights: Weights, path) -> None:
    """Self-contained weight file: spec + tensors + SHA-256 digest."""
    order = sorted(_param_shapes(weights.spec))
    header = json.dumps({
        "spec": weights.spec.to_dict(),
        "seed": weights.seed,
        "transform": weights.transform,
        "tensors": [[i, name, list(weights.tensors[i][name].shape)]
                    for i, name in order],
    }).encode()
    blob = bytearray()
    blob += WEIGHTS_MAGIC
    blob += struct.pack("<II", WEIGHTS_VERSION, len(header))
    blob += header
    for i, name in order:
        blob += np.ascontiguousarray(weights.tensors[i][name],
                                     dtype="<f8").tobytes()
    blob += hashlib.sha256(blob).digest()
    Path(path).write_bytes(bytes(blob))


def load_weights(path, spec: NetworkSpec | None = None) -> Weights:
    """Load a weight file; optionally insist it matches a given spec.

    Raises
    ------
    DataFormatError
        Bad magic or version, checksum failure, or truncated payload.
    ValidationError
        `spec` given and the embedded network differs (names the layer).
    """
    raw = Path(path).read_bytes()
    if raw[:4] != WEIGHTS_MAGIC:
        raise DataFormatError(f"{path}: not a weights file (bad magic)")
    if len(raw) < 44:
        raise DataFormatError(f"{path}: truncated weights file")
    digest, payload = raw[-32:], raw[:-32]
    if hashlib.sha256(payload).digest() != digest:
        raise DataFormatError(f"{path}: checksum mismatch, file corrupted")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version != WEIGHTS_VERSION:
        raise DataFormatError(f"{path}: weights version {version} unsupported")
    header = json.loads(raw[12:12 + hlen].decode())
    file_spec = NetworkSpec.from_dict(header["spec"])
    if spec is not None and spec != file_spec:
        for i, (a, b) in enumerate(zip(spec.layers, file_spec.layers)):
            if a != b:
                raise ValidationError(
                    f"layer {i}: requested {a}, file holds {b}")
        raise ValidationError(
            f"network mismatch: requested {len(spec.layers)} layers / input "
            f"{spec.input_shape}, file holds {len(file_spec.layers)} layers / "
            f"input {file_spec.input_shape}")
    tensors: dict[int, dict[str, np.ndarray]] = {}
    offset = 12 + hlen
    for i, name, shape in header["tensors"]:
        count = int(np.prod(shape))
        end = offset + count * 8
        if end > len(payload):
            raise DataFormatError(f"{path}: tensor data truncated at layer {i}")
        tensors.setdefault(i, {})[name] = np.frombuffer(
            payload[offset:end], dtype="<f8").reshape(shape).copy()
        offset = end
    weights = Weights(spec=file_spec, tensors=tensors, seed=header["seed"],
                      transform=header["transform"])
    _check_weights(file_spec, weights)
    return weights


# ---------------------------------------------------------------------------
# the three estimator networks

def charge_id_network(n_points: int = 512) -> NetworkSpec:
    """Current trace -> per-voltage charge count (regression, round at eval)."""
    return NetworkSpec(input_shape=(n_points,), layers=(
        dense(1024), relu(),
        dense(256), relu(),
        dense(12), relu(),
        dense(n_points),
    ))


def pixel_state_network(n_pixels: int = 100) -> NetworkSpec:
    """Flattened current map -> per-pixel state label (regression)."""
    n = n_pixels * n_pixels
    return NetworkSpec(input_shape=(n,), layers=(
        dense(1024), relu(),
        dense(256), relu(),
        dense(12), relu(),
        dense(n),
    ))


def submap_cnn(size: int = 30) -> NetworkSpec:
    """Current window -> state probability vector (SC, Barrier, SD, DD)."""
    return NetworkSpec(input_shape=(size, size), layers=(
        conv(16), relu(), maxpool(),
        conv(16), relu(), maxpool(),
        dense(1024), relu(), dropout(0.5),
        dense(256), relu(), dropout(0.5),
        dense(4), softmax(),
    ))
