"""Feed-forward networks with mask-sampled weights, exact backprop and SGD.

The training objective for one minibatch is

    loss = l2 * sum_k ||V_k||^2  -  (1/n) sum_i mean_batch log p(y | x, V * M_i)

with ``n`` independent mask draws ``M_i``. Gradients are taken with the
masks held fixed, so the weight gradient is the sampled-weight gradient
multiplied elementwise by the mask. Biases are neither masked nor
penalised.
"""

from __future__ import annotations

import base64
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import layers as L
from .errors import ConfigError, DimensionError, NumericError, ParameterError, TrainingDiverged
from .masks import MaskSpec, sample_mask
from .tensor import Rng, Tensor, log_softmax

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "bnn-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class NetworkParams:
    """Variational parameters ``V`` and biases, one pair per Dense/Conv2D layer."""

    weights: list[Tensor]
    biases: list[Tensor]

    def copy(self) -> NetworkParams:
        return NetworkParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self) -> NetworkParams:
        return NetworkParams([np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases])

    def tensors(self) -> list[Tensor]:
        return [*self.weights, *self.biases]

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(t)) for t in self.tensors())

    def equal(self, other: NetworkParams) -> bool:
        return len(self.weights) == len(other.weights) and all(
            np.array_equal(a, b) for a, b in zip(self.tensors(), other.tensors())
        )


@dataclass
class TrainConfig:
    lr: float = 0.01
    # multiplicative learning-rate decay applied after every epoch
    lr_decay: float = 1.0
    momentum: float = 0.9
    batch_size: int = 32
    epochs: int = 5
    l2: float = 0.0
    mc_samples: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError(f"lr_decay must lie in (0, 1], got {self.lr_decay}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.batch_size < 1 or self.epochs < 0:
            raise ConfigError("batch_size must be >= 1 and epochs >= 0")
        if self.l2 < 0:
            raise ConfigError(f"l2 coefficient must be >= 0, got {self.l2}")
        if self.mc_samples < 1:
            raise ConfigError(f"mc_samples must be >= 1, got {self.mc_samples}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train config fields: {sorted(unknown)}")
        return cls(**d)


# -- architectures -----------------------------------------------------------

def mnist_cnn(conv1: int = 32, conv2: int = 64, hidden: int = 1024, n_classes: int = 10) -> list:
    """Two 5x5 conv blocks, one hidden dense layer and the softmax layer.

    Unit (dropout) noise goes after every conv and hidden dense layer; the
    softmax layer only receives per-weight noise.
    """
    return [
        L.Conv2D(1, conv1, 5),
        L.ReLU(),
        L.MaxPool2D(2, 2),
        L.Conv2D(conv1, conv2, 5),
        L.ReLU(),
        L.MaxPool2D(2, 2),
        L.Flatten(),
        L.Dense(conv2 * 16, hidden),
        L.ReLU(),
        L.Dense(hidden, n_classes, row_gates=False),
    ]


def boundary_net(hidden: int = 5) -> list:
    """Linear 2 -> hidden -> 2 network; unit noise only on the hidden layer."""
    return [L.Dense(2, hidden), L.Dense(hidden, 2, row_gates=False)]


MNIST_INPUT_SHAPE = (1, 28, 28)
BOUNDARY_INPUT_SHAPE = (2,)


def parametric_layers(layers) -> list:
    return [layer for layer in layers if L.is_parametric(layer)]


def init_params(layers, input_shape, rng: Rng) -> NetworkParams:
    """He-uniform weights ``U(-sqrt(6/fan_in), sqrt(6/fan_in))``, zero biases."""
    L.output_shape(layers, input_shape)
    weights, biases = [], []
    for layer in parametric_layers(layers):
        limit = np.sqrt(6.0 / layer.fan_in)
        n = int(np.prod(layer.weight_shape))
        weights.append(((2.0 * rng.uniform(n) - 1.0) * limit).reshape(layer.weight_shape))
        biases.append(np.zeros(layer.weight_shape[0]))
    return NetworkParams(weights, biases)


def check_params(params: NetworkParams, layers) -> None:
    plist = parametric_layers(layers)
    if len(plist) != len(params.weights) or len(plist) != len(params.biases):
        raise DimensionError(f"{len(plist)} parametric layers but {len(params.weights)} weight tensors")
    for idx, (layer, w, b) in enumerate(zip(plist, params.weights, params.biases)):
        if w.shape != layer.weight_shape or b.shape != (layer.weight_shape[0],):
            raise DimensionError(
                f"parameter {idx}: expected weight {layer.weight_shape} / bias ({layer.weight_shape[0]},), "
                f"got {w.shape} / {b.shape}"
            )


# -- masks -------------------------------------------------------------------

def layer_mask_spec(layer, spec: MaskSpec) -> MaskSpec | None:
    if not layer.masked:
        return None
    return spec if layer.row_gates else spec.without_row_gates()


def sample_network_masks(layers, spec: MaskSpec, rng: Rng) -> list[Tensor | None]:
    """One mask per parametric layer (``None`` where no noise applies), in layer order."""
    masks = []
    for layer in parametric_layers(layers):
        lspec = layer_mask_spec(layer, spec)
        if lspec is None or lspec.kind.value == "MAP":
            masks.append(None)
            continue
        rows = layer.weight_shape[0]
        m = sample_mask(lspec, rows, layer.fan_in, rng)
        masks.append(m.reshape(layer.weight_shape))
    return masks


# -- forward / backward ------------------------------------------------------

def _run(params, layers, x, masks, keep_cache=False):
    caches = []
    k = 0
    h = x
    for idx, layer in enumerate(layers):
        if isinstance(layer, (L.Dense, L.Conv2D)):
            w = params.weights[k] if masks is None or masks[k] is None else params.weights[k] * masks[k]
            if isinstance(layer, L.Dense):
                h, cache = L.dense_forward(h, w, params.biases[k])
            else:
                h, cache = L.conv_forward(h, w, params.biases[k], layer)
            caches.append((cache, w, k))
            k += 1
        elif isinstance(layer, L.ReLU):
            caches.append(h > 0)
            h = np.maximum(h, 0.0)
        elif isinstance(layer, L.MaxPool2D):
            h, cache = L.maxpool_forward(h, layer, keep_cache)
            caches.append(cache)
        elif isinstance(layer, L.Flatten):
            caches.append(h.shape)
            h = h.reshape(h.shape[0], -1)
        if not np.all(np.isfinite(h)):
            raise NumericError(f"non-finite activation at layer {idx} ({type(layer).__name__})")
        if not keep_cache:
            caches.clear()
    return h, caches


def _backward(dlogits, layers, caches, masks, n_params):
    gw = [None] * n_params
    gb = [None] * n_params
    dh = dlogits
    for pos in range(len(layers) - 1, -1, -1):
        layer, cache = layers[pos], caches[pos]
        if isinstance(layer, (L.Dense, L.Conv2D)):
            inner, w, k = cache
            need_dx = pos > 0
            if isinstance(layer, L.Dense):
                dh, dw, db = L.dense_backward(dh, inner, w, need_dx)
            else:
                dh, dw, db = L.conv_backward(dh, inner, w, layer, need_dx)
            gw[k] = dw if masks is None or masks[k] is None else dw * masks[k]
            gb[k] = db
        elif isinstance(layer, L.ReLU):
            dh = dh * cache
        elif isinstance(layer, L.MaxPool2D):
            dh = L.maxpool_backward(dh, cache, layer)
        elif isinstance(layer, L.Flatten):
            dh = dh.reshape(cache)
    return gw, gb


def _check_input(params, layers, x):
    check_params(params, layers)
    if x.ndim < 2 or x.shape[0] == 0:
        raise DimensionError(f"expected a non-empty batch, got input of shape {x.shape}")
    L.output_shape(layers, x.shape[1:])


def forward(params: NetworkParams, layers, x: Tensor, mask_spec: MaskSpec, rng: Rng | None = None,
            masks: list | None = None) -> Tensor:
    """Logits for a batch.

    With ``rng`` a fresh mask is drawn for every masked layer; with neither
    ``rng`` nor ``masks`` this is the mean-field pass (mean mask = ones, so
    ``V`` is used unchanged). Pre-drawn ``masks`` may be supplied instead.
    """
    x = np.asarray(x, dtype=np.float64)
    _check_input(params, layers, x)
    if masks is None and rng is not None:
        masks = sample_network_masks(layers, mask_spec, rng)
    logits, _ = _run(params, layers, x, masks)
    return logits


def forward_chunked(params, layers, x, masks=None, chunk: int = 500) -> Tensor:
    """Logits over a large input in fixed-size chunks sharing one mask draw."""
    x = np.asarray(x, dtype=np.float64)
    _check_input(params, layers, x)
    out = [_run(params, layers, x[i:i + chunk], masks)[0] for i in range(0, x.shape[0], chunk)]
    return np.concatenate(out, axis=0)


def _check_labels(labels, n, n_classes):
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise DimensionError(f"expected {n} labels, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(labels == np.round(labels)):
            raise ParameterError("labels must be integer class indices")
        labels = labels.astype(np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= n_classes):
        raise ParameterError(f"labels must lie in [0, {n_classes})")
    return labels


def l2_penalty(params: NetworkParams) -> float:
    return float(sum(np.sum(w * w) for w in params.weights))


def loss_and_grad_fixed(params, layers, x, labels, masks_list, l2: float):
    """Loss and exact gradient for the given mask draws (one list per sample)."""
    x = np.asarray(x, dtype=np.float64)
    _check_input(params, layers, x)
    n_classes = L.output_shape(layers, x.shape[1:])[0]
    labels = _check_labels(labels, x.shape[0], n_classes)
    batch = x.shape[0]
    rows = np.arange(batch)
    grads = params.zeros_like()
    nll = 0.0
    n = len(masks_list)
    for masks in masks_list:
        logits, caches = _run(params, layers, x, masks, keep_cache=True)
        logp = log_softmax(logits)
        nll -= logp[rows, labels].mean() / n
        dlogits = np.exp(logp)
        dlogits[rows, labels] -= 1.0
        dlogits /= batch * n
        gw, gb = _backward(dlogits, layers, caches, masks, len(params.weights))
        for k in range(len(gw)):
            grads.weights[k] += gw[k]
            grads.biases[k] += gb[k]
    loss = nll + l2 * l2_penalty(params)
    if l2:
        for k, w in enumerate(params.weights):
            grads.weights[k] += 2.0 * l2 * w
    return float(loss), grads


def loss_and_grad(params: NetworkParams, layers, batch, mask_spec: MaskSpec, config: TrainConfig, rng: Rng):
    """Stochastic variational loss over ``config.mc_samples`` mask draws and its gradient."""
    x, labels = batch
    if config.mc_samples < 1:
        raise ParameterError("need at least one mask sample")
    masks_list = [sample_network_masks(layers, mask_spec, rng) for _ in range(config.mc_samples)]
    return loss_and_grad_fixed(params, layers, x, labels, masks_list, config.l2)


def sgd_step(params: NetworkParams, grads: NetworkParams, lr: float) -> NetworkParams:
    if lr <= 0:
        raise ParameterError(f"learning rate must be positive, got {lr}")
    if not grads.all_finite():
        raise NumericError("non-finite gradient; refusing to update parameters")
    check_same = [a.shape == b.shape for a, b in zip(params.tensors(), grads.tensors())]
    if len(check_same) != len(params.tensors()) or not all(check_same):
        raise DimensionError("gradient shapes do not match parameter shapes")
    return NetworkParams(
        [w - lr * g for w, g in zip(params.weights, grads.weights)],
        [b - lr * g for b, g in zip(params.biases, grads.biases)],
    )


def meanfield_error(params, layers, x, labels) -> float:
    logits = forward_chunked(params, layers, x)
    return float(np.mean(np.argmax(logits, axis=1) != np.asarray(labels)))


@dataclass
class EpochRecord:
    epoch: int
    mean_loss: float
    val_error: float | None
    lr: float


def train(params: NetworkParams, layers, dataset, mask_spec: MaskSpec, config: TrainConfig,
          val=None, keep_best: bool = False, rng: Rng | None = None):
    """Shuffled minibatch SGD (with momentum) on the sampled loss.

    ``dataset`` and ``val`` need ``inputs`` and ``labels`` attributes. With
    ``keep_best`` the parameters of the epoch with the lowest mean-field
    validation error are returned. Returns ``(params, log)`` where ``log`` is
    a list of :class:`EpochRecord`.
    """
    x = np.asarray(dataset.inputs, dtype=np.float64)
    y = np.asarray(dataset.labels)
    if x.shape[0] == 0:
        raise ParameterError("cannot train on an empty dataset")
    if keep_best and val is None:
        raise ParameterError("keep_best needs a validation set")
    check_params(params, layers)
    rng = rng if rng is not None else Rng(config.seed)
    params = params.copy()
    velocity = params.zeros_like()
    lr = config.lr
    history: list[EpochRecord] = []
    best, best_err = params.copy(), np.inf
    for epoch in range(config.epochs):
        order = rng.permutation(x.shape[0])
        losses = []
        for b, start in enumerate(range(0, x.shape[0], config.batch_size)):
            idx = order[start:start + config.batch_size]
            try:
                loss, grads = loss_and_grad(params, layers, (x[idx], y[idx]), mask_spec, config, rng)
            except NumericError:
                raise TrainingDiverged(epoch, b, float("nan")) from None
            if not np.isfinite(loss) or not grads.all_finite():
                raise TrainingDiverged(epoch, b, loss)
            losses.append(loss)
            # in-place equivalent of sgd_step(params, velocity, lr)
            for v, g, t in zip(velocity.tensors(), grads.tensors(), params.tensors()):
                if config.momentum:
                    v *= config.momentum
                    v += g
                    t -= lr * v
                else:
                    t -= lr * g
            if not params.all_finite():
                raise TrainingDiverged(epoch, b, loss)
        val_err = None if val is None else meanfield_error(params, layers, val.inputs, val.labels)
        rec = EpochRecord(epoch + 1, float(np.mean(losses)), val_err, lr)
        history.append(rec)
        log.info("epoch %d loss %.5f val_error %s", rec.epoch, rec.mean_loss, val_err)
        if keep_best and val_err < best_err:
            best, best_err = params.copy(), val_err
        lr *= config.lr_decay
    if keep_best and history:
        return best, history
    return params, history


# -- checkpoints -------------------------------------------------------------

def _encode(t: Tensor) -> dict:
    data = np.ascontiguousarray(t, dtype="<f8").tobytes()
    return {"shape": list(t.shape), "data": base64.b64encode(data).decode("ascii")}


def _decode(d: dict) -> Tensor:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(d["shape"])


def save_checkpoint(path, params: NetworkParams, layers, input_shape, mask_spec: MaskSpec, seed: int,
                    extra: dict | None = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "input_shape": list(input_shape),
        "layers": [L.layer_to_dict(layer) for layer in layers],
        "mask_spec": mask_spec.to_dict(),
        "seed": int(seed),
        "params": [{"weight": _encode(w), "bias": _encode(b)} for w, b in zip(params.weights, params.biases)],
    }
    if extra:
        doc["extra"] = extra
    Path(path).write_text(json.dumps(doc, sort_keys=True))


@dataclass
class Checkpoint:
    params: NetworkParams
    layers: list
    input_shape: tuple
    mask_spec: MaskSpec
    seed: int
    extra: dict = field(default_factory=dict)


def load_checkpoint(path) -> Checkpoint:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
        raise ConfigError(f"{path}: not a {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION} file")
    layers = [L.layer_from_dict(d) for d in doc["layers"]]
    params = NetworkParams([_decode(p["weight"]) for p in doc["params"]], [_decode(p["bias"]) for p in doc["params"]])
    check_params(params, layers)
    return Checkpoint(params, layers, tuple(doc["input_shape"]), MaskSpec.from_dict(doc["mask_spec"]),
                      int(doc["seed"]), doc.get("extra", {}))
