"""TRES-CNN: residual 2-D convolutional diagnosis network with two heads.

A transient enters as a one-channel image of shape (P parameters, T time
steps).  It is z-scored per parameter with training-split statistics, the
sinusoidal positional-encoding map is added, and the result runs through a
stack of residual blocks::

    conv -> relu -> conv -> (+ skip) -> relu -> maxpool

Pooling acts on the time axis only, so the last convolutional layer still
resolves every input parameter.  Its output is averaged over time, flattened
and fed to a shared dense layer (with dropout) and then to a softmax
break-location head and a linear break-size head.

``tres_cnn_plain`` is the ablation without skips and without dropout; it
keeps the same parameter set (the skip projections are simply unused).
``mlp_baseline`` is a one-hidden-layer perceptron on the flattened input.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import numerics as nx
from .datagen import CLASSES, TransientCase
from .errors import ConfigError, DatasetLoadError, ShapeError, ValidationError
from .numerics import Graph, Rng, Tensor

KINDS = ("tres_cnn", "tres_cnn_plain", "mlp_baseline")
CHECKPOINT_FORMAT = "tresdiag-checkpoint/1"
STD_FLOOR = 1e-8


@dataclass
class BlockSpec:
    filters: int
    kernel: tuple[int, int] = (1, 5)
    pool: tuple[int, int] = (1, 2)

    def __post_init__(self):
        self.kernel = tuple(int(k) for k in self.kernel)
        self.pool = tuple(int(k) for k in self.pool)


def _default_blocks() -> list[BlockSpec]:
    return [BlockSpec(4, (1, 5), (1, 4)), BlockSpec(8, (1, 5), (1, 2)), BlockSpec(8, (1, 5), (1, 2))]


@dataclass
class ArchConfig:
    kind: str = "tres_cnn"
    n_params: int = 38
    n_times: int = 200
    blocks: list[BlockSpec] = field(default_factory=_default_blocks)
    dense_width: int = 32
    dropout: float = 0.2
    num_classes: int = 2
    positional_encoding: bool = True

    def __post_init__(self):
        self.blocks = [b if isinstance(b, BlockSpec) else BlockSpec(**b) for b in self.blocks]

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ConfigError(f"unknown architecture kind {self.kind!r}")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2")
        if min(self.n_params, self.n_times, self.dense_width) < 1:
            raise ConfigError("all dimensions must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout rate must lie in [0, 1), got {self.dropout}")
        if self.kind == "tres_cnn_plain" and self.dropout != 0.0:
            raise ConfigError("tres_cnn_plain has no dropout; set dropout=0")
        if self.kind == "mlp_baseline":
            return
        if not self.blocks:
            raise ConfigError("a convolutional architecture needs at least one block")
        h, w = self.n_params, self.n_times
        for i, b in enumerate(self.blocks):
            if b.filters < 1:
                raise ConfigError(f"block {i}: filters must be positive")
            if any(k < 1 or k % 2 == 0 for k in b.kernel):
                raise ConfigError(f"block {i}: kernel sizes must be odd and positive, got {b.kernel}")
            if any(p < 1 for p in b.pool):
                raise ConfigError(f"block {i}: pool sizes must be positive")
            h, w = h // b.pool[0], w // b.pool[1]
            if h < 1 or w < 1:
                raise ConfigError(f"block {i}: pooling {b.pool} shrinks the feature map below 1")

    def feature_shape(self) -> tuple[int, int, int]:
        """(filters, P', T') after the last block's pooling."""
        h, w = self.n_params, self.n_times
        for b in self.blocks:
            h, w = h // b.pool[0], w // b.pool[1]
        return (self.blocks[-1].filters, h, w)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["blocks"] = [{"filters": b.filters, "kernel": list(b.kernel), "pool": list(b.pool)}
                       for b in self.blocks]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> ArchConfig:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown architecture keys: {sorted(unknown)}")
        d = dict(d)
        if "blocks" in d:
            d["blocks"] = [BlockSpec(**b) for b in d["blocks"]]
        return cls(**d)

    def ablated(self) -> ArchConfig:
        """The no-skip, no-dropout variant with identical weight shapes."""
        return replace(self, kind="tres_cnn_plain", dropout=0.0,
                       blocks=[replace(b) for b in self.blocks])


def reduced_arch(n_params: int = 6, n_times: int = 20, n_blocks: int = 2, filters: int = 4,
                 kind: str = "tres_cnn", **kw) -> ArchConfig:
    """Small configuration used for gradient checks and rigged tests."""
    blocks = [BlockSpec(filters, (1, 3), (1, 2)) for _ in range(n_blocks)]
    return ArchConfig(kind=kind, n_params=n_params, n_times=n_times, blocks=blocks,
                      dense_width=kw.pop("dense_width", 8), **kw)


# --------------------------------------------------------------------------
# positional encoding

def positional_encoding(pos: int, i: int, dim: int, n_times: int | None = None) -> float:
    """Sinusoid for time index ``pos`` and parameter index ``i``.

    Even parameters take sin(pos / 10000**(i/dim)); odd ones take
    cos(pos / 10000**((i-1)/dim)), so parameters 2j and 2j+1 share a frequency.
    """
    if not 0 <= i < dim or pos < 0 or (n_times is not None and pos >= n_times):
        raise IndexError(f"positional_encoding index out of range: pos={pos}, i={i}, dim={dim}")
    if i % 2 == 0:
        return math.sin(pos / 10000.0 ** (i / dim))
    return math.cos(pos / 10000.0 ** ((i - 1) / dim))


def positional_encoding_map(n_times: int, dim: int) -> np.ndarray:
    """T x P map of :func:`positional_encoding`."""
    pos = np.arange(n_times, dtype=float)[:, None]
    i = np.arange(dim)
    even = i - (i % 2)
    angle = pos / np.power(10000.0, even / dim)
    return np.where(i % 2 == 0, np.sin(angle), np.cos(angle))


# --------------------------------------------------------------------------
# parameters

def param_shapes(arch: ArchConfig) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    if arch.kind == "mlp_baseline":
        n_in = arch.n_params * arch.n_times
    else:
        cin = 1
        for i, b in enumerate(arch.blocks):
            kh, kw = b.kernel
            shapes[f"block{i}.conv1.w"] = (b.filters, cin, kh, kw)
            shapes[f"block{i}.conv2.w"] = (b.filters, b.filters, kh, kw)
            if cin != b.filters:
                shapes[f"block{i}.skip.w"] = (b.filters, cin, 1, 1)
            cin = b.filters
        f, h, _ = arch.feature_shape()
        n_in = f * h
    shapes["dense.w"] = (n_in, arch.dense_width)
    shapes["dense.b"] = (arch.dense_width,)
    shapes["head_cls.w"] = (arch.dense_width, arch.num_classes)
    shapes["head_cls.b"] = (arch.num_classes,)
    shapes["head_size.w"] = (arch.dense_width, 1)
    shapes["head_size.b"] = (1,)
    return shapes


def _fan_in(shape: tuple[int, ...]) -> int:
    return int(np.prod(shape[1:])) if len(shape) == 4 else int(shape[0])


@dataclass(eq=False)
class TrainedModel:
    arch: ArchConfig
    weights: dict[str, np.ndarray]
    channels: tuple[str, ...]
    norm_mean: np.ndarray
    norm_std: np.ndarray
    classes: tuple[str, ...] = CLASSES
    metadata: dict = field(default_factory=dict)

    @property
    def n_parameters(self) -> int:
        return int(sum(w.size for w in self.weights.values()))

    def copy(self) -> TrainedModel:
        return TrainedModel(self.arch, {k: v.copy() for k, v in self.weights.items()},
                            self.channels, self.norm_mean.copy(), self.norm_std.copy(),
                            self.classes, json.loads(json.dumps(self.metadata)))

    def with_norm_stats(self, mean, std) -> TrainedModel:
        m = self.copy()
        m.norm_mean = np.asarray(mean, dtype=float).copy()
        m.norm_std = np.maximum(np.asarray(std, dtype=float), STD_FLOOR)
        return m


def build_model(arch: ArchConfig, rng: Rng, channels: Sequence[str] | None = None) -> TrainedModel:
    """Untrained model; every tensor is drawn from its own named child stream."""
    arch.validate()
    if channels is None:
        channels = tuple(f"param_{i}" for i in range(arch.n_params))
    channels = tuple(channels)
    if len(channels) != arch.n_params:
        raise ConfigError(f"{len(channels)} channel names for n_params={arch.n_params}")
    weights = {}
    for name, shape in param_shapes(arch).items():
        if name.endswith(".b"):
            weights[name] = np.zeros(shape)
        else:
            a = math.sqrt(1.0 / _fan_in(shape))
            weights[name] = rng.child(name).uniform(-a, a, shape)
    return TrainedModel(arch, weights, channels, np.zeros(arch.n_params), np.ones(arch.n_params))


# --------------------------------------------------------------------------
# forward

@dataclass
class ForwardResult:
    logits: Tensor          # (N, C)
    size: Tensor            # (N,)
    last_conv: Tensor | None  # (N, F, P', T') before the last pooling
    graph: Graph | None


@dataclass
class Prediction:
    class_probs: np.ndarray
    size: float

    @property
    def label(self) -> int:
        return int(np.argmax(self.class_probs))


def prepare_input(model: TrainedModel, values: np.ndarray) -> np.ndarray:
    """(N, P, T) raw values -> normalized values with positional encoding added."""
    arch = model.arch
    values = np.asarray(values, dtype=float)
    if values.ndim != 3 or values.shape[1:] != (arch.n_params, arch.n_times):
        raise ShapeError("model input must be (N, P, T)", values.shape, (arch.n_params, arch.n_times))
    x = (values - model.norm_mean[None, :, None]) / model.norm_std[None, :, None]
    if arch.positional_encoding and arch.kind != "mlp_baseline":
        x = x + positional_encoding_map(arch.n_times, arch.n_params).T[None]
    return x


def forward_batch(model: TrainedModel, values: np.ndarray, training: bool = False,
                  rng: Rng | None = None, record: bool = False,
                  input_grad: bool = False) -> ForwardResult:
    """Run the network on a batch of raw (N, P, T) transients.

    With ``record`` the pass is taped on a fresh :class:`Graph` whose
    parameters are named as in ``model.weights``.
    """
    arch = model.arch
    x_np = prepare_input(model, values)
    graph = Graph() if record else None
    if graph is not None:
        p = {k: graph.param(k, v) for k, v in model.weights.items()}
        x = graph.input(x_np, "input") if input_grad else Tensor(x_np)
    else:
        p = {k: Tensor(v) for k, v in model.weights.items()}
        x = Tensor(x_np)
    n = x_np.shape[0]
    feat, last_conv = _trunk(arch, p, x, n)
    logits, size = _heads(arch, p, feat, n, training, rng)
    return ForwardResult(logits, size, last_conv, graph)


def _trunk(arch: ArchConfig, p: dict, x: Tensor, n: int) -> tuple[Tensor, Tensor | None]:
    """Flat (N, F * P') features and the last convolutional activation."""
    if arch.kind == "mlp_baseline":
        return nx.reshape(x, (n, arch.n_params * arch.n_times)), None
    h = nx.reshape(x, (n, 1, arch.n_params, arch.n_times))
    last_conv = None
    for i, b in enumerate(arch.blocks):
        pad = (b.kernel[0] // 2, b.kernel[1] // 2)
        y = nx.relu(nx.conv2d(h, p[f"block{i}.conv1.w"], padding=pad))
        y = nx.conv2d(y, p[f"block{i}.conv2.w"], padding=pad)
        if arch.kind == "tres_cnn":
            skip = p.get(f"block{i}.skip.w")
            y = nx.add(y, h if skip is None else nx.conv2d(h, skip))
        h = nx.relu(y)
        last_conv = h
        if b.pool != (1, 1):
            h = nx.maxpool2d(h, b.pool)
    f, ph, _ = arch.feature_shape()
    return nx.reshape(nx.mean(h, axis=3), (n, f * ph)), last_conv


def _heads(arch: ArchConfig, p: dict, feat: Tensor, n: int, training: bool,
           rng: Rng | None) -> tuple[Tensor, Tensor]:
    hidden = nx.relu(nx.dense(feat, p["dense.w"], p["dense.b"]))
    if arch.kind != "tres_cnn_plain":
        hidden = nx.dropout(hidden, arch.dropout, rng, training)
    logits = nx.dense(hidden, p["head_cls.w"], p["head_cls.b"])
    size = nx.reshape(nx.dense(hidden, p["head_size.w"], p["head_size.b"]), (n,))
    return logits, size


def rows_independent(arch: ArchConfig) -> bool:
    """True when every kernel and pooling window has height 1, so the trunk
    maps each parameter row to its own slice of the features."""
    return arch.kind != "mlp_baseline" and all(b.kernel[0] == 1 and b.pool[0] == 1 for b in arch.blocks)


def trunk_features(model: TrainedModel, values: np.ndarray) -> np.ndarray:
    """Inference-mode trunk features of shape (N, F, P')."""
    x = Tensor(prepare_input(model, values))
    p = {k: Tensor(v) for k, v in model.weights.items()}
    feat, _ = _trunk(model.arch, p, x, x.shape[0])
    f, ph, _ = model.arch.feature_shape()
    return feat.data.reshape(-1, f, ph)


def heads_from_features(model: TrainedModel, feat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Inference-mode (logits, sizes) from (N, F, P') trunk features."""
    n = feat.shape[0]
    p = {k: Tensor(v) for k, v in model.weights.items()}
    logits, size = _heads(model.arch, p, Tensor(feat.reshape(n, -1)), n, False, None)
    return logits.data, size.data


def check_channels(model: TrainedModel, case: TransientCase) -> None:
    if tuple(case.names) != tuple(model.channels):
        missing = [c for c in model.channels if c not in case.names]
        extra = [c for c in case.names if c not in model.channels]
        msg = f"case {case.case_id} channels do not match the model"
        if missing or extra:
            msg += f": missing {missing}, unexpected {extra}"
        else:
            msg += ": same channels in a different order"
        raise ValidationError(msg)


def stack_cases(model: TrainedModel, cases: Sequence[TransientCase]) -> np.ndarray:
    """(N, P, T) array of the model's channels, selecting rows by name if needed."""
    rows = []
    for c in cases:
        if tuple(c.names) != tuple(model.channels):
            c = c.select(model.channels)
        rows.append(c.values)
    return np.stack(rows)


def forward(model: TrainedModel, case: TransientCase, training: bool = False,
            rng: Rng | None = None) -> Prediction:
    check_channels(model, case)
    res = forward_batch(model, case.values[None], training=training, rng=rng)
    probs = nx.softmax(res.logits, axis=-1).data[0]
    return Prediction(probs.copy(), float(res.size.data[0]))


def predict(model: TrainedModel, cases: Sequence[TransientCase],
            batch_size: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Class probabilities (N, C) and sizes (N,) for many cases at inference."""
    probs, sizes = [], []
    for start in range(0, len(cases), batch_size):
        res = forward_batch(model, stack_cases(model, cases[start:start + batch_size]))
        probs.append(nx.softmax(res.logits, axis=-1).data)
        sizes.append(res.size.data)
    return np.concatenate(probs), np.concatenate(sizes)


# --------------------------------------------------------------------------
# losses

def loss_regression(sizes_pred, sizes_true) -> Tensor:
    """Sum of squared errors over the minibatch."""
    pred = nx.as_tensor(sizes_pred)
    true = np.asarray(sizes_true.data if isinstance(sizes_true, Tensor) else sizes_true, dtype=float)
    if pred.shape != true.shape or pred.data.size < 1:
        raise ShapeError("loss_regression needs equal non-empty vectors", pred.shape, true.shape)
    return nx.sum(nx.square(nx.sub(pred, true)))


def loss_classification(logits, labels_onehot) -> Tensor:
    """Summed softmax cross-entropy, evaluated through log-sum-exp."""
    logits = nx.as_tensor(logits)
    y = np.asarray(labels_onehot, dtype=float)
    if logits.data.ndim == 1:
        logits = nx.reshape(logits, (1, -1))
        y = y.reshape(1, -1)
    if y.shape != logits.shape:
        raise ShapeError("logits and one-hot labels differ in shape", logits.shape, y.shape)
    if not (np.all((y == 0) | (y == 1)) and np.all(y.sum(axis=1) == 1)):
        raise ValidationError("every label row must be one-hot")
    return nx.mul(nx.sum(nx.mul(nx.log_softmax(logits, axis=-1), y)), -1.0)


def loss_total(cl, re) -> Tensor:
    return nx.add(cl, re)


def one_hot(labels: Sequence[int], num_classes: int) -> np.ndarray:
    out = np.zeros((len(labels), num_classes))
    out[np.arange(len(labels)), np.asarray(labels, dtype=int)] = 1.0
    return out


# --------------------------------------------------------------------------
# checkpoints

def _array_text(a: np.ndarray) -> str:
    if a.ndim == 0:
        return format(float(a), ".17g")
    if a.ndim == 1:
        return "[" + ",".join(format(float(v), ".17g") for v in a) + "]"
    return "[" + ",".join(_array_text(s) for s in a) + "]"


def _dumps_with_arrays(doc: dict) -> str:
    """JSON text where numpy arrays are written with 17 significant digits."""
    arrays: list[np.ndarray] = []

    def swap(obj):
        if isinstance(obj, np.ndarray):
            arrays.append(obj)
            return f"@@array{len(arrays) - 1}@@"
        if isinstance(obj, dict):
            return {k: swap(v) for k, v in obj.items()}
        if isinstance(obj, (list, tuple)):
            return [swap(v) for v in obj]
        return obj

    text = json.dumps(swap(doc), indent=1, sort_keys=True)
    for i, a in enumerate(arrays):
        text = text.replace(f'"@@array{i}@@"', _array_text(np.asarray(a, dtype=float)), 1)
    return text + "\n"


def model_to_dict(model: TrainedModel) -> dict:
    return {
        "format": CHECKPOINT_FORMAT,
        "arch": model.arch.to_dict(),
        "classes": list(model.classes),
        "channels": list(model.channels),
        "norm_stats": {"mean": model.norm_mean, "std": model.norm_std},
        "weights": dict(model.weights),
        "metadata": model.metadata,
    }


def save_model(model: TrainedModel, path, optimizer_state: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = model_to_dict(model)
    if optimizer_state is not None:
        doc["optimizer"] = optimizer_state
    with open(path, "w", newline="\n") as fh:
        fh.write(_dumps_with_arrays(doc))
    return path


def load_checkpoint(path) -> tuple[TrainedModel, dict | None]:
    path = Path(path)
    if not path.is_file():
        raise DatasetLoadError(f"checkpoint {path} not found", path=path)
    try:
        with open(path) as fh:
            doc = json.load(fh)
        arch = ArchConfig.from_dict(doc["arch"])
        weights = {k: np.array(v, dtype=float) for k, v in doc["weights"].items()}
        model = TrainedModel(arch, weights, tuple(doc["channels"]),
                             np.array(doc["norm_stats"]["mean"], dtype=float),
                             np.array(doc["norm_stats"]["std"], dtype=float),
                             tuple(doc.get("classes", CLASSES)), doc.get("metadata", {}))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise DatasetLoadError(f"corrupt checkpoint {path}: {exc}", path=path) from exc
    expected = param_shapes(arch)
    for name, shape in expected.items():
        if name not in weights or weights[name].shape != shape:
            raise ValidationError(f"checkpoint {path}: weight {name} missing or not of shape {shape}")
    if model.norm_mean.shape != (arch.n_params,) or model.norm_std.shape != (arch.n_params,):
        raise ValidationError(f"checkpoint {path}: norm_stats must have {arch.n_params} entries")
    return model, doc.get("optimizer")


def load_model(path) -> TrainedModel:
    return load_checkpoint(path)[0]
