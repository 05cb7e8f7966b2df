"""Post-hoc attribution: Grad-CAM++ for the size output, LIME for the location output.

Grad-CAM++ weighs the feature maps of the last convolutional layer with
pixel-wise coefficients built from the gradient of the raw size output,
then upsamples the map bilinearly to (parameters, time).

LIME treats each input parameter as one interpretable feature.  A
perturbation switches a subset of parameters "off" by replacing the whole
series with its training-split mean, the model is queried for the
probability of the originally predicted class, and a kernel-weighted ridge
regression on the binary masks gives one signed weight per parameter.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import numerics as nx
from .datagen import TransientCase
from .errors import DatasetLoadError, NumericError, UnsupportedArchitectureError, ValidationError
from .model import (TrainedModel, check_channels, forward_batch, heads_from_features, rows_independent,
                    stack_cases, trunk_features)
from .numerics import Rng

SOURCES = ("grad_campp", "lime_broadcast")


@dataclass(eq=False)
class SaliencyMap:
    case_id: int
    values: np.ndarray      # P x T, non-negative, max 1 or all zero
    source: str = "grad_campp"
    channels: tuple[str, ...] = ()


@dataclass
class LimeExplanation:
    case_id: int
    weights: np.ndarray     # one signed weight per parameter
    intercept: float
    r2: float
    n_perturb: int
    target_class: int = 0
    channels: tuple[str, ...] = ()

    def as_dict(self) -> dict[str, float]:
        return {n: float(w) for n, w in zip(self.channels, self.weights)}


@dataclass
class InterpretConfig:
    n_perturb: int = 500
    kernel_width: float | None = None   # None -> 0.75 * sqrt(P)
    ridge: float = 1e-3
    batch_size: int = 250


def max_normalize(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    m = a.max(initial=0.0)
    return a / m if m > 0 else np.zeros_like(a)


def resize_bilinear(a: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    """Separable linear interpolation with half-pixel centers (edges clamped)."""
    out = np.asarray(a, dtype=float)
    for axis, n_out in enumerate(shape):
        n_in = out.shape[axis]
        if n_in == n_out:
            continue
        src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
        src = np.clip(src, 0.0, n_in - 1)
        i0 = np.floor(src).astype(int)
        i1 = np.minimum(i0 + 1, n_in - 1)
        w = src - i0
        shape_w = [1] * out.ndim
        shape_w[axis] = n_out
        w = w.reshape(shape_w)
        out = np.take(out, i0, axis=axis) * (1.0 - w) + np.take(out, i1, axis=axis) * w
    return out


# --------------------------------------------------------------------------
# Grad-CAM++

def gradcampp_weights(acts: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """Per-feature-map weights from activations and gradients of shape (..., F, H, W)."""
    g2 = grads * grads
    g3 = g2 * grads
    total = acts.sum(axis=(-2, -1), keepdims=True)
    denom = 2.0 * g2 + total * g3
    safe = np.where(denom != 0.0, denom, 1.0)
    alpha = np.where(denom != 0.0, g2 / safe, 0.0)
    return (alpha * np.maximum(grads, 0.0)).sum(axis=(-2, -1))


def gradcampp_map(acts: np.ndarray, grads: np.ndarray, out_shape: tuple[int, int]) -> np.ndarray:
    """Normalized (P, T) map for a single case from (F, P', T') activations and gradients."""
    w = gradcampp_weights(acts, grads)
    cam = np.maximum(np.tensordot(w, acts, axes=([0], [0])), 0.0)
    return max_normalize(resize_bilinear(cam, out_shape))


def grad_campp_batch(model: TrainedModel, cases: Sequence[TransientCase],
                     batch_size: int = 32) -> list[SaliencyMap]:
    if model.arch.kind == "mlp_baseline":
        raise UnsupportedArchitectureError("Grad-CAM++ needs a convolutional trunk; "
                                           "mlp_baseline has none")
    out = []
    shape = (model.arch.n_params, model.arch.n_times)
    for start in range(0, len(cases), batch_size):
        chunk = cases[start:start + batch_size]
        res = forward_batch(model, stack_cases(model, chunk), record=True)
        # cases do not interact at inference, so one backward pass of the summed
        # size outputs yields every case's own gradient
        grads = nx.backward(res.graph, nx.sum(res.size), wrt=[res.last_conv])[res.last_conv]
        acts = res.last_conv.data
        for i, c in enumerate(chunk):
            out.append(SaliencyMap(c.case_id, gradcampp_map(acts[i], grads[i], shape),
                                   "grad_campp", tuple(model.channels)))
    return out


def grad_campp(model: TrainedModel, case: TransientCase, target: str = "size") -> SaliencyMap:
    if target != "size":
        raise ValidationError("Grad-CAM++ attributes the size output only")
    if model.arch.kind != "mlp_baseline":
        check_channels(model, case)
    return grad_campp_batch(model, [case])[0]


# --------------------------------------------------------------------------
# LIME

def _model_probs(model: TrainedModel, batch_size: int) -> Callable[[np.ndarray], np.ndarray]:
    def f(values: np.ndarray) -> np.ndarray:
        out = []
        for start in range(0, len(values), batch_size):
            res = forward_batch(model, values[start:start + batch_size])
            out.append(nx.softmax(res.logits, axis=-1).data)
        return np.concatenate(out)
    return f


def _row_masked_probs(model: TrainedModel, values: np.ndarray, fill: np.ndarray,
                      batch_size: int) -> Callable[[np.ndarray], np.ndarray]:
    """Class probabilities for row-masked copies of ``values`` without rerunning the trunk.

    Valid only when rows pass through the trunk independently: each row's
    features are then either those of the original row or those of the fill
    row, and a masked input can be recognized row by row.
    """
    both = np.stack([values, np.repeat(fill[:, None], values.shape[1], axis=1)])
    feat_keep, feat_fill = trunk_features(model, both)

    def f(batch: np.ndarray) -> np.ndarray:
        keep = np.all(batch == values[None], axis=2)
        filled = np.all(batch == fill[None, :, None], axis=2)
        if not np.all(keep | filled):
            return _model_probs(model, batch_size)(batch)
        feats = np.where(keep[:, None, :], feat_keep[None], feat_fill[None])
        logits, _ = heads_from_features(model, feats)
        return nx.softmax(logits, axis=-1).data
    return f


def weighted_ridge(z: np.ndarray, y: np.ndarray, sw: np.ndarray, ridge: float):
    """Weighted least squares with an unpenalized intercept; returns (coef, intercept, r2)."""
    sw = np.asarray(sw, dtype=float)
    tot = sw.sum()
    zbar = sw @ z / tot
    ybar = sw @ y / tot
    zc, yc = z - zbar, y - ybar
    gram = (zc * sw[:, None]).T @ zc + ridge * np.eye(z.shape[1])
    coef = np.linalg.solve(gram, (zc * sw[:, None]).T @ yc)
    intercept = float(ybar - zbar @ coef)
    resid = y - (z @ coef + intercept)
    ss_res = float(sw @ (resid * resid))
    ss_tot = float(sw @ (yc * yc))
    if ss_tot > 0:
        r2 = 1.0 - ss_res / ss_tot
    else:
        r2 = 1.0 if ss_res == 0 else -math.inf
    return coef, intercept, r2


def sample_masks(n: int, p: int, rng: Rng) -> np.ndarray:
    """First row keeps every parameter; the others keep each one with probability 0.5."""
    z = (rng.random((n, p)) < 0.5).astype(float)
    z[0] = 1.0
    return z


def lime_explain(model, case: TransientCase, n_perturb: int = 500,
                 kernel_width: float | None = None, rng: Rng | None = None,
                 ridge: float = 1e-3, fill: np.ndarray | None = None,
                 batch_size: int = 250) -> LimeExplanation:
    """Channel-masking LIME for the predicted-class probability.

    ``model`` is a :class:`TrainedModel` or any callable mapping a (N, P, T)
    array to (N, C) class probabilities; for callables ``fill`` gives the
    per-parameter replacement value (default 0).
    """
    if isinstance(model, TrainedModel):
        check_channels(model, case)
        probs_fn = _model_probs(model, batch_size)
        fill = model.norm_mean if fill is None else fill
    else:
        probs_fn = model
    values = case.values
    p = values.shape[0]
    fill = np.zeros(p) if fill is None else np.asarray(fill, dtype=float)
    if n_perturb < p + 2:
        raise ValidationError(f"n_perturb={n_perturb} must be at least P + 2 = {p + 2}")
    width = 0.75 * math.sqrt(p) if kernel_width is None else float(kernel_width)
    rng = rng or Rng(0)

    if isinstance(model, TrainedModel) and rows_independent(model.arch):
        probs_fn = _row_masked_probs(model, values, fill, batch_size)
    target = int(np.argmax(probs_fn(values[None])[0]))
    z = None
    for attempt in range(2):
        z = sample_masks(n_perturb, p, rng.child(attempt) if attempt else rng)
        if np.ptp(z, axis=0).any():
            break
    else:
        raise NumericError("LIME masks are degenerate (all identical) after resampling")

    keep = z[:, :, None]
    perturbed = values[None] * keep + fill[None, :, None] * (1.0 - keep)
    y = probs_fn(perturbed)[:, target]
    dist2 = p - z.sum(axis=1)               # squared Euclidean distance to the all-ones mask
    sw = np.exp(-dist2 / width ** 2)
    coef, intercept, r2 = weighted_ridge(z, y, sw, ridge)
    channels = tuple(getattr(case, "names", ()))
    return LimeExplanation(case.case_id, coef, intercept, r2, n_perturb, target, channels)


def lime_broadcast(lime: LimeExplanation, n_times: int) -> SaliencyMap:
    row = np.abs(np.asarray(lime.weights, dtype=float))
    values = max_normalize(np.repeat(row[:, None], n_times, axis=1))
    return SaliencyMap(lime.case_id, values, "lime_broadcast", lime.channels)


def explain_case(model: TrainedModel, case: TransientCase, config: InterpretConfig | None = None,
                 rng: Rng | None = None) -> tuple[SaliencyMap, LimeExplanation]:
    config = config or InterpretConfig()
    smap = grad_campp(model, case)
    lime = lime_explain(model, case, config.n_perturb, config.kernel_width, rng or Rng(0),
                        config.ridge, batch_size=config.batch_size)
    return smap, lime


def explain_cases(model: TrainedModel, cases: Sequence[TransientCase], config: InterpretConfig,
                  rng: Rng) -> list[tuple[SaliencyMap, LimeExplanation]]:
    """Attribution for many cases; LIME for case ``i`` draws from ``rng.child(case_id)``."""
    for c in cases:
        check_channels(model, c)
    maps = grad_campp_batch(model, cases)
    out = []
    for smap, case in zip(maps, cases):
        lime = lime_explain(model, case, config.n_perturb, config.kernel_width,
                            rng.child(case.case_id), config.ridge, batch_size=config.batch_size)
        out.append((smap, lime))
    return out


# --------------------------------------------------------------------------
# files

def attribution_filename(case_id: int) -> str:
    return f"attr_{case_id:04d}.json"


def _rows(a: np.ndarray) -> str:
    return "[\n" + ",\n".join("[" + ",".join(format(float(v), ".17g") for v in r) + "]"
                              for r in a) + "\n]"


def save_attribution(directory, smap: SaliencyMap, lime: LimeExplanation) -> Path:
    if smap.case_id != lime.case_id:
        raise ValidationError(f"case_id mismatch: map {smap.case_id} vs LIME {lime.case_id}")
    path = Path(directory) / attribution_filename(smap.case_id)
    path.parent.mkdir(parents=True, exist_ok=True)
    head = {
        "case_id": smap.case_id,
        "source": smap.source,
        "channels": list(smap.channels),
        "lime": {
            "weights": {n: float(format(float(w), ".17g")) for n, w in zip(lime.channels, lime.weights)},
            "intercept": lime.intercept,
            "r2": lime.r2 if math.isfinite(lime.r2) else None,
            "n_perturb": lime.n_perturb,
            "target_class": lime.target_class,
        },
        "map": "@@map@@",
    }
    text = json.dumps(head, indent=1, sort_keys=True).replace('"@@map@@"', _rows(smap.values))
    with open(path, "w", newline="\n") as fh:
        fh.write(text + "\n")
    return path


def load_attribution(path) -> tuple[SaliencyMap, LimeExplanation]:
    path = Path(path)
    try:
        with open(path) as fh:
            d = json.load(fh)
        channels = tuple(d["channels"])
        smap = SaliencyMap(int(d["case_id"]), np.array(d["map"], dtype=float), d["source"], channels)
        lw = d["lime"]["weights"]
        weights = np.array([lw[n] for n in channels], dtype=float)
        r2 = d["lime"]["r2"]
        lime = LimeExplanation(int(d["case_id"]), weights, float(d["lime"]["intercept"]),
                               -math.inf if r2 is None else float(r2), int(d["lime"]["n_perturb"]),
                               int(d["lime"].get("target_class", 0)), channels)
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise DatasetLoadError(f"cannot read attribution file {path}: {exc}", path=path) from exc
    if smap.values.shape[0] != len(channels):
        raise DatasetLoadError(f"attribution file {path}: map has {smap.values.shape[0]} rows "
                               f"for {len(channels)} channels", path=path)
    return smap, lime
