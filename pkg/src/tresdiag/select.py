"""From per-case attributions to a ranked, outlier-filtered parameter selection."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, ShapeError, ValidationError
from .interpret import LimeExplanation, SaliencyMap, lime_broadcast

log = logging.getLogger(__name__)


@dataclass(eq=False)
class LumpedSaliency:
    values: np.ndarray
    n_cases: int
    channels: tuple[str, ...] = ()


@dataclass
class OutlierResult:
    kept: np.ndarray
    removed: np.ndarray          # indices into the input
    fences: tuple[float, float]
    filtered: bool = True        # False when too few samples to apply the rule


@dataclass(eq=False)
class SignificanceRanking:
    channels: tuple[str, ...]
    scores: np.ndarray                    # per parameter, after outlier removal
    samples: np.ndarray                   # P x N per-case scores
    retained: list[np.ndarray]            # per parameter, the samples kept
    removed: list[np.ndarray]             # per parameter, indices of removed samples
    order: list[int]                      # parameter indices, most significant first
    k: int
    selected: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "selected": list(self.selected),
            "ranking": [
                {"rank": r + 1, "name": self.channels[i], "score": float(self.scores[i]),
                 "retained": [float(v) for v in self.retained[i]],
                 "removed_count": int(len(self.removed[i]))}
                for r, i in enumerate(self.order)
            ],
        }


def combine_case_attribution(smap: SaliencyMap, lime: LimeExplanation,
                             weights: tuple[float, float] = (0.5, 0.5)) -> tuple[np.ndarray, np.ndarray]:
    """Combined (P, T) map and the per-parameter case score (row sums over time)."""
    if smap.case_id != lime.case_id:
        raise ValidationError(f"case_id mismatch: map {smap.case_id} vs LIME {lime.case_id}")
    broad = lime_broadcast(lime, smap.values.shape[1]).values
    if broad.shape != smap.values.shape:
        raise ShapeError("Grad-CAM++ map and LIME weights disagree in parameter count",
                         smap.values.shape, broad.shape)
    combined = weights[0] * smap.values + weights[1] * broad
    return combined, combined.sum(axis=1)


def aggregate(case_maps) -> LumpedSaliency:
    """Elementwise sum of per-case maps, reduced in ascending case_id order.

    ``case_maps`` is a mapping case_id -> (P, T) array or a sequence of
    :class:`SaliencyMap`.
    """
    if isinstance(case_maps, dict):
        items = sorted(case_maps.items())
    else:
        items = sorted(((m.case_id, m.values) for m in case_maps), key=lambda kv: kv[0])
    if not items:
        raise ValidationError("aggregate needs at least one map")
    shape = np.shape(items[0][1])
    total = np.zeros(shape)
    for cid, m in items:
        if np.shape(m) != shape:
            raise ShapeError(f"map of case {cid} has a different shape", np.shape(m), shape)
        total = total + m
    return LumpedSaliency(total, len(items))


def remove_outliers_iqr(samples) -> OutlierResult:
    """Drop points outside [Q1 - 1.5 IQR, Q3 + 1.5 IQR].

    Quartiles use linear interpolation between order statistics (numpy's
    default percentile rule); for [1, 2, 3, 4, 100] this gives Q1 = 2, Q3 = 4.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 4:
        log.warning("IQR filter needs >= 4 samples, got %d; returning them unfiltered", x.size)
        return OutlierResult(x.copy(), np.array([], dtype=int), (-np.inf, np.inf), filtered=False)
    q1, q3 = np.percentile(x, [25, 75])
    iqr = q3 - q1
    lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    keep = (x >= lo) & (x <= hi)
    return OutlierResult(x[keep], np.flatnonzero(~keep), (float(lo), float(hi)))


def rank_and_select(case_scores, k: int = 15, channels: Sequence[str] | None = None) -> SignificanceRanking:
    """Rank parameters by the sum of their outlier-filtered per-case scores.

    ``case_scores`` is P x N (one column per training case).  Ties are broken
    by the lower parameter index.
    """
    s = np.asarray(case_scores, dtype=float)
    if s.ndim != 2:
        raise ShapeError("case_scores must be P x N", s.shape)
    p = s.shape[0]
    if k <= 0:
        raise ConfigError(f"k must be positive, got {k}")
    if k > p:
        raise ConfigError(f"k={k} exceeds the number of parameters ({p})")
    channels = tuple(channels) if channels is not None else tuple(f"param_{i}" for i in range(p))
    retained, removed, scores = [], [], np.zeros(p)
    for i in range(p):
        res = remove_outliers_iqr(s[i])
        retained.append(res.kept)
        removed.append(res.removed)
        scores[i] = float(np.sum(res.kept))
    order = sorted(range(p), key=lambda i: (-scores[i], i))
    return SignificanceRanking(channels, scores, s, retained, removed, order, k,
                               [channels[i] for i in order[:k]])


def select_from_attributions(pairs: Sequence[tuple[SaliencyMap, LimeExplanation]], k: int = 15,
                             weights: tuple[float, float] = (0.5, 0.5)):
    """Run combine -> aggregate -> IQR -> rank over (map, LIME) pairs.

    Returns (LumpedSaliency, SignificanceRanking).
    """
    if not pairs:
        raise ValidationError("no attributions to select from")
    pairs = sorted(pairs, key=lambda pr: pr[0].case_id)
    channels = pairs[0][0].channels
    combined, scores = {}, []
    for smap, lime in pairs:
        if smap.channels != channels:
            raise ValidationError(f"case {smap.case_id} was attributed over different channels")
        m, sc = combine_case_attribution(smap, lime, weights)
        combined[smap.case_id] = m
        scores.append(sc)
    lumped = aggregate(combined)
    lumped.channels = tuple(channels)
    ranking = rank_and_select(np.stack(scores, axis=1), k, channels)
    return lumped, ranking


def write_selection(directory, lumped: LumpedSaliency, ranking: SignificanceRanking) -> dict[str, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {
        "significance": directory / "significance.json",
        "lumped": directory / "lumped_saliency.csv",
        "selected": directory / "selected_channels.txt",
    }
    with open(paths["significance"], "w", newline="\n") as fh:
        json.dump(ranking.to_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(paths["lumped"], "w", newline="\n") as fh:
        for row in lumped.values:
            fh.write(",".join(format(float(v), ".17g") for v in row) + "\n")
    with open(paths["selected"], "w", newline="\n") as fh:
        fh.write("\n".join(ranking.selected) + "\n")
    return paths


def read_channel_file(path) -> list[str]:
    """Channel names, one per line; blank lines and '#' comments are ignored."""
    with open(path) as fh:
        names = [ln.strip() for ln in fh if ln.strip() and not ln.lstrip().startswith("#")]
    return names
