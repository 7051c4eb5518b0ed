"""Late fusion of the two branches' per-frame scores."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import AlignmentError, ConfigError
from .scores import FrameScoreSeries
from .synth import HUMAN, DetectionBox

WO_HUMAN = "WO_HUMAN"
W_HUMAN = "W_HUMAN"
MODES = (WO_HUMAN, W_HUMAN)
NORMALIZATIONS = ("none", "minmax", "zscore")


@dataclass(frozen=True)
class FusionConfig:
    mode: str = W_HUMAN
    normalization: str = "minmax"
    missing_default: float = 0.0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"fusion mode must be one of {MODES}, got {self.mode!r}")
        if self.normalization not in NORMALIZATIONS:
            raise ConfigError(f"normalization must be one of {NORMALIZATIONS}, got {self.normalization!r}")

    @property
    def jigsaw_scope(self) -> str:
        from .jigsaw import ALL_OBJECTS, NON_HUMAN_ONLY
        return NON_HUMAN_ONLY if self.mode == WO_HUMAN else ALL_OBJECTS


@dataclass(frozen=True)
class FusedResult:
    fused: FrameScoreSeries
    skeleton: np.ndarray  # provenance: the exact addends
    jigsaw: np.ndarray

    @property
    def video_id(self) -> str:
        return self.fused.video_id


def fill_missing(series: FrameScoreSeries, default: float = 0.0) -> FrameScoreSeries:
    return FrameScoreSeries(series.video_id, np.where(series.missing, default, series.scores))


def normalize_scores(series: Sequence[FrameScoreSeries], method: str = "minmax") -> list[FrameScoreSeries]:
    """Rescale a whole test set with statistics of its concatenation."""
    if method not in NORMALIZATIONS:
        raise ConfigError(f"unknown normalization {method!r}")
    series = list(series)
    if method == "none" or not series:
        return series
    allv = np.concatenate([s.scores for s in series])
    if method == "minmax":
        lo, span = allv.min(), allv.max() - allv.min()
        f = (lambda x: np.zeros_like(x)) if span == 0 else (lambda x: (x - lo) / span)
    else:
        mu, sd = allv.mean(), allv.std()
        f = (lambda x: np.zeros_like(x)) if sd == 0 else (lambda x: (x - mu) / sd)
    return [FrameScoreSeries(s.video_id, f(s.scores)) for s in series]


def fuse(skeleton: FrameScoreSeries, jigsaw: FrameScoreSeries, config: FusionConfig | None = None) -> FusedResult:
    if skeleton.video_id != jigsaw.video_id:
        raise AlignmentError(f"video ids differ: {skeleton.video_id!r} vs {jigsaw.video_id!r}")
    if len(skeleton) != len(jigsaw):
        raise AlignmentError(f"lengths differ: {len(skeleton)} vs {len(jigsaw)}")
    a, b = skeleton.scores.copy(), jigsaw.scores.copy()
    return FusedResult(FrameScoreSeries(skeleton.video_id, a + b), a, b)


def select_mode_inputs(config: FusionConfig, detections: Sequence[DetectionBox]) -> list[DetectionBox]:
    if config.mode == WO_HUMAN:
        return [d for d in detections if d.cls != HUMAN]
    return list(detections)


def fuse_test_set(skeleton: Sequence[FrameScoreSeries], jigsaw: Sequence[FrameScoreSeries],
                  config: FusionConfig) -> list[FusedResult]:
    """fill -> normalize per branch over the whole set -> per-video sum."""
    if [s.video_id for s in skeleton] != [s.video_id for s in jigsaw]:
        raise AlignmentError("branches cover different videos")
    sk = normalize_scores([fill_missing(s, config.missing_default) for s in skeleton], config.normalization)
    jg = normalize_scores([fill_missing(s, config.missing_default) for s in jigsaw], config.normalization)
    return [fuse(a, b, config) for a, b in zip(sk, jg)]
