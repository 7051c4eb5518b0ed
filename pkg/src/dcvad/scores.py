"""Per-frame anomaly score series shared by both branches and fusion."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FrameScoreSeries:
    """Canonically oriented scores (higher = more anomalous); NaN marks MISSING."""

    video_id: str
    scores: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "scores", np.asarray(self.scores, dtype=np.float64))
        if self.scores.ndim != 1:
            raise ValueError("scores must be one-dimensional")

    def __len__(self) -> int:
        return len(self.scores)

    @property
    def missing(self) -> np.ndarray:
        return np.isnan(self.scores)

    @classmethod
    def empty(cls, video_id: str, n_frames: int) -> "FrameScoreSeries":
        return cls(video_id, np.full(n_frames, np.nan))


def min_over_coverage(spans, values, n_frames: int) -> np.ndarray:
    """Per frame, the minimum of ``values[i]`` over spans ``[start, end)`` covering it (NaN if none)."""
    out = np.full(n_frames, np.inf)
    for (start, end), v in zip(spans, values):
        lo, hi = max(int(start), 0), min(int(end), n_frames)
        if lo < hi:
            np.minimum(out[lo:hi], v, out=out[lo:hi])
    out[np.isinf(out)] = np.nan
    return out
