"""Frame-level micro-AUC, ROC sweep and a ranked comparison of runs."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ComparisonError, InvalidInputError, UndefinedAUCError
from .scores import FrameScoreSeries


@dataclass(frozen=True)
class LabeledScores:
    scores: np.ndarray
    labels: np.ndarray
    offsets: tuple[tuple[str, int], ...] = ()  # (video id, first index) per video

    def __post_init__(self):
        s = np.asarray(self.scores, dtype=np.float64)
        y = np.asarray(self.labels)
        if s.shape != y.shape or s.ndim != 1:
            raise InvalidInputError("scores and labels must be 1-D and equally long")
        if not np.all(np.isin(y, (0, 1))):
            raise InvalidInputError("labels must be 0 or 1")
        if np.isnan(s).any():
            raise InvalidInputError("scores contain MISSING values; fill them first")
        object.__setattr__(self, "scores", s)
        object.__setattr__(self, "labels", y.astype(np.int8))

    @classmethod
    def from_series(cls, series: Sequence[FrameScoreSeries], labels: Sequence) -> "LabeledScores":
        """Concatenate videos in the given order."""
        if len(series) != len(labels):
            raise InvalidInputError("one label vector per series is required")
        offsets, pos = [], 0
        for s, y in zip(series, labels):
            if len(s) != len(y):
                raise InvalidInputError(f"{s.video_id}: {len(s)} scores but {len(y)} labels")
            offsets.append((s.video_id, pos))
            pos += len(s)
        if not series:
            return cls(np.zeros(0), np.zeros(0, dtype=np.int8))
        return cls(np.concatenate([s.scores for s in series]),
                   np.concatenate([np.asarray(y) for y in labels]), tuple(offsets))


def _class_counts(ls: LabeledScores):
    pos = int(ls.labels.sum())
    neg = len(ls.labels) - pos
    if pos == 0 or neg == 0:
        raise UndefinedAUCError("AUC needs both positive and negative frames")
    return pos, neg


def micro_auc(ls: LabeledScores) -> float:
    """Mann-Whitney U / (n+ n-) with midranks for ties.

    Works in doubled integer ranks so the statistic is an exact integer
    before the final division.
    """
    n_pos, n_neg = _class_counts(ls)
    order = np.argsort(ls.scores, kind="mergesort")
    s = ls.scores[order]
    starts = np.flatnonzero(np.r_[True, s[1:] != s[:-1]])
    ends = np.r_[starts[1:], len(s)]
    # doubled midrank of a tie block [a, b) with 1-based ranks: a+1 + b
    twice_rank = np.repeat(starts + 1 + ends, ends - starts)
    pos_sorted = ls.labels[order] == 1
    twice_sum = int(twice_rank[pos_sorted].sum())
    twice_u = twice_sum - n_pos * (n_pos + 1)
    return twice_u / (2 * n_pos * n_neg)


@dataclass(frozen=True)
class RocCurve:
    fpr: np.ndarray
    tpr: np.ndarray
    auc: float
    thresholds: np.ndarray = field(default_factory=lambda: np.zeros(0))


def roc_curve(ls: LabeledScores) -> RocCurve:
    """One point per distinct threshold, sweeping from the highest score down."""
    n_pos, n_neg = _class_counts(ls)
    order = np.argsort(-ls.scores, kind="mergesort")
    s = ls.scores[order]
    y = ls.labels[order].astype(np.int64)
    last = np.flatnonzero(np.r_[s[1:] != s[:-1], True])
    tp = np.r_[0, np.cumsum(y)[last]]
    fp = np.r_[0, np.cumsum(1 - y)[last]]
    # trapezoids in integer units: sum (fp_i - fp_{i-1}) * (tp_i + tp_{i-1}) / 2
    twice_area = int(np.sum(np.diff(fp) * (tp[1:] + tp[:-1])))
    return RocCurve(fp / n_neg, tp / n_pos, twice_area / (2 * n_pos * n_neg), s[last])


@dataclass(frozen=True)
class ComparisonReport:
    rows: tuple[tuple[str, float], ...]  # sorted by AUC descending

    @property
    def best(self) -> str:
        return self.rows[0][0]

    def text(self) -> str:
        width = max(len("run"), *(len(n) for n, _ in self.rows))
        lines = [f"{'run':<{width}}  {'AUC (%)':>8}", "-" * (width + 10)]
        for i, (name, auc) in enumerate(self.rows):
            mark = "  *" if i == 0 else ""
            lines.append(f"{name:<{width}}  {100 * auc:8.2f}{mark}")
        return "\n".join(lines) + "\n"

    def csv(self) -> str:
        buf = io.StringIO()
        buf.write("rank,run,auc,best\n")
        for i, (name, auc) in enumerate(self.rows):
            buf.write(f"{i + 1},{name},{auc:.6f},{int(i == 0)}\n")
        return buf.getvalue()


def compare_runs(runs: Sequence[tuple[str, LabeledScores]]) -> ComparisonReport:
    if not runs:
        raise ComparisonError("no runs to compare")
    ref = runs[0][1].labels
    for name, ls in runs[1:]:
        if ls.labels.shape != ref.shape or not np.array_equal(ls.labels, ref):
            raise ComparisonError(f"run {name!r} is evaluated on different labels")
    scored = [(name, micro_auc(ls)) for name, ls in runs]
    # stable: ties keep input order
    scored.sort(key=lambda r: -r[1])
    return ComparisonReport(tuple(scored))
