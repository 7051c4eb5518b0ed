"""Skeleton branch: windowed pose tracks scored by an affine-coupling flow.

Each fixed-length window of a track is normalized (root-centred and
scale-normalized), flattened, and given an exact log-likelihood by a
stack of affine coupling layers over a standard-normal base. A frame's
raw score is the lowest log-likelihood among the windows covering it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics as nx
from .errors import EmptyTrainingSetError, InvalidInputError, NumericOverflowError
from .numerics import OptimState, ParamSet, Tensor, adam_step, gaussian_log_density, no_grad
from .scores import FrameScoreSeries, min_over_coverage
from .synth import HIP_JOINTS, SkeletonTrack

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class PoseWindow:
    video_id: str
    person_id: int
    start: int
    length: int
    data: np.ndarray  # (L, K, 2)

    @property
    def span(self) -> tuple[int, int]:
        return self.start, self.start + self.length

    def flat(self) -> np.ndarray:
        return self.data.reshape(-1)


def normalize_window(kps: np.ndarray, root_joints: Sequence[int] = HIP_JOINTS) -> np.ndarray:
    """Centre on the mean root position and divide by the mean skeleton radius.

    Everything is computed from differences to one reference keypoint, so a
    translation that is exact in floating point leaves the output bit-identical.
    """
    k = kps.shape[1]
    joints = [j for j in root_joints if j < k] or [0]
    d = kps - kps[0, joints[0]]
    d = d - d[:, joints].mean(axis=1).mean(axis=0)
    centred = d - d.mean(axis=1, keepdims=True)
    scale = np.sqrt(np.mean(np.sum(centred * centred, axis=-1)))
    return d / scale if scale > 0 else d


def _consecutive_runs(frames: np.ndarray):
    if len(frames) == 0:
        return
    breaks = np.flatnonzero(np.diff(frames) != 1) + 1
    bounds = np.concatenate([[0], breaks, [len(frames)]])
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        yield lo, hi


def segment_tracks(tracks: Sequence[SkeletonTrack], length: int = 24, stride: int = 1, *,
                   video_id: str = "", normalize: bool = True,
                   root_joints: Sequence[int] = HIP_JOINTS) -> list[PoseWindow]:
    """All windows of ``length`` consecutive present frames, every ``stride`` frames within a run."""
    if length < 2 or stride < 1:
        raise InvalidInputError("need length >= 2 and stride >= 1")
    windows, short = [], 0
    for tr in tracks:
        frames = np.asarray(tr.frames)
        before = len(windows)
        for lo, hi in _consecutive_runs(frames):
            for s in range(lo, hi - length + 1, stride):
                kps = tr.keypoints[s:s + length]
                data = normalize_window(kps, root_joints) if normalize else np.array(kps, dtype=np.float64)
                windows.append(PoseWindow(video_id, tr.person_id, int(frames[s]), length, data))
        short += len(windows) == before
    if short:
        logger.info("%d of %d tracks yielded no %d-frame window", short, len(tracks), length)
    return windows


def coupling_masks(dim: int, n_layers: int, row_len: int | None = None) -> list[np.ndarray]:
    """Alternating checkerboard masks; True marks the conditioning (pass-through) half."""
    idx = np.arange(dim)
    if row_len:
        parity = idx // row_len + idx % row_len
    else:
        parity = idx
    return [((parity + i) % 2 == 0) for i in range(n_layers)]


class FlowModel:
    """Stack of affine coupling layers with bounded log-scales."""

    def __init__(self, dim: int, n_layers: int = 8, hidden: int = 64, s_max: float = 4.0,
                 row_len: int | None = None, params: ParamSet | None = None, *,
                 seed: int = 0, init: str = "identity", init_scale: float = 1.0):
        if dim < 2 or n_layers < 1:
            raise InvalidInputError("flow needs dim >= 2 and at least one layer")
        self.dim, self.n_layers, self.hidden, self.s_max, self.row_len = dim, n_layers, hidden, s_max, row_len
        self.masks = coupling_masks(dim, n_layers, row_len)
        self.cond_idx = [np.flatnonzero(m) for m in self.masks]
        self.trans_idx = [np.flatnonzero(~m) for m in self.masks]
        self.params = params if params is not None else self._init_params(seed, init, init_scale)

    def _init_params(self, seed: int, init: str, init_scale: float) -> ParamSet:
        rng = np.random.default_rng(seed)
        vals = {}
        for i in range(self.n_layers):
            nc, nt, h = len(self.cond_idx[i]), len(self.trans_idx[i]), self.hidden
            for net in ("s", "t"):
                vals[f"{i}.{net}.w1"] = rng.normal(0, 1 / np.sqrt(nc), (nc, h))
                vals[f"{i}.{net}.b1"] = np.zeros(h)
                if init == "identity":
                    vals[f"{i}.{net}.w2"] = np.zeros((h, nt))
                    vals[f"{i}.{net}.b2"] = np.zeros(nt)
                elif init == "random":
                    vals[f"{i}.{net}.w2"] = rng.normal(0, init_scale / np.sqrt(h), (h, nt))
                    vals[f"{i}.{net}.b2"] = rng.normal(0, 0.1 * init_scale, nt)
                else:
                    raise InvalidInputError(f"unknown init {init!r}")
        return ParamSet(vals)

    def config(self) -> dict:
        return {"dim": self.dim, "n_layers": self.n_layers, "hidden": self.hidden,
                "s_max": self.s_max, "row_len": self.row_len}

    def with_params(self, params: ParamSet) -> "FlowModel":
        return FlowModel(**self.config(), params=params)

    def _nets(self, i: int, xa, p):
        # both first layers in one matmul; the hidden units stay disjoint
        h = self.hidden
        left, right = np.arange(h), np.arange(h, 2 * h)
        w1 = nx.scatter_columns([(p[f"{i}.s.w1"], left), (p[f"{i}.t.w1"], right)], 2 * h)
        b1 = nx.scatter_columns([(p[f"{i}.s.b1"], left), (p[f"{i}.t.b1"], right)], 2 * h)
        hidden = nx.tanh(xa @ w1 + b1)
        raw = nx.take_columns(hidden, left) @ p[f"{i}.s.w2"] + p[f"{i}.s.b2"]
        s = nx.tanh(raw * (1.0 / self.s_max)) * self.s_max
        t = nx.take_columns(hidden, right) @ p[f"{i}.t.w2"] + p[f"{i}.t.b2"]
        return s, t

    def forward(self, x: Tensor, params: ParamSet | None = None) -> tuple[Tensor, Tensor]:
        """Map a (B, D) batch to latents; returns (z, per-row log|det J|)."""
        p = params if params is not None else self.params
        log_det = None
        for i in range(self.n_layers):
            xa = nx.take_columns(x, self.cond_idx[i])
            xb = nx.take_columns(x, self.trans_idx[i])
            s, t = self._nets(i, xa, p)
            zb = xb * nx.exp(s) + t
            x = nx.scatter_columns([(xa, self.cond_idx[i]), (zb, self.trans_idx[i])], self.dim)
            ld = s.sum(axis=-1)
            log_det = ld if log_det is None else log_det + ld
        return x, log_det

    def log_likelihood(self, x: Tensor, params: ParamSet | None = None) -> Tensor:
        z, log_det = self.forward(x, params)
        return gaussian_log_density(z) + log_det

    def inverse(self, z: np.ndarray) -> np.ndarray:
        x = np.array(z, dtype=np.float64)
        with no_grad():
            for i in reversed(range(self.n_layers)):
                xa = Tensor(x[..., self.cond_idx[i]])
                s, t = self._nets(i, xa, self.params)
                x[..., self.trans_idx[i]] = (x[..., self.trans_idx[i]] - t.data) * np.exp(-s.data)
        return x


def _as_matrix(x, dim: int) -> tuple[np.ndarray, bool]:
    a = np.asarray(x, dtype=np.float64)
    single = a.ndim == 1
    a = a.reshape(1, -1) if single else a.reshape(a.shape[0], -1)
    if a.shape[1] != dim:
        raise InvalidInputError(f"expected inputs of dimension {dim}, got {a.shape[1]}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("flow input must be finite")
    return a, single


def flow_forward(model: FlowModel, x) -> tuple[np.ndarray, np.ndarray | float]:
    a, single = _as_matrix(x, model.dim)
    with no_grad():
        z, log_det = model.forward(Tensor(a))
    if not (np.all(np.isfinite(z.data)) and np.all(np.isfinite(log_det.data))):
        raise NumericOverflowError("non-finite value inside the flow")
    if single:
        return z.data[0], float(log_det.data[0])
    return z.data, log_det.data


def flow_inverse(model: FlowModel, z) -> np.ndarray:
    a, single = _as_matrix(z, model.dim)
    x = model.inverse(a)
    if not np.all(np.isfinite(x)):
        raise NumericOverflowError("non-finite value inside the inverse flow")
    return x[0] if single else x


def log_likelihood(model: FlowModel, x, batch: int = 1024) -> np.ndarray:
    a, _ = _as_matrix(x, model.dim)
    out = np.empty(len(a))
    for lo in range(0, len(a), batch):
        z, ld = flow_forward(model, a[lo:lo + batch])
        out[lo:lo + batch] = gaussian_log_density(z) + ld
    return out


@dataclass
class FlowHyper:
    epochs: int = 200
    batch_size: int = 128
    lr: float = 1e-3
    seed: int = 0


def _window_matrix(windows) -> np.ndarray:
    if isinstance(windows, np.ndarray):
        return windows.reshape(len(windows), int(np.prod(windows.shape[1:])))
    return np.stack([w.flat() for w in windows]) if len(windows) else np.zeros((0, 0))


def train_flow(model: FlowModel, windows, hyper: FlowHyper) -> tuple[FlowModel, list[float]]:
    """Maximum-likelihood training with Adam.

    ``curve[0]`` is the mean NLL over all windows before training; entry ``e``
    is the mean batch NLL seen during epoch ``e``.
    """
    data = _window_matrix(windows)
    if len(data) == 0:
        raise EmptyTrainingSetError("train_flow needs at least one window")
    rng = np.random.default_rng(hyper.seed)
    params = model.params
    state = OptimState(lr=hyper.lr)
    curve = [float(-log_likelihood(model, data).mean())]
    for _ in range(hyper.epochs):
        order = rng.permutation(len(data))
        total = 0.0
        for lo in range(0, len(data), hyper.batch_size):
            rows = order[lo:lo + hyper.batch_size]
            loss = (model.log_likelihood(Tensor(data[rows]), params) * -1.0).mean()
            total += loss.item() * len(rows)
            params.backward(loss)
            params, state = adam_step(params, state)
        curve.append(total / len(data))
    return model.with_params(params), curve


def score_frames_flow(model: FlowModel, windows: Sequence[PoseWindow], n_frames: int,
                      video_id: str | None = None) -> FrameScoreSeries:
    """Negated per-frame minimum window log-likelihood; frames without a window are MISSING."""
    vid = video_id if video_id is not None else (windows[0].video_id if windows else "")
    if not windows:
        return FrameScoreSeries.empty(vid, n_frames)
    ll = log_likelihood(model, _window_matrix(windows))
    raw = min_over_coverage([w.span for w in windows], ll, n_frames)
    return FrameScoreSeries(vid, -raw)
