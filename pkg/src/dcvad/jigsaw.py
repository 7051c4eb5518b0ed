"""Appearance branch: spatio-temporal jigsaw puzzles on object-centred cubes.

A cube stacks one object's patches over T consecutive frames. The network
sees a T_sub-frame slice of it and has two heads: one names the permutation
applied to the slice's frames, the other the permutation applied to the
G x G cells of every patch. At test time an unshuffled cube that the network
confidently calls "identity" is normal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import numerics as nx
from .errors import ConfigError, EmptyTrainingSetError, ShapeError
from .numerics import OptimState, ParamSet, Tensor, adam_step, no_grad, softmax
from .scores import FrameScoreSeries, min_over_coverage
from .synth import HUMAN, DetectionBox, SyntheticVideo, render_object_patches

TEMPORAL = "temporal"
SPATIAL = "spatial"
ALL_OBJECTS = "all-objects"
NON_HUMAN_ONLY = "non-human-only"


@dataclass(frozen=True)
class SpaceTimeCube:
    video_id: str
    object_id: int
    center: int
    cls: str
    patches: np.ndarray  # (T, S, S)

    @property
    def span(self) -> tuple[int, int]:
        half = self.patches.shape[0] // 2
        return self.center - half, self.center + half + 1


@dataclass(frozen=True)
class PermutationTask:
    axis: str
    permutation: tuple[int, ...]
    class_index: int

    @property
    def n(self) -> int:
        return len(self.permutation)


def permutation_rank(perm: Sequence[int]) -> int:
    """Lexicographic rank of a permutation of 0..n-1."""
    perm = list(perm)
    n = len(perm)
    if sorted(perm) != list(range(n)):
        raise ValueError(f"{perm} is not a permutation of 0..{n - 1}")
    rank, remaining = 0, list(range(n))
    for i, p in enumerate(perm):
        pos = remaining.index(p)
        rank += pos * math.factorial(n - 1 - i)
        remaining.pop(pos)
    return rank


def permutation_unrank(index: int, n: int) -> tuple[int, ...]:
    if not 0 <= index < math.factorial(n):
        raise ValueError(f"rank {index} out of range for n={n}")
    remaining, out = list(range(n)), []
    for i in range(n):
        f = math.factorial(n - 1 - i)
        pos, index = divmod(index, f)
        out.append(remaining.pop(pos))
    return tuple(out)


def sample_permutation(axis: str, n: int, rng: np.random.Generator,
                       capacity: int | None = None) -> PermutationTask:
    if axis not in (TEMPORAL, SPATIAL):
        raise ConfigError(f"unknown axis {axis!r}")
    if capacity is not None and math.factorial(n) > capacity:
        raise ConfigError(f"{n}! classes exceed head capacity {capacity}")
    perm = tuple(int(i) for i in rng.permutation(n))
    return PermutationTask(axis, perm, permutation_rank(perm))


def _to_cells(patches: np.ndarray, grid: int) -> np.ndarray:
    """(..., S, S) -> (..., G*G, c, c) with cells in row-major order."""
    s = patches.shape[-1]
    c = s // grid
    lead = patches.shape[:-2]
    x = patches.reshape(lead + (grid, c, grid, c))
    x = np.moveaxis(x, -3, -2)
    return x.reshape(lead + (grid * grid, c, c))


def _from_cells(cells: np.ndarray, grid: int) -> np.ndarray:
    c = cells.shape[-1]
    lead = cells.shape[:-3]
    x = cells.reshape(lead + (grid, grid, c, c))
    x = np.moveaxis(x, -2, -3)
    return x.reshape(lead + (grid * c, grid * c))


def permute_patches(patches: np.ndarray, axis: str, perm: Sequence[int], grid: int = 2) -> np.ndarray:
    """Element ``i`` moves to position ``perm[i]`` along the chosen axis."""
    inv = np.argsort(np.asarray(perm))
    if axis == TEMPORAL:
        if len(perm) != patches.shape[-3]:
            raise ShapeError(f"temporal permutation of {len(perm)} on {patches.shape[-3]} frames")
        return patches[..., inv, :, :]
    if axis == SPATIAL:
        if len(perm) != grid * grid or patches.shape[-1] % grid:
            raise ShapeError(f"spatial permutation of {len(perm)} on a {grid}x{grid} grid")
        return _from_cells(_to_cells(patches, grid)[..., inv, :, :], grid)
    raise ConfigError(f"unknown axis {axis!r}")


def apply_permutation(cube: SpaceTimeCube, task: PermutationTask, grid: int = 2) -> SpaceTimeCube:
    patches = permute_patches(cube.patches, task.axis, task.permutation, grid)
    return SpaceTimeCube(cube.video_id, cube.object_id, cube.center, cube.cls, patches)


def build_cubes(video: SyntheticVideo, T: int = 9, S: int = 24, G: int = 2, filter: float = 0.8,
                detections: Sequence[DetectionBox] | None = None) -> list[SpaceTimeCube]:
    """One cube per object and centre frame with ``T`` consecutive boxes.

    A cube is kept when min/max box area over its frames is at least ``filter``.
    """
    if T < 1 or T % 2 == 0:
        raise ConfigError("T must be odd")
    if S % G:
        raise ConfigError("S must be divisible by G")
    if not 0.0 <= filter <= 1.0:
        raise ConfigError("filter must lie in [0, 1]")
    dets = video.detections if detections is None else detections
    by_obj: dict[int, list[DetectionBox]] = {}
    for d in dets:
        by_obj.setdefault(d.object_id, []).append(d)
    half = T // 2
    cubes = []
    for oid in sorted(by_obj):
        boxes = sorted(by_obj[oid], key=lambda d: d.frame)
        frames = np.array([d.frame for d in boxes])
        areas = np.array([d.area for d in boxes])
        keep = []
        for i in range(half, len(boxes) - half):
            if frames[i + half] - frames[i - half] != 2 * half:
                continue
            win = areas[i - half:i + half + 1]
            if win.min() >= filter * win.max():
                keep.append(i)
        if not keep:
            continue
        patches = render_object_patches(video, oid, frames, S)
        cls = boxes[0].cls
        for i in keep:
            cubes.append(SpaceTimeCube(video.video_id, oid, int(frames[i]), cls,
                                       patches[i - half:i + half + 1]))
    return cubes


class JigsawNet:
    """Shared cell embedding (a convolution with stride = kernel = cell) and two heads."""

    def __init__(self, patch: int = 24, grid: int = 2, frames: int = 4, embed: int = 16,
                 hidden: int = 128, params: ParamSet | None = None, seed: int = 0):
        if patch % grid:
            raise ConfigError("patch size must be divisible by the grid")
        self.patch, self.grid, self.frames, self.embed, self.hidden = patch, grid, frames, embed, hidden
        self.cell = patch // grid
        self.n_temporal = math.factorial(frames)
        self.n_spatial = math.factorial(grid * grid)
        if self.n_temporal > 5040 or self.n_spatial > 5040:
            raise ConfigError("permutation head would exceed 5040 classes")
        self.params = params if params is not None else self._init(seed)

    def _init(self, seed: int) -> ParamSet:
        rng = np.random.default_rng(seed)
        c2 = self.cell * self.cell
        flat = self.frames * self.grid * self.grid * self.embed
        return ParamSet({
            "embed.w": rng.normal(0, 1 / np.sqrt(c2), (c2, self.embed)),
            "embed.b": np.zeros(self.embed),
            "hidden.w": rng.normal(0, 1 / np.sqrt(flat), (flat, self.hidden)),
            "hidden.b": np.zeros(self.hidden),
            "temporal.w": rng.normal(0, 1 / np.sqrt(self.hidden), (self.hidden, self.n_temporal)),
            "temporal.b": np.zeros(self.n_temporal),
            "spatial.w": rng.normal(0, 1 / np.sqrt(self.hidden), (self.hidden, self.n_spatial)),
            "spatial.b": np.zeros(self.n_spatial),
        })

    def config(self) -> dict:
        return {"patch": self.patch, "grid": self.grid, "frames": self.frames,
                "embed": self.embed, "hidden": self.hidden}

    def with_params(self, params: ParamSet) -> "JigsawNet":
        return JigsawNet(**self.config(), params=params)

    def prepare(self, clips: np.ndarray) -> np.ndarray:
        """(B, T_sub, S, S) -> (B * T_sub * G*G, c*c) mean-removed cell rows."""
        clips = np.asarray(clips, dtype=np.float64)
        if clips.shape[1:] != (self.frames, self.patch, self.patch):
            raise ShapeError(f"expected clips of shape (B, {self.frames}, {self.patch}, {self.patch})")
        clips = clips - clips.mean(axis=(1, 2, 3), keepdims=True)
        return _to_cells(clips, self.grid).reshape(-1, self.cell * self.cell)

    def logits(self, cells: np.ndarray, params: ParamSet | None = None) -> tuple[Tensor, Tensor]:
        p = params if params is not None else self.params
        b = cells.shape[0] // (self.frames * self.grid * self.grid)
        e = nx.tanh(Tensor(cells) @ p["embed.w"] + p["embed.b"])
        h = nx.tanh(e.reshape(b, -1) @ p["hidden.w"] + p["hidden.b"])
        return h @ p["temporal.w"] + p["temporal.b"], h @ p["spatial.w"] + p["spatial.b"]

    def probabilities(self, clips: np.ndarray, batch: int = 2048) -> tuple[np.ndarray, np.ndarray]:
        pt, ps = [], []
        with no_grad():
            for lo in range(0, len(clips), batch):
                lt, ls = self.logits(self.prepare(clips[lo:lo + batch]))
                pt.append(softmax(lt.data))
                ps.append(softmax(ls.data))
        if not pt:
            return np.zeros((0, self.n_temporal)), np.zeros((0, self.n_spatial))
        return np.concatenate(pt), np.concatenate(ps)


@dataclass
class JigsawHyper:
    epochs: int = 60
    batch_size: int = 100
    lr: float = 3e-3
    seed: int = 0


def make_tasks(net: JigsawNet, cubes: Sequence[SpaceTimeCube], rng: np.random.Generator,
               axes: np.ndarray | None = None):
    """A random sub-clip per cube, shuffled on one axis; returns (clips, axis flags, labels).

    Axis flag 0 is temporal, 1 spatial.
    """
    n = len(cubes)
    full = cubes[0].patches.shape[0]
    if full < net.frames:
        raise ShapeError(f"cubes have {full} frames, the network needs {net.frames}")
    starts = rng.integers(0, full - net.frames + 1, n)
    if axes is None:
        axes = rng.integers(0, 2, n)
    clips = np.empty((n, net.frames, net.patch, net.patch))
    labels = np.empty(n, dtype=np.int64)
    for i, cube in enumerate(cubes):
        clip = cube.patches[starts[i]:starts[i] + net.frames]
        if axes[i] == 0:
            task = sample_permutation(TEMPORAL, net.frames, rng)
        else:
            task = sample_permutation(SPATIAL, net.grid * net.grid, rng)
        clips[i] = permute_patches(clip, task.axis, task.permutation, net.grid)
        labels[i] = task.class_index
    return clips, np.asarray(axes), labels


def jigsaw_loss(net: JigsawNet, clips, axes, labels, params: ParamSet | None = None) -> Tensor:
    """Mean cross-entropy, each example scored only by the head of its shuffled axis."""
    lt, ls = net.logits(net.prepare(clips), params)
    temporal = (np.asarray(axes) == 0).astype(np.float64)
    return nx.cross_entropy(lt, labels, temporal) + nx.cross_entropy(ls, labels, 1.0 - temporal)


def evaluate_jigsaw(net: JigsawNet, cubes: Sequence[SpaceTimeCube], seed: int = 0) -> dict[str, float]:
    """Head accuracies on one random temporal and one random spatial task per cube."""
    if not cubes:
        raise EmptyTrainingSetError("no cubes to evaluate")
    rng = np.random.default_rng(seed)
    out = {}
    for flag, axis in ((0, TEMPORAL), (1, SPATIAL)):
        clips, _, labels = make_tasks(net, cubes, rng, np.full(len(cubes), flag))
        pt, ps = net.probabilities(clips)
        probs = pt if flag == 0 else ps
        out[axis] = float(np.mean(probs.argmax(axis=1) == labels))
    return out


def train_jigsaw(net: JigsawNet, cubes: Sequence[SpaceTimeCube], hyper: JigsawHyper,
                 val_cubes: Sequence[SpaceTimeCube] | None = None) -> tuple[JigsawNet, list[dict]]:
    """Adam on freshly shuffled tasks every epoch.

    Each curve entry has the epoch's running train accuracy per head and,
    when ``val_cubes`` is given, held-out accuracy on fixed tasks.
    """
    if not cubes:
        raise EmptyTrainingSetError("train_jigsaw needs at least one cube")
    rng = np.random.default_rng(hyper.seed)
    params, state = net.params, OptimState(lr=hyper.lr)
    curve = []
    for epoch in range(1, hyper.epochs + 1):
        clips, axes, labels = make_tasks(net, cubes, rng)
        order = rng.permutation(len(cubes))
        hits = np.zeros(2)
        counts = np.zeros(2)
        for lo in range(0, len(cubes), hyper.batch_size):
            rows = order[lo:lo + hyper.batch_size]
            lt, ls = net.logits(net.prepare(clips[rows]), params)
            temporal = (axes[rows] == 0).astype(np.float64)
            loss = (nx.cross_entropy(lt, labels[rows], temporal)
                    + nx.cross_entropy(ls, labels[rows], 1.0 - temporal))
            for flag, head in ((0, lt), (1, ls)):
                sel = axes[rows] == flag
                hits[flag] += np.sum(head.data[sel].argmax(axis=1) == labels[rows][sel])
                counts[flag] += sel.sum()
            params.backward(loss)
            params, state = adam_step(params, state)
        entry = {"epoch": epoch,
                 "train_temporal": float(hits[0] / max(counts[0], 1)),
                 "train_spatial": float(hits[1] / max(counts[1], 1))}
        if val_cubes:
            acc = evaluate_jigsaw(net.with_params(params), val_cubes, seed=hyper.seed + 1)
            entry["val_temporal"], entry["val_spatial"] = acc[TEMPORAL], acc[SPATIAL]
        curve.append(entry)
    return net.with_params(params), curve


def cube_normality(net: JigsawNet, cubes: Sequence[SpaceTimeCube]) -> np.ndarray:
    """Mean over heads of the identity-class probability, averaged over every sub-clip."""
    if not cubes:
        return np.zeros(0)
    full = cubes[0].patches.shape[0]
    n_sub = full - net.frames + 1
    clips = np.stack([c.patches[s:s + net.frames] for c in cubes for s in range(n_sub)])
    pt, ps = net.probabilities(clips)
    ident = 0.5 * (pt[:, 0] + ps[:, 0])
    return ident.reshape(len(cubes), n_sub).mean(axis=1)


def aggregate_cube_scores(cubes: Sequence[SpaceTimeCube], normality: np.ndarray, n_frames: int,
                          mode: str = ALL_OBJECTS, video_id: str | None = None) -> FrameScoreSeries:
    """``1 - min`` normality over the eligible cubes covering each frame; MISSING if none."""
    if mode not in (ALL_OBJECTS, NON_HUMAN_ONLY):
        raise ConfigError(f"unknown jigsaw scoring mode {mode!r}")
    vid = video_id if video_id is not None else (cubes[0].video_id if cubes else "")
    keep = [i for i, c in enumerate(cubes) if mode == ALL_OBJECTS or c.cls != HUMAN]
    if not keep:
        return FrameScoreSeries.empty(vid, n_frames)
    normality = np.asarray(normality)
    raw = min_over_coverage([cubes[i].span for i in keep], normality[keep], n_frames)
    return FrameScoreSeries(vid, 1.0 - raw)


def score_frames_jigsaw(net: JigsawNet, cubes: Sequence[SpaceTimeCube], n_frames: int,
                        mode: str = ALL_OBJECTS, video_id: str | None = None) -> FrameScoreSeries:
    eligible = [c for c in cubes if mode == ALL_OBJECTS or c.cls != HUMAN]
    return aggregate_cube_scores(eligible, cube_normality(net, eligible), n_frames, mode,
                                 video_id if video_id is not None else (cubes[0].video_id if cubes else ""))
