"""Synthetic labeled scenes standing in for real surveillance footage.

A scene has tracked 2-D skeletons (ground-truth pose tracks) and
detection boxes with procedural textures (ground-truth object crops).
Test scenes can receive pose anomalies on a person and appearance
anomalies in the form of a new out-of-distribution object.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, RangeError

HUMAN = "human"
NON_HUMAN = "non-human"
POSE_KINDS = ("velocity-spike", "joint-scramble", "freeze")

# Keypoints are stored on a 2**-10 px grid so translations by whole pixels are exact.
COORD_QUANTUM = 2.0 ** -10
NATIVE_GRID = 48

# COCO-17 layout in body-height units, hip centre at the origin, y pointing down.
COCO_TEMPLATE = np.array([
    [0.00, -0.90], [-0.03, -0.93], [0.03, -0.93], [-0.06, -0.91], [0.06, -0.91],
    [-0.12, -0.70], [0.12, -0.70], [-0.16, -0.45], [0.16, -0.45],
    [-0.17, -0.22], [0.17, -0.22], [-0.08, 0.00], [0.08, 0.00],
    [-0.09, 0.25], [0.09, 0.25], [-0.09, 0.50], [0.09, 0.50],
])
# (joint, horizontal swing amplitude, phase offset) for the walking cycle
_SWING = [
    (7, 0.04, 0.0), (9, 0.08, 0.0), (8, 0.04, np.pi), (10, 0.08, np.pi),
    (13, 0.05, np.pi), (15, 0.09, np.pi), (14, 0.05, 0.0), (16, 0.09, 0.0),
]
HIP_JOINTS = (11, 12)


@dataclass(frozen=True)
class SkeletonTrack:
    person_id: int
    frames: np.ndarray       # (n,) strictly increasing frame indices
    keypoints: np.ndarray    # (n, K, 2) image coordinates
    confidence: np.ndarray   # (n, K) in [0, 1]

    def __post_init__(self):
        frames = np.asarray(self.frames)
        if frames.ndim != 1 or np.any(np.diff(frames) <= 0):
            raise ValueError("track frame indices must be strictly increasing")
        if self.keypoints.shape[0] != len(frames) or self.keypoints.shape[2] != 2:
            raise ValueError("keypoints must have shape (frames, K, 2)")
        if not np.all(np.isfinite(self.keypoints)):
            raise ValueError("keypoints must be finite")

    @property
    def n_keypoints(self) -> int:
        return self.keypoints.shape[1]


@dataclass(frozen=True)
class DetectionBox:
    frame: int
    object_id: int
    cls: str
    box: tuple[float, float, float, float]  # x, y, width, height

    @property
    def area(self) -> float:
        return self.box[2] * self.box[3]


@dataclass
class SyntheticVideo:
    video_id: str
    n_frames: int
    image_size: tuple[int, int]  # width, height
    tracks: list[SkeletonTrack]
    detections: list[DetectionBox]
    textures: dict[int, dict]
    labels: np.ndarray
    seed: int = 0
    anomalies: list[dict] = field(default_factory=list)

    def object_boxes(self) -> dict[int, list[DetectionBox]]:
        out: dict[int, list[DetectionBox]] = {}
        for det in self.detections:
            out.setdefault(det.object_id, []).append(det)
        for boxes in out.values():
            boxes.sort(key=lambda d: d.frame)
        return out

    def track(self, person_id: int) -> SkeletonTrack:
        for tr in self.tracks:
            if tr.person_id == person_id:
                return tr
        raise KeyError(person_id)


@dataclass
class SynthConfig:
    train_videos: int = 6
    test_videos: int = 10
    frames: int = 240
    image_size: tuple[int, int] = (320, 240)
    actors: int = 2
    objects: int = 1
    n_keypoints: int = 17
    anomaly_fraction: float = 0.8
    pose_share: float = 0.5
    pose_kinds: tuple[str, ...] = ("velocity-spike", "joint-scramble")
    interval_min: int = 60
    interval_max: int = 100
    spike_multiplier: float = 5.0
    keypoint_noise: float = 0.3
    box_jitter: float = 0.03
    patch_separation: float = 0.15

    def validate(self) -> None:
        for name in ("anomaly_fraction", "pose_share"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {value}")
        if not 1 <= self.n_keypoints <= len(COCO_TEMPLATE):
            raise ConfigError(f"n_keypoints must be in [1, {len(COCO_TEMPLATE)}]")
        if not 1 <= self.interval_min <= self.interval_max <= self.frames:
            raise ConfigError("need 1 <= interval_min <= interval_max <= frames")
        if self.train_videos < 0 or self.test_videos < 0 or self.actors < 0 or self.objects < 0:
            raise ConfigError("counts must be non-negative")
        bad = set(self.pose_kinds) - set(POSE_KINDS)
        if bad or not self.pose_kinds:
            raise ConfigError(f"unknown pose kinds {sorted(bad)}")


def _quantize(a: np.ndarray) -> np.ndarray:
    return np.round(a / COORD_QUANTUM) * COORD_QUANTUM


def _texture(rng: np.random.Generator, *, coupled_speed: float | None = None) -> dict:
    # Gradient angle in [20, 35] deg keeps all four quadrant means distinct;
    # an even grating frequency cancels out of the quadrant means.
    tex = {
        "kind": "grating",
        "base": float(rng.uniform(0.4, 0.6)),
        "grad_amp": float(rng.uniform(0.2, 0.3)),
        "grad_angle": float(rng.uniform(np.radians(20), np.radians(35))),
        "grating_amp": float(rng.uniform(0.1, 0.15)),
        "grating_freq": 4,
        "phase0": float(rng.uniform(0, 2 * np.pi)),
        "drift": float(rng.uniform(0.6, 1.0)),
        "grain": 0.01,
        "seed": int(rng.integers(2**31)),
    }
    if coupled_speed is not None:
        # phase follows the distance actually travelled by the person
        tex["coupled"] = True
        tex["drift_per_px"] = tex["drift"] / coupled_speed
    return tex


def anomalous_texture(rng: np.random.Generator) -> dict:
    """Out-of-distribution texture: bright, spatially and temporally unstructured."""
    return {"kind": "noise", "mean": 0.9, "std": 0.06, "seed": int(rng.integers(2**31))}


def _walk_person(rng, cfg: SynthConfig, n: int):
    width, height = cfg.image_size
    h = rng.uniform(50, 70)
    speed = rng.uniform(0.8, 1.2)
    omega = rng.uniform(0.25, 0.4)
    gait_phase = rng.uniform(0, 2 * np.pi)
    lo = np.array([0.35 * h + 4, 1.0 * h + 4])
    hi = np.array([width - 0.35 * h - 4, height - 0.6 * h - 4])
    pos = rng.uniform(lo, hi)
    heading = rng.uniform(0, 2 * np.pi)
    roots = np.empty((n, 2))
    for t in range(n):
        roots[t] = pos
        heading += rng.normal(0, 0.05)
        step = speed * np.array([np.cos(heading), np.sin(heading)])
        nxt = pos + step
        for d in range(2):
            if nxt[d] < lo[d] or nxt[d] > hi[d]:
                step[d] = -step[d]
                heading = np.arctan2(step[1], step[0])
        pos = pos + step

    k = cfg.n_keypoints
    shape = COCO_TEMPLATE[:k] + rng.normal(0, 0.01, (k, 2))
    t = np.arange(n)
    body = np.broadcast_to(shape, (n, k, 2)).copy()
    for joint, amp, off in _SWING:
        if joint < k:
            body[:, joint, 0] += amp * np.sin(omega * t + gait_phase + off)
    body[:, :, 1] += 0.01 * np.sin(2 * omega * t + gait_phase)[:, None]
    kps = roots[:, None, :] + h * body
    kps = kps + rng.normal(0, cfg.keypoint_noise, kps.shape)
    conf = np.round(rng.uniform(0.7, 1.0, (n, k)), 4)
    return _quantize(kps), conf, h, speed


def _human_pad(kps: np.ndarray) -> float:
    return 0.055 * float(np.ptp(kps[..., 1], axis=-1).mean())


def _human_box(kps: np.ndarray, image_size, pad: float):
    width, height = image_size
    x0, y0 = kps.min(axis=0) - pad
    x1, y1 = kps.max(axis=0) + pad
    x0, y0 = max(x0, 0.0), max(y0, 0.0)
    x1, y1 = min(x1, width), min(y1, height)
    return (float(x0), float(y0), float(max(x1 - x0, 1e-3)), float(max(y1 - y0, 1e-3)))


def _object_path(rng, image_size, n, w, h, speed_range, jitter):
    width, height = image_size
    pos = rng.uniform([0, 0], [width - w, height - h])
    ang = rng.uniform(0, 2 * np.pi)
    vel = rng.uniform(*speed_range) * np.array([np.cos(ang), np.sin(ang)])
    boxes = []
    for _ in range(n):
        bw = w * (1 + rng.normal(0, jitter)) if jitter > 0 else w
        bh = h * (1 + rng.normal(0, jitter)) if jitter > 0 else h
        bw = float(np.clip(bw, 4.0, width))
        bh = float(np.clip(bh, 4.0, height))
        x = float(np.clip(pos[0], 0, width - bw))
        y = float(np.clip(pos[1], 0, height - bh))
        boxes.append((round(x, 4), round(y, 4), round(bw, 4), round(bh, 4)))
        pos = pos + vel
        for d, lim in ((0, width - w), (1, height - h)):
            if pos[d] < 0 or pos[d] > lim:
                vel[d] = -vel[d]
                pos[d] = np.clip(pos[d], 0, lim)
    return boxes


def _normal_video(video_id: str, cfg: SynthConfig, ss: np.random.SeedSequence) -> SyntheticVideo:
    rng = np.random.default_rng(ss)
    n = cfg.frames
    tracks, dets, textures = [], [], {}
    for pid in range(cfg.actors):
        kps, conf, h, speed = _walk_person(rng, cfg, n)
        tracks.append(SkeletonTrack(pid, np.arange(n), kps, conf))
        textures[pid] = _texture(rng, coupled_speed=speed)
        pad = _human_pad(kps)
        for f in range(n):
            dets.append(DetectionBox(f, pid, HUMAN, _human_box(kps[f], cfg.image_size, pad)))
    for j in range(cfg.objects):
        oid = 100 + j
        w, h = rng.uniform(30, 50), rng.uniform(20, 34)
        boxes = _object_path(rng, cfg.image_size, n, w, h, (0.5, 1.5), cfg.box_jitter)
        textures[oid] = _texture(rng)
        dets.extend(DetectionBox(f, oid, NON_HUMAN, b) for f, b in enumerate(boxes))
    dets.sort(key=lambda d: (d.frame, d.object_id))
    return SyntheticVideo(
        video_id=video_id, n_frames=n, image_size=tuple(cfg.image_size), tracks=tracks,
        detections=dets, textures=textures, labels=np.zeros(n, dtype=np.int64),
        seed=int(ss.generate_state(1)[0]),
    )


def _check_interval(video: SyntheticVideo, interval) -> tuple[int, int]:
    start, end = int(interval[0]), int(interval[1])
    if not 0 <= start <= end <= video.n_frames:
        raise RangeError(f"interval [{start}, {end}) outside [0, {video.n_frames})")
    return start, end


def _triangle(k: np.ndarray, period: int) -> np.ndarray:
    r = k % period
    return np.minimum(r, period - r).astype(float)


def inject_pose_anomaly(video: SyntheticVideo, interval, kind: str, *, person: int | None = None,
                        multiplier: float = 5.0, seed: int = 0) -> SyntheticVideo:
    """Corrupt one person's keypoints on ``[start, end)`` and label those frames.

    ``velocity-spike`` adds a rapid back-and-forth excursion whose per-frame
    step is ``multiplier`` times the track's normal speed; ``joint-scramble``
    permutes keypoint identities; ``freeze`` holds the first pose.
    """
    if kind not in POSE_KINDS:
        raise ConfigError(f"unknown pose anomaly kind {kind!r}")
    start, end = _check_interval(video, interval)
    if start == end:
        return video
    rng = np.random.default_rng(seed)
    candidates = [tr for tr in video.tracks
                  if (person is None or tr.person_id == person)
                  and np.isin(np.arange(start, end), tr.frames).all()]
    if not candidates:
        raise RangeError(f"no track covers [{start}, {end}) in {video.video_id}")
    track = candidates[0]
    rows = np.searchsorted(track.frames, np.arange(start, end))
    kps = track.keypoints.copy()

    if kind == "velocity-spike":
        centroid = track.keypoints.mean(axis=1)
        speed = float(np.linalg.norm(np.diff(centroid, axis=0), axis=1).mean())
        width, height = video.image_size
        toward = np.array([width / 2, height / 2]) - centroid[rows[0]]
        norm = np.linalg.norm(toward)
        direction = toward / norm if norm > 1e-9 else np.array([1.0, 0.0])
        offsets = multiplier * speed * _triangle(np.arange(1, end - start + 1), 12)
        kps[rows] += offsets[:, None, None] * direction
    elif kind == "joint-scramble":
        k = track.n_keypoints
        perm = np.arange(k)
        while k > 1 and np.any(perm == np.arange(k)):
            perm = rng.permutation(k)
        kps[rows] = kps[rows][:, perm]
    else:
        kps[rows] = kps[rows[0]]

    new_track = dataclasses.replace(track, keypoints=_quantize(kps))
    tracks = [new_track if tr is track else tr for tr in video.tracks]
    dets = list(video.detections)
    pad = _human_pad(track.keypoints)
    lookup = dict(zip(new_track.frames.tolist(), new_track.keypoints))
    for i, det in enumerate(dets):
        if det.object_id == track.person_id and det.cls == HUMAN and start <= det.frame < end:
            dets[i] = dataclasses.replace(det, box=_human_box(lookup[det.frame], video.image_size, pad))
    labels = video.labels.copy()
    labels[start:end] = 1
    anomalies = video.anomalies + [
        {"category": "pose", "kind": kind, "start": start, "end": end, "target": track.person_id}]
    return dataclasses.replace(video, tracks=tracks, detections=dets, labels=labels, anomalies=anomalies)


def inject_appearance_anomaly(video: SyntheticVideo, interval, texture: dict | None = None, *,
                              seed: int = 0) -> SyntheticVideo:
    """Add a new non-human object with an out-of-distribution texture on ``[start, end)``."""
    start, end = _check_interval(video, interval)
    if start == end:
        return video
    rng = np.random.default_rng(seed)
    oid = max([100, *(d.object_id + 1 for d in video.detections), *(k + 1 for k in video.textures)])
    w, h = rng.uniform(36, 52), rng.uniform(36, 52)
    boxes = _object_path(rng, video.image_size, end - start, w, h, (1.0, 3.0), 0.0)
    dets = video.detections + [DetectionBox(start + i, oid, NON_HUMAN, b) for i, b in enumerate(boxes)]
    dets.sort(key=lambda d: (d.frame, d.object_id))
    textures = dict(video.textures)
    textures[oid] = dict(texture) if texture is not None else anomalous_texture(rng)
    labels = video.labels.copy()
    labels[start:end] = 1
    anomalies = video.anomalies + [
        {"category": "appearance", "kind": textures[oid]["kind"], "start": start, "end": end, "target": oid}]
    return dataclasses.replace(video, detections=dets, textures=textures, labels=labels, anomalies=anomalies)


def _random_interval(rng, cfg: SynthConfig) -> tuple[int, int]:
    length = int(rng.integers(cfg.interval_min, cfg.interval_max + 1))
    start = int(rng.integers(0, cfg.frames - length + 1))
    return start, start + length


def generate_dataset(config: SynthConfig, seed: int) -> tuple[list[SyntheticVideo], list[SyntheticVideo]]:
    """Normal-only training videos and a labeled test split; a pure function of (config, seed)."""
    config.validate()
    root = np.random.SeedSequence(seed)
    train_ss, test_ss, plan_ss = root.spawn(3)
    train = [_normal_video(f"train_{i:03d}", config, s)
             for i, s in enumerate(train_ss.spawn(config.train_videos))]
    test = [_normal_video(f"test_{i:03d}", config, s)
            for i, s in enumerate(test_ss.spawn(config.test_videos))]

    plan = np.random.default_rng(plan_ss)
    n_anom = int(round(config.anomaly_fraction * config.test_videos))
    n_pose = int(round(config.pose_share * n_anom))
    order = plan.permutation(config.test_videos)
    for j, idx in enumerate(order[:n_anom]):
        interval = _random_interval(plan, config)
        inj_seed = int(plan.integers(2**31))
        if j < n_pose:
            kind = config.pose_kinds[j % len(config.pose_kinds)]
            person = int(plan.integers(config.actors)) if config.actors else None
            test[idx] = inject_pose_anomaly(test[idx], interval, kind, person=person,
                                            multiplier=config.spike_multiplier, seed=inj_seed)
        else:
            test[idx] = inject_appearance_anomaly(test[idx], interval, seed=inj_seed)
    return train, test


# --- patch rendering -------------------------------------------------------

def _phases(video: SyntheticVideo, object_id: int, frames: np.ndarray, tex: dict) -> np.ndarray:
    if not tex.get("coupled"):
        return tex["phase0"] + tex["drift"] * frames
    track = video.track(object_id)
    centroid = track.keypoints.mean(axis=1)
    travel = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(centroid, axis=0), axis=1))])
    rows = np.searchsorted(track.frames, frames)
    if np.any(rows >= len(track.frames)) or np.any(track.frames[np.minimum(rows, len(track.frames) - 1)] != frames):
        raise RangeError(f"person {object_id} has no keypoints on some requested frames")
    return tex["phase0"] + tex["drift_per_px"] * travel[rows]


def _render(tex: dict, frame: int, phase: float, size: int) -> np.ndarray:
    sub = max(1, -(-NATIVE_GRID // size))
    n = size * sub
    c = (np.arange(n) + 0.5) / n
    u, v = np.meshgrid(c, c, indexing="xy")
    cell = (np.minimum((v * NATIVE_GRID).astype(int), NATIVE_GRID - 1),
            np.minimum((u * NATIVE_GRID).astype(int), NATIVE_GRID - 1))
    noise = np.random.default_rng([tex["seed"], frame]).standard_normal((NATIVE_GRID, NATIVE_GRID))
    if tex["kind"] == "noise":
        img = tex["mean"] + tex["std"] * noise[cell]
    else:
        ang = tex["grad_angle"]
        img = (tex["base"]
               + tex["grad_amp"] * ((u - 0.5) * np.cos(ang) + (v - 0.5) * np.sin(ang))
               + tex["grating_amp"] * np.sin(2 * np.pi * tex["grating_freq"] * u - phase)
               + tex["grain"] * noise[cell])
    img = np.clip(img, 0.0, 1.0)
    return img.reshape(size, sub, size, sub).mean(axis=(1, 3))


def render_object_patches(video: SyntheticVideo, object_id: int, frames, size: int) -> np.ndarray:
    """Patches of one object on several frames, shape (len(frames), size, size)."""
    if size < 1:
        raise ConfigError("patch size must be positive")
    tex = video.textures[object_id]
    frames = np.asarray(frames, dtype=np.int64)
    phases = _phases(video, object_id, frames, tex) if tex["kind"] == "grating" else np.zeros(len(frames))
    return np.stack([_render(tex, int(f), float(p), size) for f, p in zip(frames, phases)]) \
        if len(frames) else np.zeros((0, size, size))


def render_patch(video: SyntheticVideo, box: DetectionBox, size: int) -> np.ndarray:
    """Grayscale crop of ``box`` resampled to ``size x size x 1``."""
    width, height = video.image_size
    x, y, w, h = box.box
    tol = 1e-6
    if (w <= 0 or h <= 0 or x < -tol or y < -tol or x + w > width + tol or y + h > height + tol
            or not 0 <= box.frame < video.n_frames):
        raise RangeError(f"box {box.box} on frame {box.frame} lies outside the image")
    if box.object_id not in video.textures:
        raise RangeError(f"object {box.object_id} has no texture")
    return render_object_patches(video, box.object_id, [box.frame], size)[0][:, :, None]
