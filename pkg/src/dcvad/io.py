"""On-disk formats: datasets, score tables, checkpoints, reports.

Everything is written with fixed key order and shortest round-trip float
text so that identical inputs give byte-identical files.
"""

from __future__ import annotations

import csv
import io
import json
import os
import struct
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import InvalidInputError
from .evaluation import RocCurve
from .fusion import FusedResult
from .numerics import ParamSet
from .scores import FrameScoreSeries
from .synth import DetectionBox, SkeletonTrack, SyntheticVideo

NA = "NA"
CHECKPOINT_MAGIC = b"DCVADCK1"


def _num(x: float) -> str:
    x = float(x)
    return NA if np.isnan(x) else repr(x)


def _write_text(path, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


# --- datasets ----------------------------------------------------------------

def write_video(video: SyntheticVideo, directory, config_echo: dict | None = None) -> None:
    """tracks.jsonl, detections.jsonl, labels.csv and meta.json for one video."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    v = video
    tracks = [json.dumps({"video": v.video_id, "person": tr.person_id, "frame": int(f),
                          "kps": kp.tolist(), "conf": c.tolist()})
              for tr in v.tracks for f, kp, c in zip(tr.frames, tr.keypoints, tr.confidence)]
    dets = [json.dumps({"video": v.video_id, "object": b.object_id, "frame": b.frame,
                        "cls": b.cls, "box": [float(x) for x in b.box]}) for b in v.detections]
    labels = ["frame,label"] + [f"{f},{int(y)}" for f, y in enumerate(v.labels)]
    meta = {"video": v.video_id, "n_frames": v.n_frames, "image_size": list(v.image_size), "seed": v.seed,
            "textures": {str(k): v.textures[k] for k in sorted(v.textures)}, "anomalies": v.anomalies,
            "config": config_echo or {}}
    _write_text(d / "tracks.jsonl", "".join(t + "\n" for t in tracks))
    _write_text(d / "detections.jsonl", "".join(t + "\n" for t in dets))
    _write_text(d / "labels.csv", "\n".join(labels) + "\n")
    _write_text(d / "meta.json", json.dumps(meta, indent=1) + "\n")


def _read_jsonl(path) -> Iterable[dict]:
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if line.strip():
                try:
                    yield json.loads(line)
                except json.JSONDecodeError as e:
                    raise InvalidInputError(f"{path}:{n}: {e.msg}") from None


def read_video(directory) -> SyntheticVideo:
    d = Path(directory)
    for name in ("tracks.jsonl", "detections.jsonl", "labels.csv", "meta.json"):
        if not (d / name).is_file():
            raise InvalidInputError(f"{d} is missing {name}")
    try:
        m = json.loads((d / "meta.json").read_text(encoding="utf-8"))
    except ValueError as e:
        raise InvalidInputError(f"{d / 'meta.json'}: {e}") from None
    rows: dict[int, list[dict]] = {}
    for r in _read_jsonl(d / "tracks.jsonl"):
        rows.setdefault(int(r["person"]), []).append(r)
    tracks = [SkeletonTrack(pid, np.array([r["frame"] for r in rs], dtype=np.int64),
                            np.array([r["kps"] for r in rs], dtype=np.float64),
                            np.array([r["conf"] for r in rs], dtype=np.float64))
              for pid, rs in rows.items()]
    boxes = [DetectionBox(int(r["frame"]), int(r["object"]), r["cls"], tuple(float(x) for x in r["box"]))
             for r in _read_jsonl(d / "detections.jsonl")]
    n = int(m["n_frames"])
    y = np.zeros(n, dtype=np.int8)
    for _, f, lab in read_labels(d / "labels.csv"):
        if not 0 <= f < n:
            raise InvalidInputError(f"{d / 'labels.csv'}: frame {f} outside [0, {n})")
        y[f] = lab
    return SyntheticVideo(m["video"], n, tuple(m["image_size"]), tracks, boxes,
                          {int(k): t for k, t in m["textures"].items()}, y, m["seed"], m["anomalies"])


def write_split(videos: Sequence[SyntheticVideo], directory, config_echo: dict | None = None) -> None:
    for v in videos:
        write_video(v, Path(directory) / v.video_id, config_echo)


def read_split(directory) -> list[SyntheticVideo]:
    d = Path(directory)
    if not d.is_dir():
        raise InvalidInputError(f"{d} is not a directory")
    return [read_video(p) for p in sorted(d.iterdir()) if p.is_dir()]


def write_dataset(train, test, directory, config_echo: dict | None = None) -> None:
    write_split(train, Path(directory) / "train", config_echo)
    write_split(test, Path(directory) / "test", config_echo)


def read_dataset(directory):
    return read_split(Path(directory) / "train"), read_split(Path(directory) / "test")


def read_split_labels(directory) -> list[tuple[str, int, int]]:
    """(video, frame, label) rows from every video directory of a split."""
    out = []
    for p in sorted(Path(directory).iterdir()):
        if p.is_dir() and (p / "labels.csv").is_file():
            out += [(p.name, f, y) for _, f, y in read_labels(p / "labels.csv")]
    return out


# --- labels and scores ------------------------------------------------------

def read_labels(path) -> list[tuple[str, int, int]]:
    """(video, frame, label) rows; ``video`` is optional in the file."""
    out = []
    for r in _read_csv(path, ("frame", "label")):
        y = r["label"].strip()
        if y not in ("0", "1"):
            raise InvalidInputError(f"{path}: label must be 0 or 1, got {y!r}")
        out.append((r.get("video", ""), int(r["frame"]), int(y)))
    return out


def _read_csv(path, required: Sequence[str]) -> list[dict[str, str]]:
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.DictReader(fh)
            missing = [c for c in required if c not in (reader.fieldnames or [])]
            if missing:
                raise InvalidInputError(f"{path}: missing column(s) {', '.join(missing)}")
            return list(reader)
    except OSError as e:
        raise InvalidInputError(f"cannot read {path}: {e.strerror}") from None


def _parse_score(text: str, where: str) -> float:
    text = text.strip()
    if text == NA:
        return float("nan")
    try:
        return float(text)
    except ValueError:
        raise InvalidInputError(f"{where}: bad score {text!r}") from None


def write_scores(series: Sequence[FrameScoreSeries], path) -> None:
    lines = ["video,frame,score"]
    for s in series:
        lines += [f"{s.video_id},{f},{_num(x)}" for f, x in enumerate(s.scores)]
    _write_text(path, "\n".join(lines) + "\n")


def read_scores(path) -> list[FrameScoreSeries]:
    """Rows grouped by video in first-appearance order; frames must run 0..n-1."""
    groups: dict[str, list[tuple[int, float]]] = {}
    for n, r in enumerate(_read_csv(path, ("frame", "score")), 2):
        groups.setdefault(r.get("video", ""), []).append((int(r["frame"]), _parse_score(r["score"], f"{path}:{n}")))
    out = []
    for vid, rows in groups.items():
        rows.sort()
        frames = [f for f, _ in rows]
        if frames != list(range(len(frames))):
            raise InvalidInputError(f"{path}: frames of {vid!r} are not 0..{len(frames) - 1}")
        out.append(FrameScoreSeries(vid, np.array([x for _, x in rows])))
    return out


def write_fused(results: Sequence[FusedResult], path) -> None:
    lines = ["video,frame,score,skeleton_component,jigsaw_component"]
    for r in results:
        for f, (x, a, b) in enumerate(zip(r.fused.scores, r.skeleton, r.jigsaw)):
            lines.append(f"{r.video_id},{f},{_num(x)},{_num(a)},{_num(b)}")
    _write_text(path, "\n".join(lines) + "\n")


def write_roc(curves: dict[str, RocCurve], path) -> None:
    lines = ["run,fpr,tpr"]
    for name, c in curves.items():
        lines += [f"{name},{_num(x)},{_num(y)}" for x, y in zip(c.fpr, c.tpr)]
    _write_text(path, "\n".join(lines) + "\n")


def write_curve(rows: Sequence[dict], path) -> None:
    if not rows:
        _write_text(path, "")
        return
    cols = list(rows[0])
    lines = [",".join(cols)] + [",".join(_num(r[c]) if isinstance(r[c], float) else str(r[c]) for c in cols)
                                for r in rows]
    _write_text(path, "\n".join(lines) + "\n")


# --- checkpoints ----------------------------------------------------------------

def save_checkpoint(path, kind: str, config: dict, params: ParamSet) -> None:
    """Magic, 8-byte header length, JSON header, then little-endian float64 blobs in header order."""
    names = sorted(params)
    arrays = [np.ascontiguousarray(params[n].data, dtype="<f8") for n in names]
    tensors, offset = [], 0
    for n, a in zip(names, arrays):
        tensors.append({"name": n, "shape": list(a.shape), "offset": offset})
        offset += a.nbytes
    header = json.dumps({"kind": kind, "config": config, "tensors": tensors},
                        sort_keys=True, separators=(",", ":")).encode()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(header)))
        fh.write(header)
        for a in arrays:
            fh.write(a.tobytes())
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[str, dict, ParamSet]:
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise InvalidInputError(f"cannot read checkpoint {path}: {e.strerror}") from None
    if not blob.startswith(CHECKPOINT_MAGIC) or len(blob) < len(CHECKPOINT_MAGIC) + 8:
        raise InvalidInputError(f"{path} is not a checkpoint")
    pos = len(CHECKPOINT_MAGIC)
    (hlen,) = struct.unpack("<Q", blob[pos:pos + 8])
    pos += 8
    try:
        header = json.loads(blob[pos:pos + hlen])
    except ValueError:
        raise InvalidInputError(f"{path}: corrupt checkpoint header") from None
    body = memoryview(blob)[pos + hlen:]
    vals = {}
    for t in header["tensors"]:
        count = int(np.prod(t["shape"], dtype=np.int64))
        end = t["offset"] + 8 * count
        if end > len(body):
            raise InvalidInputError(f"{path}: truncated checkpoint")
        vals[t["name"]] = np.frombuffer(body[t["offset"]:end], dtype="<f8").reshape(t["shape"]).astype(np.float64)
    return header["kind"], header["config"], ParamSet(vals)


def render_table(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    """Left-aligned text table."""
    cells = [list(map(str, header))] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    fmt = lambda r: "  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip()
    return "\n".join([fmt(cells[0]), "  ".join("-" * w for w in widths)] + [fmt(r) for r in cells[1:]]) + "\n"


def csv_text(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()
