"""End-to-end experiment: synth, train both branches, score, fuse, evaluate, persist."""

from __future__ import annotations

import contextlib
import dataclasses
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import io as dio
from .config import ExperimentConfig, config_to_ini
from .errors import DcvadError
from .evaluation import ComparisonReport, LabeledScores, RocCurve, compare_runs, roc_curve
from .flow import FlowHyper, FlowModel, segment_tracks, score_frames_flow, train_flow
from .fusion import W_HUMAN, WO_HUMAN, FusedResult, FusionConfig, fill_missing, fuse_test_set, normalize_scores
from .jigsaw import (ALL_OBJECTS, NON_HUMAN_ONLY, JigsawHyper, JigsawNet, SpaceTimeCube, aggregate_cube_scores,
                     build_cubes, cube_normality, train_jigsaw)
from .scores import FrameScoreSeries
from .synth import SyntheticVideo, generate_dataset

logger = logging.getLogger(__name__)

RUN_SKELETON = "skeleton-only"
RUN_JIGSAW = "jigsaw-only"
RUN_FUSED = {WO_HUMAN: "fused-WO_HUMAN", W_HUMAN: "fused-W_HUMAN"}


@contextlib.contextmanager
def stage(name: str):
    """Prefix errors raised inside with the pipeline stage they came from."""
    try:
        yield
    except DcvadError as e:
        if str(e).startswith(f"[{name}]"):
            raise
        raise type(e)(f"[{name}] {e}") from e


# --- branch building blocks ---------------------------------------------------

def flow_model_for(cfg: ExperimentConfig, n_keypoints: int, init: str = "identity") -> FlowModel:
    f = cfg.flow
    return FlowModel(f.window * n_keypoints * 2, f.n_layers, f.hidden, f.s_max, row_len=n_keypoints * 2,
                     seed=cfg.branch_seed("flow"), init=init)


def training_windows(cfg: ExperimentConfig, videos: Sequence[SyntheticVideo]) -> np.ndarray:
    f = cfg.flow
    wins = [w.flat() for v in videos
            for w in segment_tracks(v.tracks, f.window, f.train_stride, video_id=v.video_id, normalize=f.normalize)]
    data = np.stack(wins) if wins else np.zeros((0, f.window * cfg.synth.n_keypoints * 2))
    if f.max_windows and len(data) > f.max_windows:
        rng = np.random.default_rng(cfg.branch_seed("flow"))
        data = data[np.sort(rng.choice(len(data), f.max_windows, replace=False))]
    return data


def train_flow_branch(cfg: ExperimentConfig, videos: Sequence[SyntheticVideo]) -> tuple[FlowModel, list[float]]:
    data = training_windows(cfg, videos)
    model = flow_model_for(cfg, cfg.synth.n_keypoints)
    f = cfg.flow
    return train_flow(model, data, FlowHyper(f.epochs, f.batch_size, f.lr, cfg.branch_seed("flow")))


def score_skeleton(cfg: ExperimentConfig, model: FlowModel, videos: Sequence[SyntheticVideo]) -> list[FrameScoreSeries]:
    f = cfg.flow
    return [score_frames_flow(model, segment_tracks(v.tracks, f.window, f.score_stride, video_id=v.video_id,
                                                    normalize=f.normalize), v.n_frames, v.video_id)
            for v in videos]


def jigsaw_net_for(cfg: ExperimentConfig) -> JigsawNet:
    j = cfg.jigsaw
    return JigsawNet(j.S, j.G, j.sub_frames, j.embed, j.hidden, seed=cfg.branch_seed("jigsaw"))


def video_cubes(cfg: ExperimentConfig, video: SyntheticVideo, detections=None) -> list[SpaceTimeCube]:
    j = cfg.jigsaw
    return build_cubes(video, j.T, j.S, j.G, j.filter, detections=detections)


def training_cubes(cfg: ExperimentConfig, videos: Sequence[SyntheticVideo]) -> list[SpaceTimeCube]:
    cubes = [c for v in videos for c in video_cubes(cfg, v)]
    cap = cfg.jigsaw.max_cubes
    if cap and len(cubes) > cap:
        rng = np.random.default_rng(cfg.branch_seed("jigsaw"))
        cubes = [cubes[i] for i in np.sort(rng.choice(len(cubes), cap, replace=False))]
    return cubes


def train_jigsaw_branch(cfg: ExperimentConfig, videos: Sequence[SyntheticVideo]) -> tuple[JigsawNet, list[dict]]:
    j = cfg.jigsaw
    hyper = JigsawHyper(j.epochs, j.batch_size, j.lr, cfg.branch_seed("jigsaw"))
    return train_jigsaw(jigsaw_net_for(cfg), training_cubes(cfg, videos), hyper)


def score_jigsaw(cfg: ExperimentConfig, net: JigsawNet,
                 videos: Sequence[SyntheticVideo]) -> dict[str, list[FrameScoreSeries]]:
    """Both scopes at once.

    Cubes are built per object, so dropping human cubes after building is the
    same as building from human-free detections; normality is computed once.
    """
    out = {ALL_OBJECTS: [], NON_HUMAN_ONLY: []}
    for v in videos:
        cubes = video_cubes(cfg, v)
        normal = cube_normality(net, cubes)
        for scope in out:
            out[scope].append(aggregate_cube_scores(cubes, normal, v.n_frames, scope, v.video_id))
    return out


# --- experiment -------------------------------------------------------------------

@dataclass
class ExperimentResult:
    config: ExperimentConfig
    skeleton: list[FrameScoreSeries]
    jigsaw: dict[str, list[FrameScoreSeries]]
    fused: dict[str, list[FusedResult]]
    labels: list[np.ndarray]
    report: ComparisonReport | None
    runs: dict[str, LabeledScores] = field(default_factory=dict)
    rocs: dict[str, RocCurve] = field(default_factory=dict)
    flow_model: FlowModel | None = None
    flow_curve: list[float] = field(default_factory=list)
    jigsaw_net: JigsawNet | None = None
    jigsaw_curve: list[dict] = field(default_factory=list)

    def auc(self, run: str) -> float:
        return dict(self.report.rows)[run]


def mode_fusion(cfg: ExperimentConfig, mode: str) -> FusionConfig:
    return FusionConfig(mode, cfg.fusion.normalization, cfg.fusion.missing_default)


def branch_run(series: Sequence[FrameScoreSeries], cfg: ExperimentConfig) -> list[FrameScoreSeries]:
    """A single branch evaluated alone gets the same fill/normalize treatment as in fusion."""
    return normalize_scores([fill_missing(s, cfg.fusion.missing_default) for s in series],
                            cfg.fusion.normalization)


def evaluate(cfg: ExperimentConfig, skeleton, jigsaw: dict, labels) -> tuple[dict, dict, ComparisonReport, dict]:
    fused = {mode: fuse_test_set(skeleton, jigsaw[mode_fusion(cfg, mode).jigsaw_scope], mode_fusion(cfg, mode))
             for mode in (WO_HUMAN, W_HUMAN)}
    runs = {RUN_SKELETON: LabeledScores.from_series(branch_run(skeleton, cfg), labels),
            RUN_JIGSAW: LabeledScores.from_series(branch_run(jigsaw[ALL_OBJECTS], cfg), labels)}
    for mode, res in fused.items():
        runs[RUN_FUSED[mode]] = LabeledScores.from_series([r.fused for r in res], labels)
    with stage("eval"):
        report = compare_runs(list(runs.items()))
        rocs = {name: roc_curve(ls) for name, ls in runs.items()}
    return fused, runs, report, rocs


def run_pipeline(cfg: ExperimentConfig, data=None, *, flow_model: FlowModel | None = None,
                 jigsaw_net: JigsawNet | None = None) -> ExperimentResult:
    """In-memory run. Pre-built models skip the corresponding training stage."""
    cfg.validate()
    with stage("synth"):
        train, test = data if data is not None else generate_dataset(cfg.synth, cfg.seed)
    flow_curve, jig_curve = [], []
    with stage("train-flow"):
        if flow_model is None:
            flow_model, flow_curve = train_flow_branch(cfg, train)
    with stage("train-jigsaw"):
        if jigsaw_net is None:
            jigsaw_net, jig_curve = train_jigsaw_branch(cfg, train)
    with stage("score"):
        skeleton = score_skeleton(cfg, flow_model, test)
        jigsaw = score_jigsaw(cfg, jigsaw_net, test)
    labels = [np.asarray(v.labels) for v in test]
    with stage("fuse"):
        fused, runs, report, rocs = evaluate(cfg, skeleton, jigsaw, labels)
    return ExperimentResult(cfg, skeleton, jigsaw, fused, labels, report, runs, rocs,
                            flow_model, flow_curve, jigsaw_net, jig_curve)


def run_experiment(cfg: ExperimentConfig, out_dir, config_text: str | None = None) -> ExperimentResult:
    """Full run persisted to ``out_dir``; partial outputs stay on disk if a stage fails."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dio._write_text(out / "config.ini", config_text if config_text is not None else config_to_ini(cfg))
    with stage("synth"):
        train, test = generate_dataset(cfg.synth, cfg.seed)
        dio.write_dataset(train, test, out / "data", dataclasses.asdict(cfg.synth))
    with stage("train-flow"):
        flow_model, flow_curve = train_flow_branch(cfg, train)
        dio.save_checkpoint(out / "flow.ckpt", "flow", flow_model.config(), flow_model.params)
        dio.write_curve([{"epoch": i, "nll": v} for i, v in enumerate(flow_curve)], out / "flow_curve.csv")
    with stage("train-jigsaw"):
        jig_net, jig_curve = train_jigsaw_branch(cfg, train)
        dio.save_checkpoint(out / "jigsaw.ckpt", "jigsaw", jig_net.config(), jig_net.params)
        dio.write_curve(jig_curve, out / "jigsaw_curve.csv")
    with stage("score"):
        skeleton = score_skeleton(cfg, flow_model, test)
        jigsaw = score_jigsaw(cfg, jig_net, test)
        dio.write_scores(skeleton, out / "scores_skeleton.csv")
        dio.write_scores(jigsaw[ALL_OBJECTS], out / "scores_jigsaw.csv")
        dio.write_scores(jigsaw[NON_HUMAN_ONLY], out / "scores_jigsaw_non_human.csv")
    labels = [np.asarray(v.labels) for v in test]
    with stage("fuse"):
        fused, runs, report, rocs = evaluate(cfg, skeleton, jigsaw, labels)
        for mode, res in fused.items():
            dio.write_fused(res, out / f"scores_fused_{mode}.csv")
        dio.write_fused(fused[cfg.fusion.mode], out / "scores_fused.csv")
    dio.write_roc(rocs, out / "roc.csv")
    dio._write_text(out / "report.csv", report.csv())
    dio._write_text(out / "report.txt", report.text())
    return ExperimentResult(cfg, skeleton, jigsaw, fused, labels, report, runs, rocs,
                            flow_model, flow_curve, jig_net, jig_curve)
