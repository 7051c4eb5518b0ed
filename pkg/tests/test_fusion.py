import numpy as np
import pytest
from hypothesis import given, strategies as st

from dcvad.errors import AlignmentError, ConfigError
from dcvad.fusion import (W_HUMAN, WO_HUMAN, FusionConfig, fill_missing, fuse, fuse_test_set, normalize_scores,
                          select_mode_inputs)
from dcvad.jigsaw import ALL_OBJECTS, NON_HUMAN_ONLY
from dcvad.scores import FrameScoreSeries
from dcvad.synth import HUMAN, NON_HUMAN, DetectionBox

NAN = float("nan")


def S(vals, vid="v"):
    return FrameScoreSeries(vid, np.array(vals, dtype=float))


def test_fill_missing_examples():
    assert fill_missing(S([NAN, 0.4, NAN]), 0).scores.tolist() == [0, 0.4, 0]
    assert fill_missing(S([0.1, 0.2]), 0).scores.tolist() == [0.1, 0.2]
    assert fill_missing(FrameScoreSeries.empty("v", 7), 0).scores.tolist() == [0.0] * 7
    assert fill_missing(S([NAN, 1.0]), -3.0).scores.tolist() == [-3.0, 1.0]


def test_normalize_examples():
    assert normalize_scores([S([0, 5, 10])], "minmax")[0].scores.tolist() == [0, 0.5, 1]
    assert normalize_scores([S([3, 3, 3])], "minmax")[0].scores.tolist() == [0, 0, 0]
    z = normalize_scores([S([3, 3, 3])], "zscore")[0].scores
    assert z.tolist() == [0, 0, 0]
    s = S([4.0, -1.0, 2.5])
    assert np.array_equal(normalize_scores([s], "none")[0].scores, s.scores)


def test_normalize_uses_concatenated_statistics():
    a, b = S([0, 2], "a"), S([4, 8], "b")
    na, nb = normalize_scores([a, b], "minmax")
    assert na.scores.tolist() == [0, 0.25] and nb.scores.tolist() == [0.5, 1.0]
    za, zb = normalize_scores([a, b], "zscore")
    allz = np.r_[za.scores, zb.scores]
    assert allz.mean() == pytest.approx(0, abs=1e-12) and allz.std() == pytest.approx(1, abs=1e-12)


def test_normalize_unknown_method():
    with pytest.raises(ConfigError):
        normalize_scores([S([1])], "rank")


def test_fuse_examples():
    r = fuse(S([0.2, 0.9]), S([0.1, 0.8]))
    assert np.allclose(r.fused.scores, [0.3, 1.7])
    sk = S([0.3, 0.7, 0.1])
    assert np.array_equal(fuse(sk, S([0, 0, 0])).fused.scores, sk.scores)


def test_fuse_alignment_errors():
    with pytest.raises(AlignmentError):
        fuse(S([1, 2]), S([1, 2, 3]))
    with pytest.raises(AlignmentError):
        fuse(S([1, 2], "a"), S([1, 2], "b"))


finite = st.floats(-1e6, 1e6, allow_nan=False)


@given(st.lists(st.tuples(finite, finite, finite), min_size=1, max_size=30))
def test_fuse_algebra(rows):
    a, b, c = (S([r[i] for r in rows]) for i in range(3))
    assert np.array_equal(fuse(a, b).fused.scores, fuse(b, a).fused.scores)
    left = fuse(fuse(a, b).fused, c).fused.scores
    right = fuse(a, fuse(b, c).fused).fused.scores
    assert np.allclose(left, right, rtol=1e-12, atol=1e-6)
    r = fuse(a, b)
    assert np.array_equal(r.skeleton + r.jigsaw, r.fused.scores)


def test_select_mode_inputs():
    dets = [DetectionBox(0, i, HUMAN, (0, 0, 1, 1)) for i in range(3)]
    dets += [DetectionBox(0, 100 + i, NON_HUMAN, (0, 0, 1, 1)) for i in range(2)]
    kept = select_mode_inputs(FusionConfig(WO_HUMAN), dets)
    assert len(kept) == 2 and all(d.cls == NON_HUMAN for d in kept)
    assert select_mode_inputs(FusionConfig(W_HUMAN), dets) == dets
    assert select_mode_inputs(FusionConfig(WO_HUMAN), dets[:3]) == []


def test_mode_sets_jigsaw_scope():
    assert FusionConfig(WO_HUMAN).jigsaw_scope == NON_HUMAN_ONLY
    assert FusionConfig(W_HUMAN).jigsaw_scope == ALL_OBJECTS


def test_config_validation():
    with pytest.raises(ConfigError):
        FusionConfig("BOTH")
    with pytest.raises(ConfigError):
        FusionConfig(W_HUMAN, "softmax")


def test_fuse_test_set_fills_then_normalizes():
    sk = [S([NAN, 10.0, 20.0], "a"), S([0.0, NAN, 30.0], "b")]
    jg = [FrameScoreSeries.empty("a", 3), S([0.5, 0.5, 1.0], "b")]
    out = fuse_test_set(sk, jg, FusionConfig(W_HUMAN, "minmax", 0.0))
    # skeleton after fill: [0,10,20,0,0,30] -> /30; jigsaw after fill: [0,0,0,.5,.5,1]
    assert np.allclose(out[0].fused.scores, [0, 1 / 3, 2 / 3])
    assert np.allclose(out[1].fused.scores, [0.5, 0.5, 2.0])
    assert np.array_equal(out[1].skeleton + out[1].jigsaw, out[1].fused.scores)


def test_fuse_test_set_video_mismatch():
    with pytest.raises(AlignmentError):
        fuse_test_set([S([1], "a")], [S([1], "b")], FusionConfig())


def test_filtering_cubes_after_building_matches_filtering_detections():
    from dcvad.config import ExperimentConfig
    from dcvad.jigsaw import JigsawNet, score_frames_jigsaw
    from dcvad.pipeline import score_jigsaw, video_cubes
    from dcvad.synth import SynthConfig, generate_dataset

    cfg = ExperimentConfig()
    cfg.synth = SynthConfig(train_videos=0, test_videos=2, frames=60, interval_min=12, interval_max=20)
    _, test = generate_dataset(cfg.synth, 5)
    net = JigsawNet(seed=1)
    got = score_jigsaw(cfg, net, test)[NON_HUMAN_ONLY]
    for v, series in zip(test, got):
        dets = select_mode_inputs(FusionConfig(WO_HUMAN), v.detections)
        cubes = video_cubes(cfg, v, detections=dets)
        ref = score_frames_jigsaw(net, cubes, v.n_frames, ALL_OBJECTS, v.video_id)
        assert np.array_equal(series.scores, ref.scores, equal_nan=True)


def test_all_human_scene_without_humans_fills_jigsaw_with_zero():
    from dcvad.config import parse_config
    from dcvad.pipeline import run_pipeline

    from conftest import TINY_INI

    cfg = parse_config(TINY_INI.replace("[synth]\n", "[synth]\nobjects = 0\nanomaly_fraction = 1.0\npose_share = 1.0\n"))
    res = run_pipeline(cfg)
    assert all(s.missing.all() for s in res.jigsaw[NON_HUMAN_ONLY])
    assert all(np.all(r.jigsaw == 0.0) for r in res.fused[WO_HUMAN])
    assert all(not s.missing.all() for s in res.jigsaw[ALL_OBJECTS])
