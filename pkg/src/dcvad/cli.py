"""Command-line entry point.

Exit status: 0 success, 1 usage or config error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

import numpy as np

from . import io as dio
from . import pipeline as pl
from .config import ExperimentConfig, load_config
from .errors import ConfigError, DcvadError, InvalidInputError
from .evaluation import LabeledScores, compare_runs, roc_curve
from .flow import FlowModel
from .fusion import NORMALIZATIONS, FusionConfig, fuse_test_set
from .jigsaw import ALL_OBJECTS, NON_HUMAN_ONLY, JigsawNet
from .scores import FrameScoreSeries
from .synth import generate_dataset
from .taxonomy import COLUMN_NAMES, builtin_registry, query, to_csv

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=None, help="experiment seed (overrides the config)")
    p.add_argument("--config", default=None, help="INI experiment config")
    p.add_argument("--out", default=None, help="output directory")
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dcvad", description="Two-branch video anomaly detection on synthetic scenes.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = [_common()]

    sub.add_parser("synth", parents=common, help="generate a train/test dataset")

    p = sub.add_parser("train-flow", parents=common, help="train the skeleton flow")
    p.add_argument("--data", required=True, help="dataset directory written by synth")

    p = sub.add_parser("train-jigsaw", parents=common, help="train the jigsaw network")
    p.add_argument("--data", required=True)

    p = sub.add_parser("score", parents=common, help="score the test split with both branches")
    p.add_argument("--data", required=True)
    p.add_argument("--flow", required=True, help="flow checkpoint")
    p.add_argument("--jigsaw", required=True, help="jigsaw checkpoint")

    p = sub.add_parser("fuse", parents=common, help="fill, normalize and sum two score files")
    p.add_argument("--skeleton", required=True)
    p.add_argument("--jigsaw", required=True)
    p.add_argument("--normalization", choices=NORMALIZATIONS, default=None)
    p.add_argument("--missing-default", type=float, default=None)

    p = sub.add_parser("eval", parents=common, help="micro-AUC report over score files")
    p.add_argument("--scores", nargs="+", required=True, help="score CSVs; the run name is the file stem")
    p.add_argument("--labels", required=True, help="labels CSV or a dataset split directory")

    p = sub.add_parser("taxonomy", parents=common, help="print the method registry")
    p.add_argument("--query", default=None, metavar="DIM=VALUE", help=f"filter, DIM one of {', '.join(COLUMN_NAMES)}")

    sub.add_parser("run", parents=common, help="full pipeline")
    return parser


def _config(args, *, required: bool = False) -> tuple[ExperimentConfig, str | None]:
    if args.config is None:
        if required:
            raise ConfigError("--config is required")
        cfg, text = ExperimentConfig(), None
    else:
        cfg, text = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg, text


def _out(args, cfg: ExperimentConfig, default: str = ".") -> Path:
    out = Path(args.out or cfg.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _cmd_synth(args) -> int:
    cfg, _ = _config(args)
    train, test = generate_dataset(cfg.synth, cfg.seed)
    out = _out(args, cfg)
    dio.write_dataset(train, test, out, dataclasses.asdict(cfg.synth))
    print(f"wrote {len(train)} train and {len(test)} test videos to {out}")
    return EXIT_OK


def _cmd_train_flow(args) -> int:
    cfg, _ = _config(args)
    train, _ = dio.read_dataset(args.data)
    with pl.stage("train-flow"):
        model, curve = pl.train_flow_branch(cfg, train)
    out = _out(args, cfg)
    dio.save_checkpoint(out / "flow.ckpt", "flow", model.config(), model.params)
    dio.write_curve([{"epoch": i, "nll": v} for i, v in enumerate(curve)], out / "flow_curve.csv")
    print(f"flow NLL {curve[0]:.2f} -> {curve[-1]:.2f}; checkpoint {out / 'flow.ckpt'}")
    return EXIT_OK


def _cmd_train_jigsaw(args) -> int:
    cfg, _ = _config(args)
    train, _ = dio.read_dataset(args.data)
    with pl.stage("train-jigsaw"):
        net, curve = pl.train_jigsaw_branch(cfg, train)
    out = _out(args, cfg)
    dio.save_checkpoint(out / "jigsaw.ckpt", "jigsaw", net.config(), net.params)
    dio.write_curve(curve, out / "jigsaw_curve.csv")
    last = curve[-1] if curve else {"train_temporal": float("nan"), "train_spatial": float("nan")}
    print(f"jigsaw train accuracy temporal {last['train_temporal']:.3f} spatial {last['train_spatial']:.3f}")
    return EXIT_OK


def _load_model(path, kind: str):
    got, config, params = dio.load_checkpoint(path)
    if got != kind:
        raise InvalidInputError(f"{path} holds a {got} checkpoint, expected {kind}")
    return (FlowModel if kind == "flow" else JigsawNet)(**config, params=params)


def _cmd_score(args) -> int:
    cfg, _ = _config(args)
    _, test = dio.read_dataset(args.data)
    flow, net = _load_model(args.flow, "flow"), _load_model(args.jigsaw, "jigsaw")
    with pl.stage("score"):
        skeleton = pl.score_skeleton(cfg, flow, test)
        jigsaw = pl.score_jigsaw(cfg, net, test)
    out = _out(args, cfg)
    dio.write_scores(skeleton, out / "scores_skeleton.csv")
    dio.write_scores(jigsaw[ALL_OBJECTS], out / "scores_jigsaw.csv")
    dio.write_scores(jigsaw[NON_HUMAN_ONLY], out / "scores_jigsaw_non_human.csv")
    print(f"scored {len(test)} videos into {out}")
    return EXIT_OK


def _cmd_fuse(args) -> int:
    cfg, _ = _config(args)
    fc = FusionConfig(cfg.fusion.mode, args.normalization or cfg.fusion.normalization,
                      cfg.fusion.missing_default if args.missing_default is None else args.missing_default)
    with pl.stage("fuse"):
        results = fuse_test_set(dio.read_scores(args.skeleton), dio.read_scores(args.jigsaw), fc)
    out = _out(args, cfg)
    dio.write_fused(results, out / "scores_fused.csv")
    print(f"fused {len(results)} videos into {out / 'scores_fused.csv'}")
    return EXIT_OK


def _align_labels(series: list[FrameScoreSeries], rows, path) -> list[np.ndarray]:
    table = {(v, f): y for v, f, y in rows}
    labels = []
    for s in series:
        try:
            labels.append(np.array([table[(s.video_id, f)] for f in range(len(s))]))
        except KeyError as e:
            raise InvalidInputError(f"{path} has no label for video {e.args[0][0]!r} frame {e.args[0][1]}") from None
    return labels


def _cmd_eval(args) -> int:
    cfg, _ = _config(args)
    rows = dio.read_split_labels(args.labels) if Path(args.labels).is_dir() else dio.read_labels(args.labels)
    runs = []
    for path in args.scores:
        series = dio.read_scores(path)
        if any(s.missing.any() for s in series):
            raise InvalidInputError(f"{path} contains NA scores; fuse or fill them first")
        runs.append((Path(path).stem, LabeledScores.from_series(series, _align_labels(series, rows, args.labels))))
    with pl.stage("eval"):
        report = compare_runs(runs)
        rocs = {name: roc_curve(ls) for name, ls in runs}
    sys.stdout.write(report.text())
    if args.out or cfg.out:
        out = _out(args, cfg)
        dio._write_text(out / "report.csv", report.csv())
        dio.write_roc(rocs, out / "roc.csv")
    return EXIT_OK


def _cmd_taxonomy(args) -> int:
    records = builtin_registry()
    if args.query:
        dim, sep, value = args.query.partition("=")
        if not sep:
            raise ConfigError("--query expects DIM=VALUE")
        try:
            records = query(records, dim.strip(), int(value))
        except ValueError as e:
            if isinstance(e, DcvadError):
                raise
            raise ConfigError(f"query value must be an integer, got {value!r}") from None
    rows = [(r.venue,) + r.code() for r in records]
    sys.stdout.write(dio.render_table(("Venue",) + COLUMN_NAMES, rows))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        dio._write_text(out / "taxonomy.csv", to_csv(records))
    return EXIT_OK


def _cmd_run(args) -> int:
    # parse before touching the filesystem so a bad config leaves nothing behind
    cfg, text = _config(args, required=True)
    out = Path(args.out or cfg.out or "runs/latest")
    result = pl.run_experiment(cfg, out, text)
    sys.stdout.write(result.report.text())
    return EXIT_OK


_COMMANDS = {"synth": _cmd_synth, "train-flow": _cmd_train_flow, "train-jigsaw": _cmd_train_jigsaw,
             "score": _cmd_score, "fuse": _cmd_fuse, "eval": _cmd_eval, "taxonomy": _cmd_taxonomy,
             "run": _cmd_run}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return _COMMANDS[args.command](args)
    except DcvadError as e:
        print(f"dcvad {args.command}: {e}", file=sys.stderr)
        return e.exit_code
    except (FloatingPointError, OverflowError) as e:
        print(f"dcvad {args.command}: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except OSError as e:
        print(f"dcvad {args.command}: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
