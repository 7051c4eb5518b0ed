"""Experiment configuration: dataclasses plus an INI reader/writer."""

from __future__ import annotations

import configparser
import dataclasses
import typing
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .fusion import FusionConfig
from .synth import SynthConfig


@dataclass
class FlowSettings:
    window: int = 24
    train_stride: int = 4
    score_stride: int = 1
    n_layers: int = 8
    hidden: int = 64
    s_max: float = 4.0
    epochs: int = 40
    batch_size: int = 128
    lr: float = 1e-3
    seed: int = 0
    normalize: bool = True
    max_windows: int = 0  # 0 keeps them all


@dataclass
class JigsawSettings:
    T: int = 9
    S: int = 24
    G: int = 2
    sub_frames: int = 4
    filter: float = 0.8
    epochs: int = 60
    batch_size: int = 100
    lr: float = 3e-3
    seed: int = 0
    max_cubes: int = 2000  # 0 keeps them all
    embed: int = 16
    hidden: int = 128


@dataclass
class ExperimentConfig:
    seed: int = 0
    synth: SynthConfig = field(default_factory=SynthConfig)
    flow: FlowSettings = field(default_factory=FlowSettings)
    jigsaw: JigsawSettings = field(default_factory=JigsawSettings)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    out: str = ""

    def branch_seed(self, branch: str) -> int:
        """Combine the experiment seed with a branch's own seed."""
        own = {"flow": self.flow.seed, "jigsaw": self.jigsaw.seed}[branch]
        tag = {"flow": 1, "jigsaw": 2}[branch]
        return int(np.random.SeedSequence([self.seed, tag, own]).generate_state(1)[0])

    def validate(self) -> None:
        self.synth.validate()
        j = self.jigsaw
        if j.T % 2 == 0 or j.T < 1:
            raise ConfigError("jigsaw T must be odd")
        if j.S % j.G:
            raise ConfigError("jigsaw S must be divisible by G")
        if not 1 <= j.sub_frames <= j.T:
            raise ConfigError("jigsaw sub_frames must lie in [1, T]")
        if not 0.0 <= j.filter <= 1.0:
            raise ConfigError("jigsaw filter must lie in [0, 1]")
        if self.flow.window < 2 or self.flow.train_stride < 1 or self.flow.score_stride < 1:
            raise ConfigError("flow window must be >= 2 and strides >= 1")
        for name, v in (("flow epochs", self.flow.epochs), ("jigsaw epochs", j.epochs)):
            if v < 0:
                raise ConfigError(f"{name} must be non-negative")


_SECTIONS = {"synth": SynthConfig, "flow": FlowSettings, "jigsaw": JigsawSettings, "fusion": FusionConfig}


def _parse_value(raw: str, annotation, name: str):
    raw = raw.strip()
    try:
        if annotation is bool:
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if annotation is int:
            return int(raw)
        if annotation is float:
            return float(raw)
        if annotation is str:
            return raw
        origin = typing.get_origin(annotation)
        if origin is tuple:
            args = typing.get_args(annotation)
            items = [p.strip() for p in raw.split(",") if p.strip()]
            elem = args[0]
            if len(args) == 2 and args[1] is Ellipsis:
                return tuple(_parse_value(p, elem, name) for p in items)
            if len(items) != len(args):
                raise ValueError(raw)
            return tuple(_parse_value(p, a, name) for p, a in zip(items, args))
    except ValueError:
        raise ConfigError(f"cannot parse {name} = {raw!r}") from None
    raise ConfigError(f"unsupported option type for {name}")


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(_format_value(x) for x in v)
    return repr(v) if isinstance(v, float) else str(v)


def _build(cls, options: dict[str, str], section: str):
    hints = typing.get_type_hints(cls)
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = set(options) - known
    if unknown:
        raise ConfigError(f"unknown option(s) in [{section}]: {', '.join(sorted(unknown))}")
    kwargs = {k: _parse_value(v, hints[k], f"{section}.{k}") for k, v in options.items()}
    return cls(**kwargs)


def parse_config(text: str) -> ExperimentConfig:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str  # keep "T", "S", "G"
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}") from None
    unknown = set(cp.sections()) - set(_SECTIONS) - {"experiment"}
    if unknown:
        raise ConfigError(f"unknown section(s): {', '.join(sorted(unknown))}")
    parts = {name: _build(cls, dict(cp[name]) if cp.has_section(name) else {}, name)
             for name, cls in _SECTIONS.items()}
    top = dict(cp["experiment"]) if cp.has_section("experiment") else {}
    extra = set(top) - {"seed", "out"}
    if extra:
        raise ConfigError(f"unknown option(s) in [experiment]: {', '.join(sorted(extra))}")
    cfg = ExperimentConfig(seed=_parse_value(top.get("seed", "0"), int, "experiment.seed"),
                           out=top.get("out", "").strip(), **parts)
    cfg.validate()
    return cfg


def load_config(path) -> tuple[ExperimentConfig, str]:
    """Returns the parsed config and its verbatim text."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    return parse_config(text), text


def config_to_ini(cfg: ExperimentConfig) -> str:
    lines = ["[experiment]", f"seed = {cfg.seed}"]
    if cfg.out:
        lines.append(f"out = {cfg.out}")
    for name in _SECTIONS:
        obj = getattr(cfg, name)
        lines += ["", f"[{name}]"]
        lines += [f"{f.name} = {_format_value(getattr(obj, f.name))}" for f in dataclasses.fields(obj)]
    return "\n".join(lines) + "\n"
