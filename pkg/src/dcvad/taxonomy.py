"""Six-dimensional divide-and-conquer classification and the registry of surveyed methods."""

from __future__ import annotations

import csv
import io
from dataclasses import astuple, dataclass, fields

from .errors import ConfigError, DimensionError

DIMENSIONS = ("in_mod", "train_focus", "model_proc", "model_branch", "out_mod", "test_focus")
COLUMN_NAMES = ("InMod", "TrainFocus", "ModelProc", "ModelBranch", "OutMod", "TestFocus")
_BY_COLUMN = dict(zip(COLUMN_NAMES, DIMENSIONS))


@dataclass(frozen=True)
class TaxonomyRecord:
    venue: str
    in_mod: int
    train_focus: int
    model_proc: int
    model_branch: int
    out_mod: int
    test_focus: int

    def __post_init__(self):
        for name in DIMENSIONS:
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool):
                raise ConfigError(f"{name} must be an int, got {v!r}")
            if name == "model_branch":
                if v < 1:
                    raise ConfigError("model_branch must be at least 1")
            elif v not in (0, 1):
                raise ConfigError(f"{name} must be 0 or 1, got {v}")

    def code(self) -> tuple[int, ...]:
        return astuple(self)[1:]


_TABLE = (
    ("CVPR 2019", 0, 0, 0, 2, 0, 0),
    ("ACM MM 2020", 0, 0, 0, 2, 1, 0),
    ("CVPR 2021", 0, 0, 1, 4, 0, 0),
    ("AAAI 2022", 0, 0, 0, 2, 1, 0),
    ("ACM MM 2022", 0, 1, 1, 2, 0, 1),
    ("arXiv 2022 (knowledge)", 0, 0, 1, 2, 0, 0),
    ("PR 2022", 0, 0, 1, 3, 0, 0),
    ("arXiv 2022 (attribute)", 1, 0, 1, 3, 0, 0),
    ("ECCV 2022", 0, 0, 0, 2, 0, 0),
    ("CVIU 2023", 0, 0, 1, 9, 1, 0),
)


def builtin_registry() -> list[TaxonomyRecord]:
    return [TaxonomyRecord(*row) for row in _TABLE]


def dimension_name(dim: str) -> str:
    """Accept either the snake_case field or the table's column header."""
    if dim in DIMENSIONS:
        return dim
    if dim in _BY_COLUMN:
        return _BY_COLUMN[dim]
    raise DimensionError(f"unknown dimension {dim!r}; expected one of {', '.join(COLUMN_NAMES)}")


def query(records, dimension: str, value: int) -> list[TaxonomyRecord]:
    dim = dimension_name(dimension)
    value = int(value)
    if dim == "model_branch" and value < 1 or dim != "model_branch" and value not in (0, 1):
        raise DimensionError(f"value {value} is not valid for {dim}")
    return [r for r in records if getattr(r, dim) == value]


def classify_self(mode: str = "W_HUMAN") -> TaxonomyRecord:
    # pose + appearance in, two different models, two branches, one fused output;
    # dropping humans from the appearance branch focuses testing on non-human anomalies
    if mode not in ("WO_HUMAN", "W_HUMAN"):
        raise ConfigError(f"unknown fusion mode {mode!r}")
    return TaxonomyRecord(f"this pipeline ({mode})", 1, 0, 1, 2, 0, int(mode == "WO_HUMAN"))


def to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("Venue",) + COLUMN_NAMES)
    for r in records:
        w.writerow(astuple(r))
    return buf.getvalue()


def from_csv(text: str) -> list[TaxonomyRecord]:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != ("Venue",) + COLUMN_NAMES:
        raise ConfigError("taxonomy CSV header does not match the expected columns")
    n = len(fields(TaxonomyRecord))
    out = []
    for row in rows[1:]:
        if len(row) != n:
            raise ConfigError(f"taxonomy row has {len(row)} fields, expected {n}")
        out.append(TaxonomyRecord(row[0], *(int(v) for v in row[1:])))
    return out
