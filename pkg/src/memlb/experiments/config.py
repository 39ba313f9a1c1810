"""Experiment configuration and the sweep record type."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import asdict, dataclass, field

CSV_HEADER = ["d", "M", "alg", "trials", "successes", "mean_queries", "median_queries", "periods_done",
              "c_H", "seed"]


@dataclass
class ExperimentConfig:
    mode: str = "opt"
    ds: list = field(default_factory=lambda: [32])
    Ms: list = field(default_factory=list)
    ks: list = field(default_factory=lambda: [2])
    algs: list = field(default_factory=lambda: ["descender"])
    trials: int = 10
    seed: int = 0
    budget: int | None = None
    overrides: dict = field(default_factory=dict)
    paper_exact: bool = False
    c_H: float = 0.1
    out: str | None = None
    m: int | None = None

    def __post_init__(self):
        if self.mode not in ("opt", "feas", "ovg", "verify"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.trials < 0:
            raise ValueError("trials must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def thread_count() -> int:
    try:
        return max(1, int(os.environ.get("MEMLB_THREADS", "1")))
    except ValueError:
        return 1


def parse_overrides(items) -> dict:
    out = {}
    for item in items or []:
        for part in item.split(","):
            if not part.strip():
                continue
            key, sep, val = part.partition("=")
            if not sep:
                raise ValueError(f"override {part!r} is not key=val")
            out[key.strip()] = float(val)
    return out


def _fmt(v) -> str:
    if isinstance(v, float):
        return "nan" if math.isnan(v) else repr(v)
    return str(v)


@dataclass
class TradeoffRecord:
    d: int
    M: int
    alg: str
    trials: int
    successes: int
    mean_queries: float
    median_queries: float
    periods_done: float
    c_H: float
    seed: int
    runtime: float = field(default=0.0, compare=False)
    note: str = field(default="", compare=False)

    def __post_init__(self):
        if self.successes > self.trials:
            raise ValueError("success count exceeds trials")

    def csv_row(self) -> list[str]:
        return [_fmt(getattr(self, k)) for k in CSV_HEADER]

    @classmethod
    def from_row(cls, row: dict) -> "TradeoffRecord":
        return cls(int(row["d"]), int(row["M"]), row["alg"], int(row["trials"]), int(row["successes"]),
                   float(row["mean_queries"]), float(row["median_queries"]), float(row["periods_done"]),
                   float(row["c_H"]), int(row["seed"]))

    def same_values(self, other: "TradeoffRecord") -> bool:
        a, b = self.csv_row(), other.csv_row()
        return a == b


def records_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow(r.csv_row())
    return buf.getvalue()


def records_from_csv(text: str) -> list[TradeoffRecord]:
    return [TradeoffRecord.from_row(row) for row in csv.DictReader(io.StringIO(text))]
