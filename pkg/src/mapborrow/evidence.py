"""Binomial 2x2 counts to log risk-ratio evidence, and NI margin handling."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError, DomainError

PHASES = ("II", "III")
COUNT_FIELDS = ("study_id", "r_t", "n_t", "r_c", "n_c", "phase")


@dataclass(frozen=True)
class StudyCounts:
    study_id: str
    r_t: int
    n_t: int
    r_c: int
    n_c: int
    phase: str = "II"

    def __post_init__(self):
        if self.n_t < 1 or self.n_c < 1:
            raise DataError(f"study {self.study_id}: arm sizes must be >= 1")
        if not (0 <= self.r_t <= self.n_t and 0 <= self.r_c <= self.n_c):
            raise DataError(f"study {self.study_id}: responders must lie in [0, n]")
        if self.phase not in PHASES:
            raise DataError(f"study {self.study_id}: phase must be one of {PHASES}, got {self.phase!r}")

    @property
    def n_total(self) -> int:
        return self.n_t + self.n_c

    def swapped(self) -> "StudyCounts":
        """Same study with treatment and control labels exchanged."""
        return StudyCounts(self.study_id, self.r_c, self.n_c, self.r_t, self.n_t, self.phase)


@dataclass(frozen=True)
class Evidence:
    """Approximately normal summary: log risk ratio ``y`` with standard error ``s``."""

    study_id: str
    y: float
    s: float

    def __post_init__(self):
        if not (self.s > 0 and math.isfinite(self.s) and math.isfinite(self.y)):
            raise DataError(f"study {self.study_id}: need finite y and positive finite s")

    def wald_interval(self, z: float) -> tuple[float, float]:
        return self.y - z * self.s, self.y + z * self.s


@dataclass(frozen=True)
class NiMargin:
    p_control: float
    delta_abs: float
    rr_threshold: float

    @property
    def log_threshold(self) -> float:
        return math.log(self.rr_threshold)


def _is_degenerate(r: int, n: int) -> bool:
    return r == 0 or r == n


def log_rr(r_t, n_t, r_c, n_c, correction: float = 0.5):
    """Vectorised log risk ratio and standard error.

    ``correction`` is added to responders (and twice to totals) of both arms of
    any study with a 0 or n cell; other studies are left untouched.
    """
    r_t, n_t, r_c, n_c = (np.asarray(v, dtype=float) for v in (r_t, n_t, r_c, n_c))
    degenerate = (r_t == 0) | (r_t == n_t) | (r_c == 0) | (r_c == n_c)
    c = np.where(degenerate, correction, 0.0)
    a, b = r_t + c, n_t + 2 * c
    cc, d = r_c + c, n_c + 2 * c
    with np.errstate(divide="ignore", invalid="ignore"):
        y = np.log(a / b) - np.log(cc / d)
        s = np.sqrt(1 / a - 1 / b + 1 / cc - 1 / d)
    return y, s


def to_evidence(counts: StudyCounts, correction: float = 0.5) -> Evidence:
    if correction < 0:
        raise DomainError("correction must be non-negative")
    degenerate = _is_degenerate(counts.r_t, counts.n_t) or _is_degenerate(counts.r_c, counts.n_c)
    if degenerate and correction == 0 and (counts.r_t == 0 or counts.r_c == 0):
        raise DataError(f"study {counts.study_id}: zero responders need a continuity correction")
    y, s = log_rr(counts.r_t, counts.n_t, counts.r_c, counts.n_c, correction)
    y, s = float(y), float(s)
    if not (s > 0):
        raise DataError(f"study {counts.study_id}: degenerate evidence (s = {s})")
    return Evidence(counts.study_id, y, s)


def margin_to_rr(p_control: float, delta_abs: float) -> NiMargin:
    """Map an absolute NI margin on the risk-difference scale to an RR threshold."""
    if not (0 < p_control <= 1):
        raise DomainError(f"p_control must lie in (0, 1], got {p_control}")
    if not (0 <= delta_abs < p_control):
        raise DomainError(f"margin {delta_abs} must lie in [0, p_control)")
    return NiMargin(p_control, delta_abs, (p_control - delta_abs) / p_control)


# --- dataset ingestion -------------------------------------------------------

def _parse_record(rec: dict, where: str) -> StudyCounts | Evidence:
    try:
        sid = str(rec["study_id"]).strip()
        if {"r_t", "n_t", "r_c", "n_c"} <= rec.keys():
            ints = {}
            for k in ("r_t", "n_t", "r_c", "n_c"):
                v = float(rec[k])
                if v != int(v):
                    raise ValueError(f"{k} must be an integer count, got {rec[k]!r}")
                ints[k] = int(v)
            phase = str(rec.get("phase") or "II").strip()
            return StudyCounts(sid, phase=phase, **ints)
        if {"y", "s"} <= rec.keys():
            return Evidence(sid, float(rec["y"]), float(rec["s"]))
        raise KeyError("need r_t,n_t,r_c,n_c or y,s")
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"{where}: {exc}") from None


def parse_dataset(text: str, source: str = "<data>") -> list[StudyCounts | Evidence]:
    """Parse CSV (header row) or JSON-lines records into counts/evidence."""
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines:
        raise DataError(f"{source}: empty dataset")
    out = []
    if lines[0].lstrip().startswith("{"):
        for i, ln in enumerate(lines, 1):
            try:
                rec = json.loads(ln)
            except json.JSONDecodeError as exc:
                raise DataError(f"{source}: record {i}: invalid JSON ({exc.msg})") from None
            if rec.get("record", "evidence") not in ("evidence", "counts"):
                continue
            out.append(_parse_record(rec, f"{source}: record {i}"))
    else:
        reader = csv.DictReader(io.StringIO("\n".join(lines)))
        if reader.fieldnames is None or "study_id" not in reader.fieldnames:
            raise DataError(f"{source}: header must contain study_id")
        for i, rec in enumerate(reader, 2):
            if None in rec or any(v is None for v in rec.values()):
                raise DataError(f"{source}: line {i}: wrong number of fields")
            out.append(_parse_record(rec, f"{source}: line {i}"))
    if not out:
        raise DataError(f"{source}: no study records")
    ids = [r.study_id for r in out]
    if len(set(ids)) != len(ids):
        raise DataError(f"{source}: duplicate study_id")
    return out


def load_dataset(path: str | Path) -> list[StudyCounts | Evidence]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror}") from None
    return parse_dataset(text, str(path))


def as_evidence(records: Iterable[StudyCounts | Evidence], correction: float = 0.5) -> list[Evidence]:
    return [r if isinstance(r, Evidence) else to_evidence(r, correction) for r in records]


def counts_to_csv(counts: Sequence[StudyCounts]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=COUNT_FIELDS, lineterminator="\n")
    w.writeheader()
    for c in counts:
        w.writerow(asdict(c))
    return buf.getvalue()
