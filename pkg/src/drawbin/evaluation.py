"""Accuracy metrics, PSNR, and dataset-level reports.

Foreground is the positive class. Metrics with a zero denominator evaluate to 0.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .imaging import check_binary
from .errors import DimensionError

METRIC_NAMES = ("Re", "Sp", "Pr", "F-m")


@dataclass(frozen=True)
class Confusion:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other: "Confusion") -> "Confusion":
        return Confusion(self.tp + other.tp, self.tn + other.tn, self.fp + other.fp, self.fn + other.fn)


def _check_pair(pred: np.ndarray, truth: np.ndarray) -> None:
    check_binary(pred)
    check_binary(truth)
    if pred.shape != truth.shape:
        raise DimensionError(f"dimension mismatch: prediction {pred.shape} vs truth {truth.shape}")


def confusion(pred: np.ndarray, truth: np.ndarray) -> Confusion:
    _check_pair(pred, truth)
    tp = int(np.count_nonzero(pred & truth))
    fp = int(np.count_nonzero(pred & ~truth))
    fn = int(np.count_nonzero(~pred & truth))
    return Confusion(tp, pred.size - tp - fp - fn, fp, fn)


def _ratio(a: int, b: int) -> float:
    return a / b if b else 0.0


def metrics(c: Confusion) -> tuple[float, float, float, float]:
    """Recall, specificity, precision and F-measure."""
    re = _ratio(c.tp, c.tp + c.fn)
    sp = _ratio(c.tn, c.tn + c.fp)
    pr = _ratio(c.tp, c.tp + c.fp)
    fm = 2 * re * pr / (re + pr) if re + pr > 0 else 0.0
    return re, sp, pr, fm


def psnr(pred: np.ndarray, truth: np.ndarray) -> float:
    """PSNR of the 0/255 encodings; ``math.inf`` for identical maps."""
    _check_pair(pred, truth)
    diff = np.count_nonzero(pred != truth)
    if diff == 0:
        return math.inf
    mse = 255.0**2 * diff / pred.size
    return 10.0 * math.log10(255.0**2 / mse)


def format_psnr(value: float) -> str:
    return "inf" if math.isinf(value) else f"{value:.4f}"


@dataclass
class ImageResult:
    id: str
    re: float
    sp: float
    pr: float
    fm: float
    psnr: float
    seconds: float
    confusion: Confusion


@dataclass
class EvalReport:
    method: str
    rows: list[ImageResult] = field(default_factory=list)
    parameters: int | None = None
    mode: str = "macro"

    def aggregate(self) -> dict:
        """Mean over images (``macro``) or metrics of the pooled confusion (``micro``).

        Infinite PSNR values are left out of the PSNR mean and counted in ``psnr_inf``.
        """
        if not self.rows:
            raise ValueError("empty report")
        rows = sorted(self.rows, key=lambda r: r.id)
        if self.mode == "micro":
            pooled = rows[0].confusion
            for r in rows[1:]:
                pooled = pooled + r.confusion
            re, sp, pr, fm = metrics(pooled)
        else:
            re, sp, pr, fm = (math.fsum(getattr(r, k) for r in rows) / len(rows) for k in ("re", "sp", "pr", "fm"))
        finite = [r.psnr for r in rows if not math.isinf(r.psnr)]
        mean_psnr = math.fsum(finite) / len(finite) if finite else math.inf
        return {
            "re": re,
            "sp": sp,
            "pr": pr,
            "fm": fm,
            "psnr": mean_psnr,
            "psnr_inf": len(rows) - len(finite),
            "seconds": math.fsum(r.seconds for r in rows) / len(rows),
        }

    def to_records(self) -> list[dict]:
        out = []
        for r in sorted(self.rows, key=lambda r: r.id):
            rec = asdict(r)
            rec["psnr"] = format_psnr(r.psnr) if math.isinf(r.psnr) else r.psnr
            rec["method"] = self.method
            out.append(rec)
        agg = self.aggregate()
        agg["psnr"] = format_psnr(agg["psnr"]) if math.isinf(agg["psnr"]) else agg["psnr"]
        out.append({"id": "aggregate", "method": self.method, "mode": self.mode, "parameters": self.parameters, **agg})
        return out


def evaluate_dataset(
    method: Callable[[np.ndarray], np.ndarray],
    pairs: Sequence,
    name: str = "method",
    parameters: int | None = None,
    mode: str = "macro",
) -> EvalReport:
    """Run ``method`` on every pair's source and score it against the pair's truth."""
    if not pairs:
        raise ValueError("evaluate_dataset needs at least one pair")
    if mode not in ("macro", "micro"):
        raise ValueError(f"unknown aggregation mode {mode!r}")
    report = EvalReport(name, parameters=parameters, mode=mode)
    for pair in sorted(pairs, key=lambda p: p.id):
        start = time.perf_counter()
        pred = method(pair.source)
        elapsed = time.perf_counter() - start
        report.rows.append(score(pair.id, pred, pair.truth, elapsed))
    return report


def score(image_id: str, pred: np.ndarray, truth: np.ndarray, seconds: float = 0.0) -> ImageResult:
    c = confusion(pred, truth)
    return ImageResult(image_id, *metrics(c), psnr(pred, truth), seconds, c)


def render_table(reports: Sequence[EvalReport], per_image: bool = False) -> str:
    """Aligned text table: one row per method (Re, Sp, Pr, F-m, PSNR, #params, time)."""
    header = ["Method", "Re", "Sp", "Pr", "F-m", "PSNR", "#(parameters)", "time (s)"]
    lines = []
    for rep in reports:
        if per_image:
            for r in sorted(rep.rows, key=lambda r: r.id):
                lines.append([f"{rep.method}:{r.id}", *(f"{v:.4f}" for v in (r.re, r.sp, r.pr, r.fm)),
                              format_psnr(r.psnr), "-", f"{r.seconds:.2f}"])
        a = rep.aggregate()
        params = f"{rep.parameters:,}" if rep.parameters is not None else "-"
        lines.append([rep.method, *(f"{a[k]:.4f}" for k in ("re", "sp", "pr", "fm")), format_psnr(a["psnr"]),
                      params, f"{a['seconds']:.2f}"])
    widths = [max(len(row[i]) for row in [header, *lines]) for i in range(len(header))]

    def fmt(row):
        return "  ".join(cell.ljust(widths[0]) if i == 0 else cell.rjust(widths[i]) for i, cell in enumerate(row))

    out = [fmt(header), "  ".join("-" * w for w in widths), *map(fmt, lines)]
    notes = []
    mode = {r.mode for r in reports}
    notes.append(f"aggregation: {'/'.join(sorted(mode))} over images; zero-denominator metrics count as 0")
    inf = sum(r.aggregate()["psnr_inf"] for r in reports)
    if inf:
        notes.append(f"{inf} image(s) with identical maps (PSNR inf) left out of PSNR means")
    return "\n".join(out + ["", *("* " + n for n in notes)]) + "\n"


def reports_to_json(reports: Sequence[EvalReport]) -> str:
    records = [rec for rep in reports for rec in rep.to_records()]
    return json.dumps(records, indent=2, default=str) + "\n"
