"""Temporal event scoring: TP matching inside a 10 s window, F1, capped
normalized RMSE, and their product."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

TP_WINDOW = 10.0
RMSE_CAP = 300.0


@dataclass(frozen=True)
class GroundTruthEvent:
    video_id: str
    true_time: float

    def __post_init__(self):
        if self.true_time < 0:
            raise ValueError("true_time must be >= 0")


@dataclass(frozen=True)
class PredictionEvent:
    video_id: str
    pred_time: float
    confidence: float

    def __post_init__(self):
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")


@dataclass
class EvalReport:
    tp: int
    fp: int
    fn: int
    f1: float
    rmse: float
    nrmse: float
    s4: float
    flags: list[str] = field(default_factory=list)


def match(preds: list[PredictionEvent], gts: list[GroundTruthEvent],
          window: float = TP_WINDOW):
    """Assign predictions to ground truths.

    Ground truths are processed in ascending time per video; each takes the
    unmatched same-video prediction within the window with the highest
    confidence (ties: smaller time error, then earlier prediction).
    Returns (tp_pairs, fp_list, fn_list) where tp_pairs are
    (prediction, ground_truth) tuples.
    """
    unmatched = list(preds)
    tp_pairs = []
    fn = []
    for gt in sorted(gts, key=lambda g: (g.video_id, g.true_time)):
        best = None
        for p in unmatched:
            if p.video_id != gt.video_id or abs(p.pred_time - gt.true_time) > window:
                continue
            key = (-p.confidence, abs(p.pred_time - gt.true_time), p.pred_time)
            if best is None or key < best[0]:
                best = (key, p)
        if best is None:
            fn.append(gt)
        else:
            unmatched.remove(best[1])
            tp_pairs.append((best[1], gt))
    return tp_pairs, unmatched, fn


def f1(tp: int, fp: int, fn: int) -> float:
    if min(tp, fp, fn) < 0:
        raise ValueError("counts must be >= 0")
    denom = tp + (fp + fn) / 2.0
    if denom == 0:
        return 0.0
    return tp / denom


def rmse(tp_pairs) -> float:
    if not tp_pairs:
        raise ValueError("rmse needs at least one matched pair")
    return math.sqrt(sum((p.pred_time - g.true_time) ** 2 for p, g in tp_pairs)
                     / len(tp_pairs))


def nrmse(tp_pairs, cap: float = RMSE_CAP) -> float:
    if not tp_pairs:
        return 1.0
    return min(rmse(tp_pairs), cap) / cap


def s4(f1_value: float, nrmse_value: float) -> float:
    if not (0.0 <= f1_value <= 1.0 and 0.0 <= nrmse_value <= 1.0):
        raise ValueError("f1 and nrmse must lie in [0, 1]")
    return f1_value * (1.0 - nrmse_value)


def evaluate(preds: list[PredictionEvent], gts: list[GroundTruthEvent],
             window: float = TP_WINDOW, cap: float = RMSE_CAP) -> EvalReport:
    tp_pairs, fp_list, fn_list = match(preds, gts, window)
    tp, fp, fn = len(tp_pairs), len(fp_list), len(fn_list)
    flags = []
    if tp == 0:
        flags.append("no-true-positives: f1=0, nrmse=1 by convention")
        f1_v, rmse_v, nrmse_v = 0.0, cap, 1.0
    else:
        f1_v = f1(tp, fp, fn)
        rmse_v = rmse(tp_pairs)
        nrmse_v = min(rmse_v, cap) / cap
    return EvalReport(tp, fp, fn, f1_v, rmse_v, nrmse_v, s4(f1_v, nrmse_v), flags)


# ---------------------------------------------------------------------------
# File formats: predictions `video_id time confidence`, truth `video_id time`,
# space-separated, one event per line.

def read_predictions(path: str) -> list[PredictionEvent]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected `video_id time confidence`")
            out.append(PredictionEvent(parts[0], float(parts[1]), float(parts[2])))
    return out


def write_predictions(preds: list[PredictionEvent], path: str):
    with open(path, "w") as fh:
        for p in preds:
            fh.write(f"{p.video_id} {p.pred_time:.3f} {p.confidence:.4f}\n")


def read_ground_truth(path: str) -> list[GroundTruthEvent]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected `video_id time`")
            out.append(GroundTruthEvent(parts[0], float(parts[1])))
    return out


def write_ground_truth(gts: list[GroundTruthEvent], path: str):
    with open(path, "w") as fh:
        for g in gts:
            fh.write(f"{g.video_id} {g.true_time:.3f}\n")


def format_report(report: EvalReport) -> str:
    lines = [
        f"tp = {report.tp}",
        f"fp = {report.fp}",
        f"fn = {report.fn}",
        f"f1 = {report.f1:.6f}",
        f"rmse = {report.rmse:.6f}",
        f"nrmse = {report.nrmse:.6f}",
        f"s4 = {report.s4:.6f}",
    ]
    for flag in report.flags:
        lines.append(f"# {flag}")
    return "\n".join(lines) + "\n"
