"""Registration metrics, velocity experiment, and report serialization.

Accuracy is scored jointly: a sample lands in a threshold bin only when
both its translation and rotation errors are inside.  Distance filters
partition the report by object range, nothing else.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..geom import GroundTransform, angle_deviation, flip_heading_if_needed

# (label, translation threshold m, rotation threshold deg), tightest first
BINS = (("2cm,1deg", 0.02, 1.0), ("10cm,5deg", 0.10, 5.0), ("20cm,10deg", 0.20, 10.0))
# (label, max object distance m)
DISTANCE_FILTERS = (("<80m", 80.0), ("<20m", 20.0), ("<5m", 5.0))


@dataclass(frozen=True)
class Prediction:
    sample_id: int
    transform: GroundTransform
    wall_ms: float = 0.0


@dataclass
class FilterReport:
    count: int
    accuracy: dict  # bin label -> fraction in [0, 1], None when count == 0
    rmse_t: Optional[float]  # meters
    rmse_r: Optional[float]  # degrees


@dataclass
class MetricsReport:
    filters: dict  # filter label -> FilterReport
    total: int
    axis_symmetric: bool
    method: str = ""
    timing_ms: Optional[dict] = None  # batch size -> ms per transform

    def to_dict(self) -> dict:
        out = {
            "method": self.method,
            "total": self.total,
            "axis_symmetric": self.axis_symmetric,
            "filters": {
                label: {
                    "count": f.count,
                    "accuracy": dict(f.accuracy),
                    "rmse_t_m": f.rmse_t,
                    "rmse_r_deg": f.rmse_r,
                }
                for label, f in self.filters.items()
            },
        }
        if self.timing_ms is not None:
            out["timing_ms"] = {str(k): v for k, v in self.timing_ms.items()}
        return out


@dataclass
class VelocityReport:
    method: str
    rmse_v: dict  # filter label -> m/s, None when the filter is empty
    counts: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"method": self.method, "rmse_v_mps": dict(self.rmse_v),
                "counts": dict(self.counts)}


def _as_transforms(predictions) -> list[GroundTransform]:
    out = []
    for p in predictions:
        out.append(p.transform if isinstance(p, Prediction) else p)
    return out


def pair_errors(pred: GroundTransform, gt: GroundTransform, center_xy,
                axis_symmetric: bool = False) -> tuple[float, float]:
    """(translation error m, rotation error rad) for one sample.

    Translation error is the planar distance between where the predicted
    and the true transform move the object's first-frame center.  This
    expresses both in the small object-motion convention: a transform's
    raw tx/ty absorb rotation about the sensor origin, so comparing them
    directly would charge any yaw error with a lever arm of the full
    object distance.  At the object center the two conventions agree.
    """
    cx, cy = float(center_xy[0]), float(center_xy[1])
    px, py = pred.apply_point(cx, cy)
    gx, gy = gt.apply_point(cx, cy)
    t_err = math.hypot(px - gx, py - gy)
    return t_err, angle_deviation(pred.yaw, gt.yaw, axis_symmetric)


def evaluate(predictions: Sequence, samples: Sequence,
             axis_symmetric: bool = False, flip_headings: bool = False,
             method: str = "") -> MetricsReport:
    """Score predicted transforms against the dataset's ground truth.

    flip_headings folds any predicted yaw beyond 90 deg back by pi before
    scoring, the disambiguation rule for axis-symmetric estimates.
    """
    transforms = _as_transforms(predictions)
    if len(transforms) != len(samples):
        raise ValueError(
            f"{len(transforms)} predictions for {len(samples)} samples")
    if flip_headings:
        transforms = [flip_heading_if_needed(t) for t in transforms]

    t_errs = np.empty(len(samples))
    r_errs = np.empty(len(samples))
    dists = np.empty(len(samples))
    for i, (pred, s) in enumerate(zip(transforms, samples)):
        t_errs[i], r_errs[i] = pair_errors(pred, s.gt, s.center1,
                                           axis_symmetric)
        dists[i] = s.distance_d
    r_degs = np.degrees(r_errs)

    filters = {}
    for label, max_d in DISTANCE_FILTERS:
        sel = dists < max_d
        n = int(sel.sum())
        if n == 0:
            filters[label] = FilterReport(
                count=0, accuracy={b: None for b, _, _ in BINS},
                rmse_t=None, rmse_r=None)
            continue
        te, re = t_errs[sel], r_degs[sel]
        acc = {
            b: float(np.mean((te <= tau) & (re <= rho)))
            for b, tau, rho in BINS
        }
        filters[label] = FilterReport(
            count=n, accuracy=acc,
            rmse_t=float(np.sqrt(np.mean(te ** 2))),
            rmse_r=float(np.sqrt(np.mean(re ** 2))))
    return MetricsReport(filters=filters, total=len(samples),
                         axis_symmetric=axis_symmetric, method=method)


def velocity_rmse(samples: Sequence, predictions: Sequence, dt,
                  method: str = "") -> VelocityReport:
    """Frame velocities from 3-tap-smoothed predicted object motions.

    Each frame's predicted object displacement (the predicted transform
    applied to that frame's object center, minus the center) is averaged
    with its two neighbours (truncated at the track ends), divided by the
    frame spacing, and compared against the unsmoothed ground-truth frame
    velocities.
    """
    transforms = _as_transforms(predictions)
    n = len(samples)
    if n == 0:
        raise ValueError("empty track")
    if len(transforms) != n:
        raise ValueError(f"{len(transforms)} predictions for {n} samples")
    dts = np.broadcast_to(np.asarray(dt, dtype=np.float64), (n,))
    if np.any(dts <= 0.0):
        raise ValueError("frame spacing must be positive")

    def displacement(t, s):
        cx, cy = float(s.center1[0]), float(s.center1[1])
        px, py = t.apply_point(cx, cy)
        return px - cx, py - cy

    pred_t = np.array([displacement(t, s) for t, s in zip(transforms, samples)])
    smooth = np.empty_like(pred_t)
    for i in range(n):
        lo, hi = max(0, i - 1), min(n, i + 2)
        smooth[i] = pred_t[lo:hi].mean(axis=0)
    v_pred = np.hypot(smooth[:, 0], smooth[:, 1]) / dts
    v_gt = np.array([math.hypot(*displacement(s.gt, s)) for s in samples]) / dts
    dists = np.array([s.distance_d for s in samples])

    rmse = {}
    counts = {}
    for label, max_d in DISTANCE_FILTERS:
        sel = dists < max_d
        counts[label] = int(sel.sum())
        rmse[label] = (float(np.sqrt(np.mean((v_pred[sel] - v_gt[sel]) ** 2)))
                       if counts[label] else None)
    return VelocityReport(method=method, rmse_v=rmse, counts=counts)


def write_predictions(predictions: Sequence[Prediction], path) -> None:
    """JSON-lines interchange: one record per sample."""
    with open(path, "w") as fh:
        for p in predictions:
            fh.write(json.dumps({
                "sample_id": p.sample_id,
                "tx": p.transform.tx,
                "ty": p.transform.ty,
                "yaw": p.transform.yaw,
                "wall_ms": p.wall_ms,
            }) + "\n")


def read_predictions(path) -> list[Prediction]:
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                out.append(Prediction(
                    sample_id=int(rec["sample_id"]),
                    transform=GroundTransform(tx=float(rec["tx"]),
                                              ty=float(rec["ty"]),
                                              yaw=float(rec["yaw"])),
                    wall_ms=float(rec.get("wall_ms", 0.0))))
            except (KeyError, ValueError, json.JSONDecodeError) as exc:
                raise ValueError(f"{path}:{lineno}: bad prediction record: {exc}") from exc
    return out


def _fmt(value, pattern="{:.2f}") -> str:
    return "-" if value is None else pattern.format(value)


def format_report_text(report: MetricsReport) -> str:
    """Aligned table, one row per distance filter."""
    header = ["filter", "count"] + [b for b, _, _ in BINS] + ["RMSE_t[m]", "RMSE_R[deg]"]
    rows = [header]
    for label, f in report.filters.items():
        rows.append([label, str(f.count)]
                    + [_fmt(None if f.accuracy[b] is None else 100.0 * f.accuracy[b],
                            "{:.2f}%") for b, _, _ in BINS]
                    + [_fmt(f.rmse_t, "{:.4f}"), _fmt(f.rmse_r, "{:.3f}")])
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(cell.rjust(w) for cell, w in zip(r, widths)) for r in rows]
    title = f"method: {report.method or '?'}  samples: {report.total}" \
            f"  axis_symmetric: {report.axis_symmetric}"
    out = [title] + lines
    if report.timing_ms:
        out.append("per-transform time: " + "  ".join(
            f"batch {k}: {v:.3f} ms" for k, v in sorted(report.timing_ms.items())))
    return "\n".join(out) + "\n"


def write_report_json(report: MetricsReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2)
        fh.write("\n")


def write_report_csv(report: MetricsReport, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["filter", "count"] + [b for b, _, _ in BINS]
                   + ["rmse_t_m", "rmse_r_deg"])
        for label, f in report.filters.items():
            w.writerow([label, f.count]
                       + [f.accuracy[b] for b, _, _ in BINS]
                       + [f.rmse_t, f.rmse_r])
