"""CLEAR MOT tracking metrics, identity metrics, and offset-error metrics.

Matching protocol (documented so numbers are reproducible): per frame,
matches from the previous frame persist while both members are present
and within the distance threshold; the remaining detections are then
assigned by minimum total distance. An identity switch is counted when
a ground-truth track's matched prediction id differs from its last
known match. MOTP is the raw mean matched distance in cells (lower is
better). Identity metrics come from a single global trajectory-level
assignment that maximizes correctly identified frames.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import OffsetField
from .errors import UndefinedMetric


@dataclass(frozen=True)
class MotReport:
    mota: float
    motp: float
    idf1: float
    idp: float
    idr: float
    gt: int
    fp: int
    fn: int
    idsw: int
    matches: int

    def to_json(self) -> str:
        return json.dumps({
            "mota": self.mota,
            "motp": self.motp,
            "idf1": self.idf1,
            "idp": self.idp,
            "idr": self.idr,
            "counts": {"gt": self.gt, "fp": self.fp, "fn": self.fn,
                       "idsw": self.idsw, "matches": self.matches},
        }, indent=2, sort_keys=True) + "\n"


@dataclass(frozen=True)
class OffsetReport:
    l1: float
    angle_deg: float
    norm_err: float

    def to_json(self) -> str:
        return json.dumps({
            "l1": self.l1,
            "angle_deg": self.angle_deg,
            "norm_err": self.norm_err,
        }, indent=2, sort_keys=True) + "\n"


def _by_frame(trajectories) -> dict[int, list[tuple[int, float, float]]]:
    frames: dict[int, list[tuple[int, float, float]]] = {}
    for tr in trajectories:
        for (t, x, y) in tr.points:
            frames.setdefault(t, []).append((tr.id, x, y))
    return frames


def clear_mot(pred, gt, dist_threshold: float = 2.5) -> MotReport:
    """CLEAR MOT + identity metrics for predicted vs ground-truth tracks."""
    gt_total = sum(len(tr.points) for tr in gt)
    if gt_total == 0:
        raise UndefinedMetric("MOTA is undefined without ground truth")
    gt_frames = _by_frame(gt)
    pred_frames = _by_frame(pred)
    all_frames = sorted(set(gt_frames) | set(pred_frames))

    mapping: dict[int, int] = {}  # gt id -> last matched pred id
    fp = fn = idsw = matches = 0
    dist_sum = 0.0
    for t in all_frames:
        gts = sorted(gt_frames.get(t, []))
        preds = sorted(pred_frames.get(t, []))
        pred_by_id = {p[0]: p for p in preds}
        unmatched_gt = []
        used_pred = set()
        # keep persistent matches that are still close enough
        for (gid, gx, gy) in gts:
            pid = mapping.get(gid)
            if pid is not None and pid in pred_by_id and pid not in used_pred:
                _, px, py = pred_by_id[pid]
                d = math.hypot(gx - px, gy - py)
                if d <= dist_threshold:
                    matches += 1
                    dist_sum += d
                    used_pred.add(pid)
                    continue
            unmatched_gt.append((gid, gx, gy))
        free_pred = [p for p in preds if p[0] not in used_pred]
        if unmatched_gt and free_pred:
            cost = np.array([[math.hypot(gx - px, gy - py)
                              for (_, px, py) in free_pred]
                             for (_, gx, gy) in unmatched_gt])
            work = np.where(cost > dist_threshold, 1e9, cost)
            rows, cols = linear_sum_assignment(work)
            newly = set()
            for r, c in zip(rows, cols):
                if cost[r, c] > dist_threshold:
                    continue
                gid = unmatched_gt[r][0]
                pid = free_pred[c][0]
                matches += 1
                dist_sum += float(cost[r, c])
                used_pred.add(pid)
                newly.add(gid)
                if gid in mapping and mapping[gid] != pid:
                    idsw += 1
                mapping[gid] = pid
            unmatched_gt = [g for g in unmatched_gt if g[0] not in newly]
        fn += len(unmatched_gt)
        fp += len(preds) - len(used_pred)

    mota = 1.0 - (fn + fp + idsw) / gt_total
    motp = dist_sum / matches if matches else 0.0
    idf1, idp, idr = _identity_metrics(pred, gt, dist_threshold)
    return MotReport(mota=mota, motp=motp, idf1=idf1, idp=idp, idr=idr,
                     gt=gt_total, fp=fp, fn=fn, idsw=idsw, matches=matches)


def _identity_metrics(pred, gt, thr: float) -> tuple[float, float, float]:
    gt_total = sum(len(tr.points) for tr in gt)
    pred_total = sum(len(tr.points) for tr in pred)
    if not pred or not gt:
        return 0.0, 0.0, 0.0
    overlap = np.zeros((len(gt), len(pred)))
    pred_dicts = [tr.as_dict() for tr in pred]
    for a, gtr in enumerate(gt):
        for b, pd in enumerate(pred_dicts):
            hits = 0
            for (t, gx, gy) in gtr.points:
                pos = pd.get(t)
                if pos is not None and math.hypot(gx - pos[0], gy - pos[1]) <= thr:
                    hits += 1
            overlap[a, b] = hits
    rows, cols = linear_sum_assignment(-overlap)
    idtp = int(overlap[rows, cols].sum())
    idfp = pred_total - idtp
    idfn = gt_total - idtp
    denom = 2 * idtp + idfp + idfn
    idf1 = 2 * idtp / denom if denom else 0.0
    idp = idtp / pred_total if pred_total else 0.0
    idr = idtp / gt_total if gt_total else 0.0
    return idf1, idp, idr


def offset_error(delta_pred: OffsetField, truth, pair_index: int) -> OffsetReport:
    """Offset metrics at the ground-truth cells of one frame pair.

    L1 is the mean per-component absolute error over all GT cells;
    angle (degrees) and norm error are averaged over cells whose GT
    offset is nonzero. A zero predicted vector against a nonzero GT
    contributes the worst-case 180 degrees.
    """
    rows = truth.gt_cells[pair_index]
    if not rows:
        raise UndefinedMetric(f"pair {pair_index} has no ground-truth cells")
    if delta_pred.dx.shape != truth.config.grid.shape:
        raise UndefinedMetric("offset field grid does not match the scene grid")
    l1_sum = 0.0
    angles = []
    norm_errs = []
    for (cx, cy, ox, oy) in rows:
        pdx = float(delta_pred.dx[cy, cx])
        pdy = float(delta_pred.dy[cy, cx])
        l1_sum += 0.5 * (abs(pdx - ox) + abs(pdy - oy))
        n_gt = math.hypot(ox, oy)
        if n_gt > 1e-6:
            n_pred = math.hypot(pdx, pdy)
            norm_errs.append(abs(n_pred - n_gt))
            if n_pred <= 1e-12:
                angles.append(180.0)
            else:
                cross = pdx * oy - pdy * ox
                dot = pdx * ox + pdy * oy
                angles.append(math.degrees(math.atan2(abs(cross), dot)))
    l1 = l1_sum / len(rows)
    angle = float(np.mean(angles)) if angles else 0.0
    norm_err = float(np.mean(norm_errs)) if norm_errs else 0.0
    return OffsetReport(l1=l1, angle_deg=angle, norm_err=norm_err)


def mean_offset_report(reports) -> OffsetReport:
    """Average componentwise over per-pair reports."""
    reports = list(reports)
    if not reports:
        raise UndefinedMetric("no offset reports to average")
    return OffsetReport(
        l1=float(np.mean([r.l1 for r in reports])),
        angle_deg=float(np.mean([r.angle_deg for r in reports])),
        norm_err=float(np.mean([r.norm_err for r in reports])),
    )
