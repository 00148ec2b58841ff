"""Heatmap post-processing: non-maximum suppression and the 2-means
confidence split that separates true detections from noise.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Detection, Heatmap


@dataclass(frozen=True)
class NmsConfig:
    radius_cells: float = 2.0
    max_candidates: int = 512

    def __post_init__(self):
        if not (self.radius_cells > 0):
            raise ValueError("radius_cells must be positive")
        if self.max_candidates < 1:
            raise ValueError("max_candidates must be >= 1")


def nms(X: Heatmap | np.ndarray, cfg: NmsConfig, time: int = 0) -> list[Detection]:
    """Euclidean-radius non-maximum suppression on a heatmap.

    Candidates are cells with positive value that are >= every cell
    within the suppression radius; they are accepted in decreasing
    confidence order (ties by (y, x)) unless within the radius of an
    already-accepted peak.
    """
    values = X.values if isinstance(X, Heatmap) else np.asarray(X, dtype=np.float64)
    h, w = values.shape
    r = cfg.radius_cells
    ri = int(np.floor(r))
    is_max = values > 0.0
    for da in range(-ri, ri + 1):
        for db in range(-ri, ri + 1):
            if da == 0 and db == 0:
                continue
            if da * da + db * db > r * r:
                continue
            shifted = np.full((h, w), -np.inf)
            ys0, ys1 = max(0, -da), min(h, h - da)
            xs0, xs1 = max(0, -db), min(w, w - db)
            shifted[ys0:ys1, xs0:xs1] = values[ys0 + da:ys1 + da, xs0 + db:xs1 + db]
            is_max &= values >= shifted
    ys, xs = np.nonzero(is_max)
    confs = values[ys, xs]
    order = np.lexsort((xs, ys, -confs))
    accepted: list[Detection] = []
    acc_xy: list[tuple[int, int]] = []
    r2 = r * r
    for k in order:
        x, y, c = int(xs[k]), int(ys[k]), float(confs[k])
        if any((x - ax) ** 2 + (y - ay) ** 2 <= r2 for ax, ay in acc_xy):
            continue
        accepted.append(Detection(time, float(x), float(y), c))
        acc_xy.append((x, y))
        if len(accepted) >= cfg.max_candidates:
            break
    return accepted


def split_kmeans2(confidences) -> float:
    """1-D 2-means split threshold (midpoint of the two final centroids).

    Centroids are initialized at the min and max, which makes Lloyd's
    iterations deterministic and, in 1-D, globally optimal. Values
    strictly above the threshold belong to the high cluster.
    """
    vals = np.asarray(list(confidences), dtype=np.float64)
    if vals.size == 0:
        raise ValueError("split_kmeans2 needs at least one confidence value")
    lo = float(vals.min())
    hi = float(vals.max())
    if hi - lo == 0.0:
        return lo
    c_lo, c_hi = lo, hi
    for _ in range(1000):
        mid = 0.5 * (c_lo + c_hi)
        low = vals[vals <= mid]
        high = vals[vals > mid]
        n_lo = low.mean() if low.size else c_lo
        n_hi = high.mean() if high.size else c_hi
        if abs(n_lo - c_lo) <= 1e-9 and abs(n_hi - c_hi) <= 1e-9:
            c_lo, c_hi = n_lo, n_hi
            break
        c_lo, c_hi = n_lo, n_hi
    return 0.5 * (c_lo + c_hi)


def select_true_detections(dets: list[Detection], min_separation: float = 0.25
                           ) -> tuple[list[Detection], float]:
    """Apply the 2-means split; keep everything when no noise cluster exists.

    The split only activates when the two centroids are separated by at
    least `min_separation` — a unimodal confidence distribution (e.g. a
    clean scene with no false positives) is left intact.
    """
    if not dets:
        return [], 0.0
    confs = np.array([d.confidence for d in dets])
    threshold = split_kmeans2(confs)
    low = confs[confs <= threshold]
    high = confs[confs > threshold]
    if low.size == 0 or high.size == 0:
        return list(dets), threshold
    if float(high.mean() - low.mean()) < min_separation:
        return list(dets), threshold
    return [d for d in dets if d.confidence > threshold], threshold
