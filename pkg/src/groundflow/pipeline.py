"""Experiment orchestration shared by the CLI and the acceptance suite:
scene -> detections -> heatmaps -> fitted offsets -> tracking -> metrics.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .core import Detection, GroundGrid, Heatmap, OffsetField, Trajectory
from .detect import select_true_detections
from .errors import ConfigError
from .fit import FitConfig, FitPair, FitResult, fit_offsets
from .metrics import MotReport, OffsetReport, clear_mot, mean_offset_report, offset_error
from .sim import SceneConfig, SceneTruth, corrupt_detections, generate_scene, render_heatmap, subsample_fps
from .track import (
    EdgeCostParams,
    TwoStageConfig,
    associate_hungarian,
    associate_nearest,
    build_graph,
    run_two_stage,
    solve_ssp,
)

TRACK_MODES = ("mussp", "mussp-nomotion", "bytestyle-kalman", "bytestyle-offset",
               "nearest", "hungarian")


def stride_adapted(fit_cfg: FitConfig, stride: int) -> FitConfig:
    """Scale the soft end of the annealing schedule with the frame stride.

    The weight function's pull reach is proportional to 1/lambda_r; a
    stride-s sequence moves s times farther per pair, so the schedule
    starts s times softer (the cap, i.e. final precision, is unchanged).
    """
    if stride <= 1:
        return fit_cfg
    s = fit_cfg.schedule
    init = s.init / stride
    return replace(fit_cfg, schedule=replace(s, init=init, current=init))


def detection_heatmaps(frames: list[list[Detection]], grid: GroundGrid,
                       sigma: float, radius: float) -> list[Heatmap]:
    """Render unit-amplitude Gaussian peaks at the detection positions."""
    return [
        render_heatmap([(d.x, d.y) for d in dets], grid, sigma, radius)
        for dets in frames
    ]


def filter_noise_detections(frames: list[list[Detection]]) -> list[list[Detection]]:
    """Drop the low-confidence noise cluster (2-means split over the whole
    sequence) before the detections feed the motion fit."""
    flat = [d for dets in frames for d in dets]
    if not flat:
        return frames
    kept, _ = select_true_detections(flat)
    kept_ids = {id(d) for d in kept}
    return [[d for d in dets if id(d) in kept_ids] for dets in frames]


def fit_pairs_from_detections(frames: list[list[Detection]], grid: GroundGrid,
                              sigma: float, radius: float) -> list[FitPair]:
    maps = detection_heatmaps(frames, grid, sigma, radius)
    pairs = []
    for k in range(len(maps) - 1):
        pairs.append(FitPair(
            maps[k].values, maps[k + 1].values,
            tuple((d.x, d.y) for d in frames[k]),
            tuple((d.x, d.y) for d in frames[k + 1]),
        ))
    return pairs


def fit_scene_offsets(frames: list[list[Detection]], grid: GroundGrid,
                      fit_cfg: FitConfig, sigma: float, radius: float,
                      workers: int = 1, drop_noise: bool = True) -> list[FitResult]:
    """Fit per-pair offset fields from a detection stream.

    Detections classified as noise by the confidence split are excluded
    from the heatmaps by default; a detector's false positives otherwise
    seed spurious motion targets.
    """
    if drop_noise:
        frames = filter_noise_detections(frames)
    return fit_offsets(fit_pairs_from_detections(frames, grid, sigma, radius),
                       fit_cfg, grid, workers=workers)


def _chain_tracker(frames: list[list[Detection]], matcher) -> list[Trajectory]:
    """Frame-to-frame chaining of pair matches into trajectories.

    `matcher(dets_t, dets_t1)` returns (i, j) index pairs. If several
    chains claim one target, the first source in index order wins and
    the rest terminate (relevant for the nearest baseline, which allows
    many-to-one matches).
    """
    tracks: list[list[tuple[int, float, float]]] = []
    head: dict[int, int] = {}  # detection index in current frame -> track index
    next_frame_head: dict[int, int] = {}
    for t, dets in enumerate(frames):
        for j, d in enumerate(dets):
            if j in next_frame_head:
                tracks[next_frame_head[j]].append((d.time, d.x, d.y))
            else:
                next_frame_head[j] = len(tracks)
                tracks.append([(d.time, d.x, d.y)])
        head = next_frame_head
        next_frame_head = {}
        if t + 1 < len(frames) and dets:
            claimed: set[int] = set()
            for i, j in matcher(dets, frames[t + 1]):
                if j in claimed or i not in head:
                    continue
                claimed.add(j)
                next_frame_head[j] = head[i]
    return [Trajectory(k, tuple(pts)) for k, pts in enumerate(tracks)]


def track_detections(frames: list[list[Detection]], mode: str,
                     fit_results: list[FitResult] | None = None,
                     edges: EdgeCostParams = EdgeCostParams(),
                     two_stage: TwoStageConfig = TwoStageConfig(),
                     kmeans_split: str = "auto",
                     nearest_max_dist: float = 10.0,
                     hungarian_cutoff: float = 10.0) -> list[Trajectory]:
    """Run one tracking mode over a detection sequence.

    Modes needing fitted offsets (mussp, bytestyle-offset) read them
    from `fit_results`; absent fields degrade to zero motion.
    """
    if mode not in TRACK_MODES:
        raise ConfigError(f"unknown tracking mode {mode!r}; choose from {TRACK_MODES}")
    bwd_fields = fwd_fields = None
    if fit_results is not None:
        fwd_fields = [r.fwd for r in fit_results]
        bwd_fields = [r.bwd for r in fit_results]

    if mode in ("mussp", "mussp-nomotion"):
        flat = [d for dets in frames for d in dets]
        if kmeans_split == "on" or (kmeans_split == "auto" and flat):
            kept, _ = select_true_detections(flat)
            kept_ids = {id(d) for d in kept}
            frames = [[d for d in dets if id(d) in kept_ids] for dets in frames]
        params = edges if mode == "mussp" else replace(edges, sigma_m=0.0)
        graph = build_graph(frames, bwd_fields if mode == "mussp" else None, params)
        return solve_ssp(graph)
    if mode == "bytestyle-kalman":
        return run_two_stage(frames, "kalman", conf_split=_conf_split(frames), cfg=two_stage)
    if mode == "bytestyle-offset":
        return run_two_stage(frames, "learned-offset", fwd_fields=fwd_fields,
                             conf_split=_conf_split(frames), cfg=two_stage)
    if mode == "nearest":
        return _chain_tracker(frames, lambda a, b: associate_nearest(a, b, nearest_max_dist))
    return _chain_tracker(frames, lambda a, b: associate_hungarian(a, b, cutoff=hungarian_cutoff))


def _conf_split(frames) -> float:
    """Confidence threshold separating high- from low-confidence detections."""
    flat = [d for dets in frames for d in dets]
    if not flat:
        return 0.5
    kept, threshold = select_true_detections(flat)
    if len(kept) == len(flat):
        return min(d.confidence for d in flat)  # unimodal: everything is high
    return threshold


@dataclass(frozen=True)
class SweepPoint:
    stride: int
    mode: str
    seed: int
    mota: float
    idf1: float
    motp: float


def run_tracking_point(scene_cfg: SceneConfig, stride: int, mode: str,
                       fit_cfg: FitConfig, edges: EdgeCostParams = EdgeCostParams(),
                       two_stage: TwoStageConfig = TwoStageConfig(),
                       dist_threshold: float = 2.5,
                       truth: SceneTruth | None = None,
                       detections: list[list[Detection]] | None = None,
                       fit_results: list[FitResult] | None = None,
                       workers: int = 1) -> tuple[SweepPoint, MotReport]:
    """One (stride, mode) experiment point on a simulated scene.

    Heavy intermediates (truth, detections, fitted offsets) may be
    passed in so sweeps can share them between modes.
    """
    if truth is None:
        truth = generate_scene(scene_cfg)
    if detections is None:
        detections = corrupt_detections(truth)
    sub_truth = subsample_fps(truth, stride)
    sub_dets = subsample_fps(detections, stride)
    needs_fit = mode in ("mussp", "bytestyle-offset")
    if needs_fit and fit_results is None:
        fit_results = fit_scene_offsets(
            sub_dets, scene_cfg.grid, stride_adapted(fit_cfg, stride),
            scene_cfg.gaussian_sigma_cells, scene_cfg.gaussian_radius_cells,
            workers=workers,
        )
    tracks = track_detections(sub_dets, mode, fit_results=fit_results,
                              edges=edges, two_stage=two_stage)
    report = clear_mot(tracks, list(sub_truth.trajectories), dist_threshold)
    point = SweepPoint(stride=stride, mode=mode, seed=scene_cfg.seed,
                       mota=report.mota, idf1=report.idf1, motp=report.motp)
    return point, report


def fit_report_vs_truth(fit_results: list[FitResult], truth: SceneTruth) -> OffsetReport:
    """Mean offset error of fitted forward fields over all frame pairs."""
    reports = [offset_error(r.fwd, truth, k) for k, r in enumerate(fit_results)]
    return mean_offset_report(reports)


def zero_offset_report(truth: SceneTruth) -> OffsetReport:
    """The zero-motion baseline evaluated on a scene."""
    zero = OffsetField.zeros(truth.config.grid)
    return mean_offset_report(
        offset_error(zero, truth, k) for k in range(len(truth.gt_offsets))
    )


def _nearest(dets, x, y):
    best = None
    best_d = math.inf
    for d in dets:
        dist = math.hypot(d.x - x, d.y - y)
        if dist < best_d:
            best_d = dist
            best = d
    return best


def nearest_detection_report(truth: SceneTruth,
                             detections: list[list[Detection]] | None = None) -> OffsetReport:
    """Motion-to-nearest baseline: each detection's motion estimate is the
    displacement to the nearest detection in the next frame, evaluated at
    the ground-truth cells."""
    if detections is None:
        detections = corrupt_detections(truth)
    grid = truth.config.grid
    reports = []
    for k in range(len(truth.gt_offsets)):
        dx = np.zeros(grid.shape)
        dy = np.zeros(grid.shape)
        cur = detections[k] if k < len(detections) else []
        nxt = detections[k + 1] if k + 1 < len(detections) else []
        for (cx, cy, _, _) in truth.gt_cells[k]:
            src = _nearest(cur, cx, cy)
            if src is None:
                continue
            dst = _nearest(nxt, src.x, src.y)
            if dst is not None:
                dx[cy, cx] = dst.x - src.x
                dy[cy, cx] = dst.y - src.y
        reports.append(offset_error(OffsetField(grid, dx, dy), truth, k))
    return mean_offset_report(reports)
