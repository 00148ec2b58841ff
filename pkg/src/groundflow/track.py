"""Data association: motion-aware min-cost-flow tracking plus online
baselines (greedy nearest, Hungarian bipartite, constant-velocity
Kalman, and two-stage ground-plane-IoU association).

The flow network splits every detection into a pre/post node pair
joined by a unit-capacity observation arc whose negative cost rewards
confident detections; source->pre and post->sink arcs charge entry and
exit, and post->pre transition arcs carry the motion-aware cost. The
solver augments unit flow along successive shortest source->sink paths
while their cost stays negative, which yields the global minimum over
any number of tracks.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import Detection, OffsetField, Trajectory
from .errors import InstanceTooLarge, NonSpdCovariance
from .losses import bilinear_sample


@dataclass(frozen=True)
class EdgeCostParams:
    sigma_t: float = 0.5
    sigma_d: float = 0.15
    sigma_m: float = 0.15
    max_gap: int = 3
    entry_cost: float = 0.2
    exit_cost: float = 0.2
    obs_cost_scale: float = 1.0

    def __post_init__(self):
        if self.max_gap < 1:
            raise ValueError("max_gap must be >= 1")
        for name in ("sigma_t", "sigma_d", "sigma_m", "entry_cost", "exit_cost"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not (self.obs_cost_scale > 0):
            raise ValueError("obs_cost_scale must be positive")


def sample_offset(field: OffsetField | None, x: float, y: float) -> tuple[float, float]:
    """Bilinear sample of an offset field at a continuous point (border-clamped)."""
    if field is None:
        return 0.0, 0.0
    px = np.array([x])
    py = np.array([y])
    sx, _, _, _ = bilinear_sample(field.dx, px, py)
    sy, _, _, _ = bilinear_sample(field.dy, px, py)
    return float(sx[0]), float(sy[0])


def edge_cost(i_pos, j_pos, t1: int, t2: int, delta_bwd_at_j, p: EdgeCostParams) -> float:
    """Transition cost between detections at t1 < t2.

    -exp(-sigma_t*(gap-1)) * exp(-sigma_d*d(i,j)) * W_m, where W_m
    discounts by the distance between i and j displaced backward by
    gap * delta (the sampled backward offset at j).
    """
    gap = t2 - t1
    if gap < 1 or gap > p.max_gap:
        raise ValueError(f"edge gap {gap} outside [1, {p.max_gap}]")
    d = math.hypot(i_pos[0] - j_pos[0], i_pos[1] - j_pos[1])
    bx, by = delta_bwd_at_j
    pred_x = j_pos[0] + gap * bx
    pred_y = j_pos[1] + gap * by
    dm = math.hypot(i_pos[0] - pred_x, i_pos[1] - pred_y)
    return -(math.exp(-p.sigma_t * (gap - 1)) * math.exp(-p.sigma_d * d)
             * math.exp(-p.sigma_m * dm))


@dataclass
class TrackingGraph:
    """Node-split detection graph with all unit capacities."""

    detections: tuple
    entry: np.ndarray
    exit: np.ndarray
    obs: np.ndarray
    trans: dict          # (i, j) -> cost, with time_i < time_j
    params: EdgeCostParams

    @property
    def num_entry_arcs(self) -> int:
        return len(self.detections)

    @property
    def num_exit_arcs(self) -> int:
        return len(self.detections)

    @property
    def num_observation_arcs(self) -> int:
        return len(self.detections)

    @property
    def num_transition_arcs(self) -> int:
        return len(self.trans)

    def dump_edges(self) -> str:
        """Debug edge list: ``src,dst,cost,capacity`` (node-split ids)."""
        n = len(self.detections)
        pre = lambda i: 2 + 2 * i
        post = lambda i: 3 + 2 * i
        lines = []
        for i in range(n):
            lines.append(f"0,{pre(i)},{self.entry[i]!r},1")
            lines.append(f"{pre(i)},{post(i)},{self.obs[i]!r},1")
            lines.append(f"{post(i)},1,{self.exit[i]!r},1")
        for (i, j) in sorted(self.trans):
            lines.append(f"{post(i)},{pre(j)},{self.trans[(i, j)]!r},1")
        return "\n".join(lines) + "\n"


def _flatten(detections) -> list[Detection]:
    if detections and isinstance(detections[0], (list, tuple)):
        flat = [d for frame in detections for d in frame]
    else:
        flat = list(detections)
    return sorted(flat, key=lambda d: d.time)  # stable: input order within a frame


def build_graph(detections, bwd_fields, p: EdgeCostParams) -> TrackingGraph:
    """Build the flow network over detections.

    `detections` is a flat list or per-frame lists; `bwd_fields` maps
    pair index k (frames k -> k+1) to the fitted backward field, or is
    None for motion-free costs. Observation arcs cost
    -obs_cost_scale * confidence.
    """
    dets = _flatten(detections)
    n = len(dets)
    entry = np.full(n, p.entry_cost)
    exit_ = np.full(n, p.exit_cost)
    obs = np.array([-p.obs_cost_scale * d.confidence for d in dets])
    # backward offset sampled once per detection (at its own position)
    deltas = []
    for d in dets:
        fld = None
        if bwd_fields is not None and d.time >= 1 and d.time - 1 < len(bwd_fields):
            fld = bwd_fields[d.time - 1]
        deltas.append(sample_offset(fld, d.x, d.y))
    trans: dict[tuple[int, int], float] = {}
    for i in range(n):
        for j in range(i + 1, n):
            gap = dets[j].time - dets[i].time
            if gap < 1:
                continue
            if gap > p.max_gap:
                break  # detections are time-sorted; later j only grow the gap
            trans[(i, j)] = edge_cost(
                (dets[i].x, dets[i].y), (dets[j].x, dets[j].y),
                dets[i].time, dets[j].time, deltas[j], p,
            )
    return TrackingGraph(tuple(dets), entry, exit_, obs, trans, p)


def cover_cost(g: TrackingGraph, tracks: list[list[int]]) -> float:
    """Canonical total cost of a set of index tracks (fixed summation order)."""
    total = 0.0
    for track in tracks:
        total += g.entry[track[0]]
        total += g.obs[track[0]]
        for a, b in zip(track, track[1:]):
            total += g.trans[(a, b)]
            total += g.obs[b]
        total += g.exit[track[-1]]
    return float(total)


def _tracks_to_trajectories(g: TrackingGraph, tracks: list[list[int]]) -> list[Trajectory]:
    tracks = sorted(tracks, key=lambda tr: (g.detections[tr[0]].time, tr[0]))
    out = []
    for tid, track in enumerate(tracks):
        pts = tuple((g.detections[i].time, g.detections[i].x, g.detections[i].y)
                    for i in track)
        out.append(Trajectory(tid, pts))
    return out


class _FlowNet:
    """Residual-graph bookkeeping for the SSP solver."""

    SOURCE = 0
    SINK = 1

    def __init__(self, g: TrackingGraph):
        n = len(g.detections)
        self.n_dets = n
        self.n_nodes = 2 + 2 * n
        self.tail: list[int] = []
        self.head: list[int] = []
        self.cost: list[float] = []
        self.kind: list[str] = []
        self.ref: list[int | tuple] = []
        for i in range(n):
            self._add(self.SOURCE, 2 + 2 * i, float(g.entry[i]), "entry", i)
            self._add(2 + 2 * i, 3 + 2 * i, float(g.obs[i]), "obs", i)
            self._add(3 + 2 * i, self.SINK, float(g.exit[i]), "exit", i)
        for (i, j), c in g.trans.items():
            self._add(3 + 2 * i, 2 + 2 * j, float(c), "trans", (i, j))
        self.flow = [0] * len(self.tail)
        self.out: list[list[int]] = [[] for _ in range(self.n_nodes)]
        self.into: list[list[int]] = [[] for _ in range(self.n_nodes)]
        for a, (u, v) in enumerate(zip(self.tail, self.head)):
            self.out[u].append(a)
            self.into[v].append(a)

    def _add(self, u, v, c, kind, ref):
        self.tail.append(u)
        self.head.append(v)
        self.cost.append(c)
        self.kind.append(kind)
        self.ref.append(ref)

    def topological_order(self, g: TrackingGraph) -> list[int]:
        order = [self.SOURCE]
        for i in range(self.n_dets):  # detections are time-sorted
            order.append(2 + 2 * i)
            order.append(3 + 2 * i)
        order.append(self.SINK)
        return order


def _initial_potentials(net: _FlowNet, g: TrackingGraph) -> list[float]:
    """One relaxation sweep in topological order; handles negative arcs."""
    dist = [math.inf] * net.n_nodes
    dist[net.SOURCE] = 0.0
    for u in net.topological_order(g):
        if dist[u] == math.inf:
            continue
        for a in net.out[u]:
            v = net.head[a]
            nd = dist[u] + net.cost[a]
            if nd < dist[v]:
                dist[v] = nd
    return dist


def _dijkstra(net: _FlowNet, pi: list[float]):
    """Shortest residual path under reduced costs; tiny negative reduced
    costs from float rounding are clamped to zero."""
    dist = [math.inf] * net.n_nodes
    parent: list[tuple[int, bool] | None] = [None] * net.n_nodes
    dist[net.SOURCE] = 0.0
    heap = [(0.0, net.SOURCE)]
    done = [False] * net.n_nodes
    while heap:
        d, u = heapq.heappop(heap)
        if done[u] or d > dist[u]:
            continue
        done[u] = True
        for a in net.out[u]:
            if net.flow[a]:
                continue
            v = net.head[a]
            rc = net.cost[a] + pi[u] - pi[v]
            if rc < 0.0:
                rc = 0.0
            nd = d + rc
            if nd < dist[v]:
                dist[v] = nd
                parent[v] = (a, True)
                heapq.heappush(heap, (nd, v))
        for a in net.into[u]:
            if not net.flow[a]:
                continue
            v = net.tail[a]
            rc = -net.cost[a] + pi[u] - pi[v]
            if rc < 0.0:
                rc = 0.0
            nd = d + rc
            if nd < dist[v]:
                dist[v] = nd
                parent[v] = (a, False)
                heapq.heappush(heap, (nd, v))
    return dist, parent


def _extract_tracks(net: _FlowNet) -> list[list[int]]:
    succ_of_post: dict[int, int] = {}
    exits: set[int] = set()
    starts: list[int] = []
    for a, fl in enumerate(net.flow):
        if not fl:
            continue
        kind = net.kind[a]
        if kind == "entry":
            starts.append(net.ref[a])
        elif kind == "trans":
            i, j = net.ref[a]
            succ_of_post[i] = j
        elif kind == "exit":
            exits.add(net.ref[a])
    tracks = []
    for s in sorted(starts):
        track = [s]
        cur = s
        while cur not in exits:
            cur = succ_of_post[cur]
            track.append(cur)
        tracks.append(track)
    return tracks


def solve_ssp_detailed(g: TrackingGraph) -> tuple[list[list[int]], float]:
    """Run successive shortest paths; returns (index tracks, canonical cost)."""
    if not g.detections:
        return [], 0.0
    net = _FlowNet(g)
    dist0 = _initial_potentials(net, g)
    pi = list(dist0)
    while True:
        dist, parent = _dijkstra(net, pi)
        if dist[net.SINK] == math.inf:
            break
        true_cost = dist[net.SINK] + pi[net.SINK] - pi[net.SOURCE]
        if true_cost >= -1e-12:
            break
        v = net.SINK
        while v != net.SOURCE:
            a, forward = parent[v]
            if forward:
                net.flow[a] = 1
                v = net.tail[a]
            else:
                net.flow[a] = 0
                v = net.head[a]
        d_sink = dist[net.SINK]
        for u in range(net.n_nodes):
            pi[u] += min(dist[u], d_sink)
    tracks = _extract_tracks(net)
    return tracks, cover_cost(g, tracks)


def solve_ssp(g: TrackingGraph) -> list[Trajectory]:
    """Min-cost-flow tracking; returns vertex-disjoint trajectories."""
    tracks, _ = solve_ssp_detailed(g)
    return _tracks_to_trajectories(g, tracks)


def brute_force_detailed(g: TrackingGraph) -> tuple[list[list[int]], float]:
    """Exhaustive optimum over all vertex-disjoint path covers (n <= 10)."""
    n = len(g.detections)
    if n > 10:
        raise InstanceTooLarge(f"brute force limited to 10 detections, got {n}")
    if n == 0:
        return [], 0.0
    entry, exit_, obs, trans = g.entry, g.exit, g.obs, g.trans
    from functools import lru_cache

    @lru_cache(maxsize=None)
    def best(k: int, tails: frozenset) -> float:
        if k == n:
            return float(sum(exit_[t] for t in sorted(tails)))
        b = best(k + 1, tails)  # leave detection k unused
        b = min(b, float(entry[k] + obs[k]) + best(k + 1, tails | {k}))
        for t in sorted(tails):
            if (t, k) in trans:
                b = min(b, float(trans[(t, k)] + obs[k]) + best(k + 1, (tails - {t}) | {k}))
        return b

    # replay the decisions to recover one optimal cover
    tracks: list[list[int]] = []
    tail_to_track: dict[int, int] = {}
    tails: frozenset = frozenset()
    for k in range(n):
        target = best(k, tails)
        if target == best(k + 1, tails):
            continue
        if target == float(entry[k] + obs[k]) + best(k + 1, tails | {k}):
            tail_to_track[k] = len(tracks)
            tracks.append([k])
            tails = tails | {k}
            continue
        for t in sorted(tails):
            if (t, k) in trans and target == float(trans[(t, k)] + obs[k]) + best(k + 1, (tails - {t}) | {k}):
                idx = tail_to_track.pop(t)
                tracks[idx].append(k)
                tail_to_track[k] = idx
                tails = (tails - {t}) | {k}
                break
        else:  # numeric fall-through: treat as skip
            continue
    return tracks, cover_cost(g, tracks)


def brute_force_tracks(g: TrackingGraph) -> list[Trajectory]:
    tracks, _ = brute_force_detailed(g)
    return _tracks_to_trajectories(g, tracks)


def associate_nearest(dets_t, dets_t1, max_dist: float) -> list[tuple[int, int]]:
    """Greedy nearest-target mapping; many-to-one is allowed by design."""
    matches = []
    for i, d in enumerate(dets_t):
        best_j = -1
        best_d = math.inf
        for j, e in enumerate(dets_t1):
            dist = math.hypot(d.x - e.x, d.y - e.y)
            if dist <= max_dist and dist < best_d:
                best_d = dist
                best_j = j
        if best_j >= 0:
            matches.append((i, best_j))
    return matches


_FORBIDDEN = 1e9


def associate_hungarian(dets_t, dets_t1, cost: np.ndarray | None = None,
                        cutoff: float = math.inf) -> list[tuple[int, int]]:
    """Minimum-cost one-to-one matching; pairs beyond `cutoff` are forbidden."""
    n, m = len(dets_t), len(dets_t1)
    if n == 0 or m == 0:
        return []
    if cost is None:
        cost = np.array([[math.hypot(a.x - b.x, a.y - b.y) for b in dets_t1]
                         for a in dets_t])
    cost = np.asarray(cost, dtype=np.float64)
    work = np.where(cost > cutoff, _FORBIDDEN, cost)
    rows, cols = linear_sum_assignment(work)
    return [(int(r), int(c)) for r, c in zip(rows, cols) if cost[r, c] <= cutoff]


@dataclass(frozen=True)
class KalmanState:
    """Constant-velocity filter state: (x, y, vx, vy) and covariance."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64).reshape(4)
        cov = np.asarray(self.cov, dtype=np.float64).reshape(4, 4)
        if not np.allclose(cov, cov.T, atol=1e-8):
            raise NonSpdCovariance("covariance must be symmetric")
        eig = np.linalg.eigvalsh(cov)
        if eig.min() < -1e-9:
            raise NonSpdCovariance(f"covariance has negative eigenvalue {eig.min():.3e}")
        mean.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def pos(self) -> tuple[float, float]:
        return (float(self.mean[0]), float(self.mean[1]))


def kalman_predict(s: KalmanState, dt: float, process_noise: float = 0.01) -> KalmanState:
    """Constant-velocity predict; process noise scales with dt (dt=0 is a no-op)."""
    F = np.eye(4)
    F[0, 2] = dt
    F[1, 3] = dt
    mean = F @ s.mean
    cov = F @ s.cov @ F.T + process_noise * dt * np.eye(4)
    cov = 0.5 * (cov + cov.T)
    return KalmanState(mean, cov)


def kalman_update(s: KalmanState, pos, meas_noise: float = 0.25) -> KalmanState:
    """Linear position-measurement update; covariance re-symmetrized."""
    H = np.zeros((2, 4))
    H[0, 0] = 1.0
    H[1, 1] = 1.0
    z = np.asarray(pos, dtype=np.float64).reshape(2)
    S = H @ s.cov @ H.T + meas_noise * np.eye(2)
    K = np.linalg.solve(S.T, (s.cov @ H.T).T).T
    mean = s.mean + K @ (z - H @ s.mean)
    cov = (np.eye(4) - K @ H) @ s.cov
    cov = 0.5 * (cov + cov.T)
    return KalmanState(mean, cov)


@dataclass(frozen=True)
class TwoStageConfig:
    box_side: float = 5.0
    iou_threshold: float = 0.1
    max_age: int = 3
    process_noise: float = 0.01
    meas_noise: float = 0.25
    init_pos_var: float = 1.0
    init_vel_var: float = 10.0


class OnlineTrack:
    """Mutable state of one track in the two-stage tracker."""

    def __init__(self, tid: int, det: Detection, cfg: TwoStageConfig, use_kalman: bool):
        self.id = tid
        self.points = [(det.time, det.x, det.y)]
        self.last_time = det.time
        self.misses = 0
        self.kalman: KalmanState | None = None
        if use_kalman:
            self.kalman = KalmanState(
                np.array([det.x, det.y, 0.0, 0.0]),
                np.diag([cfg.init_pos_var, cfg.init_pos_var,
                         cfg.init_vel_var, cfg.init_vel_var]),
            )

    @property
    def pos(self) -> tuple[float, float]:
        _, x, y = self.points[-1]
        return (x, y)


def _square_iou(c1, c2, side: float) -> float:
    ix = max(0.0, side - abs(c1[0] - c2[0]))
    iy = max(0.0, side - abs(c1[1] - c2[1]))
    inter = ix * iy
    union = 2.0 * side * side - inter
    return inter / union if union > 0 else 0.0


MOTION_SOURCES = ("kalman", "learned-offset", "none")


def associate_two_stage(tracks: list[OnlineTrack], detections: list[Detection],
                        motion_source: str, conf_split: float, iou_threshold: float,
                        cfg: TwoStageConfig = TwoStageConfig(),
                        fwd_field: OffsetField | None = None,
                        frame: int | None = None,
                        next_id: int = 0) -> tuple[list[OnlineTrack], int]:
    """One frame of two-stage ground-plane association.

    Stage 1 matches high-confidence detections (conf >= conf_split) to
    motion-extrapolated track heads by IoU of side-length squares;
    stage 2 offers the leftovers the low-confidence detections. Returns
    the surviving tracks and the next unused track id.
    """
    if motion_source not in MOTION_SOURCES:
        raise ValueError(f"motion_source must be one of {MOTION_SOURCES}")
    if frame is None:
        if not detections:
            raise ValueError("frame index required when the detection list is empty")
        frame = detections[0].time

    predicted: list[tuple[float, float]] = []
    for tr in tracks:
        gap = frame - tr.last_time
        x, y = tr.pos
        if motion_source == "kalman" and tr.kalman is not None:
            tr.kalman = kalman_predict(tr.kalman, float(gap), cfg.process_noise)
            predicted.append(tr.kalman.pos)
        elif motion_source == "learned-offset":
            ox, oy = sample_offset(fwd_field, x, y)
            predicted.append((x + gap * ox, y + gap * oy))
        else:
            predicted.append((x, y))

    high = [d for d in detections if d.confidence >= conf_split]
    low = [d for d in detections if d.confidence < conf_split]

    def match(track_ids: list[int], dets: list[Detection]) -> tuple[dict[int, Detection], set[int]]:
        if not track_ids or not dets:
            return {}, set()
        cost = np.empty((len(track_ids), len(dets)))
        for a, ti in enumerate(track_ids):
            for b, d in enumerate(dets):
                cost[a, b] = 1.0 - _square_iou(predicted[ti], (d.x, d.y), cfg.box_side)
        pairs = associate_hungarian(
            [tracks[t] for t in track_ids], dets, cost=cost,
            cutoff=1.0 - iou_threshold,
        )
        assigned = {track_ids[a]: dets[b] for a, b in pairs}
        used = {id(dets[b]) for _, b in pairs}
        return assigned, used

    all_ids = list(range(len(tracks)))
    assigned1, used1 = match(all_ids, high)
    remaining = [i for i in all_ids if i not in assigned1]
    assigned2, used2 = match(remaining, low)
    assigned = {**assigned1, **assigned2}

    survivors: list[OnlineTrack] = []
    for i, tr in enumerate(tracks):
        det = assigned.get(i)
        if det is not None:
            tr.points.append((det.time, det.x, det.y))
            tr.last_time = det.time
            tr.misses = 0
            if tr.kalman is not None:
                tr.kalman = kalman_update(tr.kalman, (det.x, det.y), cfg.meas_noise)
            survivors.append(tr)
        else:
            tr.misses += 1
            if tr.misses <= cfg.max_age:
                survivors.append(tr)

    for d in high:
        if id(d) not in used1:
            survivors.append(OnlineTrack(next_id, d, cfg, motion_source == "kalman"))
            next_id += 1
    return survivors, next_id


def run_two_stage(frames: list[list[Detection]], motion_source: str,
                  fwd_fields=None, conf_split: float = 0.5,
                  cfg: TwoStageConfig = TwoStageConfig()) -> list[Trajectory]:
    """Run the two-stage tracker over a detection sequence.

    Tracks are mutated in place, so an archive of every track ever
    created yields the full output including terminated ones.
    """
    active: list[OnlineTrack] = []
    archive: dict[int, OnlineTrack] = {}
    next_id = 0
    for t, dets in enumerate(frames):
        fwd = None
        if fwd_fields is not None and t >= 1 and t - 1 < len(fwd_fields):
            fwd = fwd_fields[t - 1]
        active, next_id = associate_two_stage(
            active, dets, motion_source, conf_split, cfg.iou_threshold,
            cfg=cfg, fwd_field=fwd, frame=t, next_id=next_id,
        )
        for tr in active:
            archive.setdefault(tr.id, tr)
    return [Trajectory(tid, tuple(archive[tid].points)) for tid in sorted(archive)]
