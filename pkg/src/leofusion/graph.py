"""Spatio-temporal fusion graph over a 120 ms window.

Eight sources (seven sensors plus the ego vehicle) times six 20 ms slots give
48 nodes. Node ``(s, k)`` lives at index ``s * 6 + k``; slot ``k = 0`` is the
newest frame. Three edge sets connect them:

* temporal: same source, adjacent slots, stored past -> present
  (``(s, k+1) -> (s, k)``); attention treats them as undirected,
* spatial: every ordered pair of distinct sources within a slot,
* self loops.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import MissingStats, SlotGapError, WindowSizeMismatch
from .fusion import SENSOR_ORDER, SensorTrack
from .geometry import ParallelogramState, ShapeKind

N_SLOTS = 6
N_SOURCES = len(SENSOR_ORDER) + 1
N_NODES = N_SOURCES * N_SLOTS
N_FEATURES = 11
EGO = len(SENSOR_ORDER)
SOURCE_NAMES = [s.value for s in SENSOR_ORDER] + ["EGO"]
SLOT_S = 0.02
SENTINEL_VAR = 1e4
DT_DIM = 10
VAR_DIMS = (6, 7)
POS_X_DIMS = (0, 1, 2)
POS_Y_DIMS = (3, 4, 5)


def node_index(source: int, slot: int) -> int:
    return source * N_SLOTS + slot


def _edge_sets():
    temporal = [(node_index(s, k + 1), node_index(s, k)) for s in range(N_SOURCES) for k in range(N_SLOTS - 1)]
    spatial = [(node_index(s, k), node_index(r, k))
               for k in range(N_SLOTS) for s in range(N_SOURCES) for r in range(N_SOURCES) if r != s]
    self_ = [(i, i) for i in range(N_NODES)]
    return (np.array(temporal, dtype=np.int64), np.array(spatial, dtype=np.int64),
            np.array(self_, dtype=np.int64))


EDGES_TEMPORAL, EDGES_SPATIAL, EDGES_SELF = _edge_sets()
NODE_META = [(SOURCE_NAMES[s], k) for s in range(N_SOURCES) for k in range(N_SLOTS)]


def _masks():
    intra = np.zeros((N_NODES, N_NODES), dtype=bool)
    inter = np.zeros((N_NODES, N_NODES), dtype=bool)
    # mask[i, j]: node i attends to neighbour j
    intra[EDGES_TEMPORAL[:, 1], EDGES_TEMPORAL[:, 0]] = True
    intra[EDGES_TEMPORAL[:, 0], EDGES_TEMPORAL[:, 1]] = True
    inter[EDGES_SPATIAL[:, 1], EDGES_SPATIAL[:, 0]] = True
    intra[EDGES_SELF[:, 0], EDGES_SELF[:, 1]] = True
    inter[EDGES_SELF[:, 0], EDGES_SELF[:, 1]] = True
    return intra, inter


INTRA_MASK, INTER_MASK = _masks()


@dataclass
class FusionGraph:
    features: np.ndarray  # (48, 11)
    target: ParallelogramState | None = None
    lane: str = ""
    fusion_timestamp: float = 0.0
    scenario_id: str = ""
    edges_temporal: np.ndarray = field(default_factory=lambda: EDGES_TEMPORAL, repr=False)
    edges_spatial: np.ndarray = field(default_factory=lambda: EDGES_SPATIAL, repr=False)
    edges_self: np.ndarray = field(default_factory=lambda: EDGES_SELF, repr=False)
    node_meta: list = field(default_factory=lambda: NODE_META, repr=False)
    normalized: bool = False

    def source_nodes(self, source: int) -> list[int]:
        return [node_index(source, k) for k in range(N_SLOTS)]


def _extension_xy(track: SensorTrack) -> tuple[np.ndarray, np.ndarray]:
    pts = track.shape.points
    if track.shape.kind is ShapeKind.L_SHAPE:
        p = pts
    elif track.shape.kind is ShapeKind.I_SHAPE:
        p = np.stack([pts[0], pts[1], pts[1]])
    else:
        p = np.repeat(pts[:1], 3, axis=0)
    return p[:, 0], p[:, 1]


def sensor_features(track: SensorTrack, dt: float) -> np.ndarray:
    xs, ys = _extension_xy(track)
    var = track.shape.covs[:, [0, 1], [0, 1]].mean(axis=0)
    return np.concatenate([xs, ys, var, track.state[2:4], [dt]])


def missing_features() -> np.ndarray:
    f = np.zeros(N_FEATURES)
    f[list(VAR_DIMS)] = SENTINEL_VAR
    return f


def ego_features(ego, slot: int) -> np.ndarray:
    f = np.zeros(N_FEATURES)
    f[:3] = (ego.v, ego.yaw_rate, ego.a)
    f[DT_DIM] = SLOT_S * slot
    return f


def _latest(tracks, sensor):
    cands = [t for t in tracks if t.sensor_id is sensor]
    if not cands:
        return None
    # deterministic regardless of list order
    return max(cands, key=lambda t: (t.timestamp, tuple(sensor_features(t, 0.0))))


def check_window(window) -> None:
    if len(window) != N_SLOTS:
        raise WindowSizeMismatch(f"window needs {N_SLOTS} frames, got {len(window)}")
    ts = [f.fusion_timestamp for f in window]
    for a, b in zip(ts[:-1], ts[1:]):
        if abs((b - a) - SLOT_S) > 1e-9:
            raise SlotGapError(f"frames at {a:.6f} and {b:.6f} are not consecutive 20 ms slots")
    for t in ts:
        if abs(t / SLOT_S - round(t / SLOT_S)) > 1e-6:
            raise SlotGapError(f"timestamp {t:.9f} is off the 20 ms grid")


def build_graph(window, label: ParallelogramState | None = None) -> FusionGraph:
    """Graph from six consecutive frames ordered oldest to newest.

    Node ``(s, k)`` carries the latest observation of sensor ``s`` at or before
    slot ``k`` (hold-last inside the window). Its Δt is the age of that
    observation relative to slot ``k``'s own fusion timestamp.
    """
    check_window(window)
    newest_first = list(reversed(window))
    feats = np.zeros((N_NODES, N_FEATURES))
    for s, sensor in enumerate(SENSOR_ORDER):
        for k in range(N_SLOTS):
            obs, kk = None, k
            for kk in range(k, N_SLOTS):
                obs = _latest(newest_first[kk].tracks, sensor)
                if obs is not None:
                    break
            if obs is None:
                feats[node_index(s, k)] = missing_features()
            else:
                # held slots are added separately so each hold adds exactly 0.02
                age = max(newest_first[kk].fusion_timestamp - obs.timestamp, 0.0)
                feats[node_index(s, k)] = sensor_features(obs, SLOT_S * (kk - k) + age)
    for k in range(N_SLOTS):
        feats[node_index(EGO, k)] = ego_features(newest_first[k].ego, k)
    newest = window[-1]
    lane = getattr(newest.lane, "value", newest.lane)
    return FusionGraph(feats, label, lane, newest.fusion_timestamp, newest.scenario_id)


def windows(frames, stride: int = 1):
    """Consecutive 6-frame windows of one scenario (oldest to newest)."""
    for end in range(N_SLOTS - 1, len(frames), stride):
        yield frames[end - N_SLOTS + 1: end + 1]


# --- normalisation -----------------------------------------------------------


@dataclass(frozen=True)
class FeatureStats:
    """Per-dimension z-score statistics. ``log_dims`` are log1p-compressed first."""

    mean: np.ndarray
    std: np.ndarray
    log_dims: tuple[int, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, float).reshape(N_FEATURES))
        object.__setattr__(self, "std", np.maximum(np.asarray(self.std, float).reshape(N_FEATURES), 1e-6))
        object.__setattr__(self, "log_dims", tuple(int(d) for d in self.log_dims))

    @classmethod
    def identity(cls) -> "FeatureStats":
        return cls(np.zeros(N_FEATURES), np.ones(N_FEATURES))

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist(), "log_dims": list(self.log_dims)}

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureStats":
        return cls(d["mean"], d["std"], tuple(d.get("log_dims", ())))


def _compress(x, log_dims):
    x = np.array(x, dtype=float)
    if log_dims:
        x[..., list(log_dims)] = np.log1p(np.maximum(x[..., list(log_dims)], 0.0))
    return x


def compute_stats(graphs, log_dims=VAR_DIMS) -> FeatureStats:
    """Statistics from training graphs only. Δt keeps mean 0 / std 1 (left as is)."""
    graphs = list(graphs)
    if not graphs:
        raise MissingStats("no graphs to compute statistics from")
    x = _compress(np.concatenate([g.features for g in graphs]), log_dims)
    mean, std = x.mean(axis=0), x.std(axis=0)
    const = np.ptp(x, axis=0) == 0
    mean[const], std[const] = x[0, const], 0.0  # exact zero output for constant dims
    mean[DT_DIM], std[DT_DIM] = 0.0, 1.0
    return FeatureStats(mean, std, tuple(log_dims))


def normalize_array(x, stats: FeatureStats) -> np.ndarray:
    return (_compress(x, stats.log_dims) - stats.mean) / stats.std


def denormalize_array(z, stats: FeatureStats) -> np.ndarray:
    x = np.asarray(z, float) * stats.std + stats.mean
    if stats.log_dims:
        x[..., list(stats.log_dims)] = np.expm1(x[..., list(stats.log_dims)])
    return x


def normalize_features(g: FusionGraph, stats: FeatureStats | None) -> FusionGraph:
    if stats is None:
        raise MissingStats("normalisation statistics are required")
    return replace(g, features=normalize_array(g.features, stats), normalized=True)


def denormalize_features(g: FusionGraph, stats: FeatureStats | None) -> FusionGraph:
    if stats is None:
        raise MissingStats("normalisation statistics are required")
    return replace(g, features=denormalize_array(g.features, stats), normalized=False)


def drop_sources(g: FusionGraph, sensors) -> FusionGraph:
    """Replace the given sensors' nodes with the missing-sensor sentinel (raw features)."""
    feats = g.features.copy()
    for name in sensors:
        s = SOURCE_NAMES.index(getattr(name, "value", name))
        feats[g.source_nodes(s)] = missing_features()
    return replace(g, features=feats)


N_SENSOR_NODES = EGO * N_SLOTS


def valid_sensor_rows(features) -> np.ndarray:
    f = np.asarray(features)
    rows = np.zeros(len(f), dtype=bool)
    rows[:N_SENSOR_NODES] = f[:N_SENSOR_NODES, VAR_DIMS[0]] < SENTINEL_VAR
    return rows


def reference_point(features) -> np.ndarray:
    """Rear-right anchor: median over observed sensor nodes of each node's smallest x and y.

    Returns the origin when no sensor observed the object.
    """
    f = np.asarray(features, float)
    rows = valid_sensor_rows(f)
    if not rows.any():
        return np.zeros(2)
    xs = f[np.ix_(rows, POS_X_DIMS)].min(axis=1)
    ys = f[np.ix_(rows, POS_Y_DIMS)].min(axis=1)
    return np.array([np.median(xs), np.median(ys)])


def recenter(features, origin) -> np.ndarray:
    """Shift observed extension points so ``origin`` becomes (0, 0)."""
    f = np.array(features, dtype=float)
    rows = valid_sensor_rows(f)
    f[np.ix_(rows, POS_X_DIMS)] -= origin[0]
    f[np.ix_(rows, POS_Y_DIMS)] -= origin[1]
    return f


def edge_counts() -> tuple[int, int, int]:
    return len(EDGES_TEMPORAL), len(EDGES_SPATIAL), len(EDGES_SELF)


def dt_bound_ok(g: FusionGraph) -> bool:
    dt = g.features[:, DT_DIM]
    return bool(np.all(dt >= 0.0) and np.all(dt <= 0.12 + 1e-9) and not math.isnan(dt.sum()))
