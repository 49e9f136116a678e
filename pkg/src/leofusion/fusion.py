"""Track-level geometric shape fusion.

Segments from different sensors are associated with a Hausdorff distance gate
and an angle gate, matched endpoints are combined with covariance
intersection, and the fused extension points are completed to a
parallelogram. The result doubles as an automatic training label.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import geometry as geo
from .errors import CollinearPoints, EmptyInput, SingularCovariance
from .geometry import ParallelogramState, ShapeKind, ShapePrimitive

DET_FLOOR = 1e-12


class SensorId(str, Enum):
    LRL = "LRL"
    LRR = "LRR"
    MMRFR = "MMRFR"
    MMRFL = "MMRFL"
    MPC = "MPC"
    LIDAR_CONTOUR = "LIDAR_CONTOUR"
    SMPC = "SMPC"

    @property
    def index(self) -> int:
        return SENSOR_ORDER.index(self)


SENSOR_ORDER = list(SensorId)


@dataclass(frozen=True)
class SensorTrack:
    """One sensor's hypothesis for one object: kinematics plus extent."""

    sensor_id: SensorId
    object_id: int
    timestamp: float
    state: np.ndarray = field(repr=False)  # x, y, v_x, v_y
    state_cov: np.ndarray = field(repr=False)
    shape: ShapePrimitive = field(repr=False)

    def __post_init__(self):
        object.__setattr__(self, "sensor_id", SensorId(self.sensor_id))
        st = np.asarray(self.state, dtype=float).reshape(4)
        cov = np.asarray(self.state_cov, dtype=float).reshape(4, 4)
        if self.timestamp < 0:
            raise ValueError("timestamp must be non-negative")
        if not np.allclose(cov, cov.T, atol=1e-12):
            raise ValueError("state covariance must be symmetric")
        if np.linalg.eigvalsh(cov).min() < -1e-9:
            raise ValueError("state covariance must be PSD")
        object.__setattr__(self, "state", st)
        object.__setattr__(self, "state_cov", cov)

    @property
    def velocity(self) -> np.ndarray:
        return self.state[2:]

    def to_dict(self) -> dict:
        return {
            "sensor_id": self.sensor_id.value,
            "object_id": int(self.object_id),
            "timestamp": float(self.timestamp),
            "state": self.state.tolist(),
            "state_cov": self.state_cov.tolist(),
            "shape": self.shape.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SensorTrack":
        return cls(
            SensorId(d["sensor_id"]), int(d["object_id"]), float(d["timestamp"]),
            np.array(d["state"], float), np.array(d["state_cov"], float),
            ShapePrimitive.from_dict(d["shape"]),
        )


@dataclass(frozen=True)
class AssociationDecision:
    seg_a: np.ndarray
    seg_b: np.ndarray
    hausdorff: float
    angle_diff: float
    associated: bool


@dataclass(frozen=True)
class FusedLabel:
    state: ParallelogramState
    endpoint_covs: np.ndarray
    contributing_sensors: frozenset

    def to_dict(self) -> dict:
        return {
            "state": self.state.to_dict(),
            "endpoint_covs": np.asarray(self.endpoint_covs).tolist(),
            "contributing_sensors": sorted(s.value for s in self.contributing_sensors),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FusedLabel":
        return cls(
            ParallelogramState.from_dict(d["state"]),
            np.array(d["endpoint_covs"], float).reshape(-1, 2, 2),
            frozenset(SensorId(s) for s in d["contributing_sensors"]),
        )


@dataclass(frozen=True)
class FusionConfig:
    hausdorff_gate_m: float = 2.0
    angle_gate_rad: float = math.pi / 6
    default_width_m: float = 2.0
    default_length_m: float = 4.5
    omega_grid: int = 101
    min_heading_speed: float = 1.0
    point_gate_chi2: float = 11.83  # 2-dof 3-sigma validation gate on matched points


def associate(seg_a, seg_b, cfg: FusionConfig = FusionConfig()) -> AssociationDecision:
    seg_a, seg_b = np.asarray(seg_a, float), np.asarray(seg_b, float)
    d = geo.hausdorff_segments(seg_a, seg_b)
    ang = geo.segment_angle_diff(seg_a, seg_b)
    ok = d < cfg.hausdorff_gate_m and ang < cfg.angle_gate_rad
    return AssociationDecision(seg_a, seg_b, d, ang, bool(ok))


def _checked_inv(cov):
    cov = np.asarray(cov, dtype=float)
    if np.linalg.det(cov) <= DET_FLOOR:
        raise SingularCovariance(f"covariance determinant {np.linalg.det(cov):.3e} below floor")
    return np.linalg.inv(cov)


def ci_fuse_point(p1, cov1, p2, cov2, omega: float):
    """Covariance intersection of two 2-D point estimates.

    Fused precision is ``omega * inv(cov1) + (1 - omega) * inv(cov2)``.
    """
    if not 0.0 <= omega <= 1.0:
        raise ValueError(f"omega {omega} outside [0, 1]")
    p1, p2 = np.asarray(p1, float), np.asarray(p2, float)
    i1, i2 = _checked_inv(cov1), _checked_inv(cov2)
    if omega == 1.0:
        return p1.copy(), np.array(cov1, dtype=float)
    if omega == 0.0:
        return p2.copy(), np.array(cov2, dtype=float)
    info = omega * i1 + (1.0 - omega) * i2
    cov = np.linalg.inv(info)
    cov = 0.5 * (cov + cov.T)
    return cov @ (omega * i1 @ p1 + (1.0 - omega) * i2 @ p2), cov


def select_omega(cov1, cov2, n_grid: int = 101) -> float:
    """Grid value of omega minimising det of the fused covariance (first minimum wins)."""
    i1, i2 = _checked_inv(cov1), _checked_inv(cov2)
    omegas = np.linspace(0.0, 1.0, n_grid)
    info = omegas[:, None, None] * i1 + (1.0 - omegas)[:, None, None] * i2
    dets = 1.0 / np.linalg.det(info)
    best = dets.min()
    k = int(np.flatnonzero(dets <= best * (1.0 + 1e-12))[0])
    return float(omegas[k])


def endpoint_weight(cov) -> float:
    det = float(np.linalg.det(np.asarray(cov, float)))
    if det <= DET_FLOOR:
        raise SingularCovariance(f"covariance determinant {det:.3e} below floor")
    return 1.0 / det


def _track_weight(t: SensorTrack) -> float:
    return sum(endpoint_weight(c) for c in t.shape.covs)


def _canonical(tracks):
    """Latest observation per sensor, in sensor order."""
    latest: dict[SensorId, SensorTrack] = {}
    for t in tracks:
        cur = latest.get(t.sensor_id)
        if cur is None or t.timestamp > cur.timestamp:
            latest[t.sensor_id] = t
    return [latest[s] for s in SENSOR_ORDER if s in latest]


def anchor_track(tracks) -> SensorTrack:
    """Track every other sensor is fused into: most points, then highest weight, then sensor order."""
    tracks = _canonical(tracks)
    if not tracks:
        raise EmptyInput("no tracks")
    return max(tracks, key=lambda t: (t.shape.kind.n_points, _track_weight(t), -t.sensor_id.index))


def _segment_index_pairs(kind: ShapeKind):
    if kind is ShapeKind.L_SHAPE:
        return [(0, 1), (1, 2)]
    if kind is ShapeKind.I_SHAPE:
        return [(0, 1)]
    return []


def _away_normal(a, b):
    d = b - a
    n = np.array([-d[1], d[0]]) / np.linalg.norm(d)
    return n if n @ (0.5 * (a + b)) >= 0 else -n


def _heading(velocity, poly, cfg):
    if np.hypot(*velocity) > cfg.min_heading_speed:
        return velocity
    edges = np.roll(poly, -1, axis=0) - poly
    e = edges[int(np.argmax(np.linalg.norm(edges, axis=1)))]
    return e if e[0] >= 0 else -e


def fuse_tracks(tracks, cfg: FusionConfig = FusionConfig()) -> FusedLabel:
    """Fuse one object's sensor tracks from a single fusion slot into a label."""
    tracks = _canonical(tracks)
    if not tracks:
        raise EmptyInput("fuse_tracks needs at least one track")
    weights = {t.sensor_id: _track_weight(t) for t in tracks}
    anchor = anchor_track(tracks)
    pts = [p.copy() for p in anchor.shape.points]
    covs = [c.copy() for c in anchor.shape.covs]
    a_pairs = _segment_index_pairs(anchor.shape.kind)
    contributing = {anchor.sensor_id}

    others = sorted((t for t in tracks if t is not anchor),
                    key=lambda t: (-weights[t.sensor_id], t.sensor_id.index))
    candidates: list[list[tuple]] = [[] for _ in pts]
    for t in others:
        found = _match_track(t, anchor, a_pairs, cfg)
        if found:
            contributing.add(t.sensor_id)
        for ai, ti in found:
            candidates[ai].append((t.shape.points[ti], t.shape.covs[ti]))

    for k in range(len(pts)):
        for p, c in candidates[k]:
            d = p - pts[k]
            if d @ np.linalg.solve(covs[k] + c, d) > cfg.point_gate_chi2:
                continue
            omega = select_omega(covs[k], c, cfg.omega_grid)
            pts[k], covs[k] = ci_fuse_point(pts[k], covs[k], p, c, omega)

    used = [t for t in tracks if t.sensor_id in contributing]
    w = np.array([weights[t.sensor_id] for t in used])
    velocity = (w[:, None] * np.array([t.velocity for t in used])).sum(axis=0) / w.sum()
    poly = _complete(anchor.shape.kind, pts, velocity, cfg)
    state = geo.orient_polygon(poly, _heading(velocity, poly, cfg))
    state = ParallelogramState(state.rf_x, state.rf_y, state.l, state.w, state.theta,
                               state.theta_star, float(velocity[0]), float(velocity[1]))
    return FusedLabel(state, np.array(covs), frozenset(contributing))


def _match_track(t: SensorTrack, anchor: SensorTrack, a_pairs, cfg):
    """(anchor point index, track point index) pairs that pass the gates."""
    apts = anchor.shape.points
    if t.shape.kind is ShapeKind.POINT:
        p = t.shape.points[0]
        if anchor.shape.kind is ShapeKind.L_SHAPE:
            k = 1
        else:
            k = int(np.argmin(np.linalg.norm(apts - p, axis=1)))
        return [(k, 0)] if np.hypot(*(apts[k] - p)) < cfg.hausdorff_gate_m else []
    found: list[tuple[int, int]] = []
    for ti, tj in _segment_index_pairs(t.shape.kind):
        tseg = t.shape.points[[ti, tj]]
        if anchor.shape.kind is ShapeKind.POINT:
            for tk in (ti, tj):
                if np.hypot(*(tseg[0 if tk == ti else 1] - apts[0])) < cfg.hausdorff_gate_m:
                    found.append((0, tk))
            continue
        best = None
        for ai, aj in a_pairs:
            dec = associate(tseg, apts[[ai, aj]], cfg)
            if dec.associated and (best is None or dec.hausdorff < best[0]):
                best = (dec.hausdorff, ai, aj)
        if best is None:
            continue
        _, ai, aj = best
        direct = np.hypot(*(tseg[0] - apts[ai])) + np.hypot(*(tseg[1] - apts[aj]))
        flipped = np.hypot(*(tseg[0] - apts[aj])) + np.hypot(*(tseg[1] - apts[ai]))
        pairs = [(ai, ti), (aj, tj)] if direct <= flipped else [(aj, ti), (ai, tj)]
        for pr in pairs:
            if pr not in found:
                found.append(pr)
    # one track point feeds at most one anchor point and vice versa
    seen_a, seen_t, out = set(), set(), []
    for ai, ti in found:
        if ai not in seen_a and ti not in seen_t:
            out.append((ai, ti))
            seen_a.add(ai)
            seen_t.add(ti)
    return out


def _complete(kind, pts, velocity, cfg):
    if kind is ShapeKind.L_SHAPE:
        try:
            return geo.complete_parallelogram(*pts)
        except CollinearPoints:
            kind, pts = ShapeKind.I_SHAPE, [pts[0], pts[2]]
    if kind is ShapeKind.I_SHAPE:
        a, b = pts
        n = _away_normal(a, b)
        return geo.complete_parallelogram(a, b, b + cfg.default_width_m * n)
    p = pts[0]
    h = velocity / np.hypot(*velocity) if np.hypot(*velocity) > cfg.min_heading_speed else np.array([1.0, 0.0])
    side = np.array([-h[1], h[0]]) * 0.5 * cfg.default_width_m
    rear_right = p - side
    return geo.complete_parallelogram(p + side, rear_right, rear_right + cfg.default_length_m * h)
