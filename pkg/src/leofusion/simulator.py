"""Synthetic asynchronous multi-sensor track streams with ground truth.

Each scenario follows one target vehicle relative to the ego vehicle on a
straight road. Seven sensors fire at their native rates with random phase;
every observation is abstracted into an L-, I- or point shape according to
what the sensor can see, perturbed with range-dependent Gaussian noise whose
covariance is reported alongside the points. Observations are bucketed into
20 ms fusion slots (one :class:`Frame` per slot) but keep their true
timestamps; hold-last alignment happens when graphs are built.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

import numpy as np

from . import geometry as geo
from .errors import InvalidConfig, SchemaMismatch
from .fusion import FusedLabel, SensorId, SensorTrack
from .geometry import ParallelogramState, ShapeKind, ShapePrimitive

SLOT_S = 0.02
SCHEMA_NAME = "leo-dataset"
SCHEMA_VERSION = 1
MAX_EGO_SPEED = 38.9


class ScenarioKind(str, Enum):
    HIGHWAY_FOLLOW = "HIGHWAY_FOLLOW"
    CUT_IN = "CUT_IN"
    OCCLUSION = "OCCLUSION"
    ARTICULATED = "ARTICULATED"


class Lane(str, Enum):
    EL = "EL"
    LL = "LL"
    RL = "RL"
    OTHER = "OTHER"


def lane_of(y: float) -> Lane:
    """Lane from lateral centroid position: EL [-1.5, 1.5], LL (1.5, 4.5], RL [-4.5, -1.5)."""
    if -1.5 <= y <= 1.5:
        return Lane.EL
    if 1.5 < y <= 4.5:
        return Lane.LL
    if -4.5 <= y < -1.5:
        return Lane.RL
    return Lane.OTHER


LANE_CENTRES = {Lane.EL: 0.0, Lane.LL: 3.0, Lane.RL: -3.0}


@dataclass(frozen=True)
class EgoState:
    v: float
    yaw_rate: float
    a: float
    timestamp: float

    def __post_init__(self):
        if not (0.0 <= self.v <= MAX_EGO_SPEED):
            raise ValueError(f"ego speed {self.v} outside [0, {MAX_EGO_SPEED}]")
        if not (-0.6 <= self.yaw_rate <= 0.6):
            raise ValueError(f"yaw rate {self.yaw_rate} outside [-0.6, 0.6]")
        if not (-10.0 <= self.a <= 5.0):
            raise ValueError(f"acceleration {self.a} outside [-10, 5]")

    def to_dict(self) -> dict:
        return {"v": self.v, "yaw_rate": self.yaw_rate, "a": self.a, "timestamp": self.timestamp}

    @classmethod
    def from_dict(cls, d: dict) -> "EgoState":
        return cls(float(d["v"]), float(d["yaw_rate"]), float(d["a"]), float(d["timestamp"]))


@dataclass(frozen=True)
class SensorSpec:
    sensor_id: SensorId
    family: str  # radar | lidar | camera
    mount: tuple[float, float]
    boresight: float
    fov: float
    max_range: float
    rate_hz: float
    sigma0: float  # range-direction std at 10 m
    cross_ratio: float  # cross-range std / range std
    sigma_v: float
    penetrating: bool = False
    point_range: float | None = None  # beyond this range only a point is reported


_DEG = math.pi / 180.0
SENSORS: dict[SensorId, SensorSpec] = {
    s.sensor_id: s
    for s in [
        SensorSpec(SensorId.LRL, "lidar", (3.6, 0.0), 0.0, 120 * _DEG, 150.0, 40.0, 0.05, 1.0, 0.3),
        SensorSpec(SensorId.LRR, "radar", (3.8, 0.0), 0.0, 60 * _DEG, 200.0, 60.0, 0.3, 1.0, 0.1,
                   penetrating=True, point_range=80.0),
        SensorSpec(SensorId.MMRFR, "radar", (3.5, -0.8), -45 * _DEG, 60 * _DEG, 80.0, 60.0, 0.3, 1.0,
                   0.1, point_range=80.0),
        SensorSpec(SensorId.MMRFL, "radar", (3.5, 0.8), 45 * _DEG, 60 * _DEG, 80.0, 60.0, 0.3, 1.0,
                   0.1, point_range=80.0),
        SensorSpec(SensorId.MPC, "camera", (2.0, 0.0), 0.0, 90 * _DEG, 100.0, 80.0, 0.15, 0.5, 0.4),
        SensorSpec(SensorId.LIDAR_CONTOUR, "lidar", (3.6, 0.0), 0.0, 120 * _DEG, 100.0, 40.0, 0.05,
                   1.0, 0.3),
        SensorSpec(SensorId.SMPC, "camera", (2.0, 0.0), 0.0, 90 * _DEG, 40.0, 80.0, 0.1, 0.5, 0.3),
    ]
}

REPORTED_SIGMA_FLOOR = 0.01


@dataclass(frozen=True)
class ScenarioConfig:
    scenario_kind: ScenarioKind
    duration: float
    seed: int
    target_length: float
    target_width: float
    sensor_dropout_prob: float | dict = 0.0
    noise_scale: float = 1.0
    motion_scale: float = 1.0
    lane: Lane | None = None

    def __post_init__(self):
        try:
            object.__setattr__(self, "scenario_kind", ScenarioKind(self.scenario_kind))
            if self.lane is not None:
                object.__setattr__(self, "lane", Lane(self.lane))
        except ValueError as e:
            raise InvalidConfig(str(e)) from None
        if not (3.0 <= self.target_length <= 75.0):
            raise InvalidConfig(f"target_length {self.target_length} outside [3, 75]")
        if not (0.5 <= self.target_width <= 4.0):
            raise InvalidConfig(f"target_width {self.target_width} outside [0.5, 4]")
        if self.duration <= 0.12:
            raise InvalidConfig("duration must exceed one 120 ms window")
        probs = (self.sensor_dropout_prob.values() if isinstance(self.sensor_dropout_prob, dict)
                 else [self.sensor_dropout_prob])
        if any(not (0.0 <= p <= 1.0) for p in probs):
            raise InvalidConfig("dropout probabilities must lie in [0, 1]")
        if self.noise_scale < 0 or self.motion_scale < 0:
            raise InvalidConfig("noise_scale and motion_scale must be non-negative")

    @property
    def scenario_id(self) -> str:
        return f"{self.scenario_kind.value}-{self.seed}"

    def dropout_for(self, sensor: SensorId) -> float:
        if isinstance(self.sensor_dropout_prob, dict):
            return float(self.sensor_dropout_prob.get(sensor.value, 0.0))
        return float(self.sensor_dropout_prob)


@dataclass
class Frame:
    fusion_timestamp: float
    tracks: list[SensorTrack]
    ego: EgoState
    truth: ParallelogramState
    lane: Lane
    scenario_id: str = ""
    object_id: int = 1
    fused_label: FusedLabel | None = None
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "fusion_timestamp": self.fusion_timestamp,
            "scenario_id": self.scenario_id,
            "object_id": self.object_id,
            "ego": self.ego.to_dict(),
            "truth": self.truth.to_dict(),
            "lane": self.lane.value,
            "tracks": [t.to_dict() for t in self.tracks],
            "fused_label": None if self.fused_label is None else self.fused_label.to_dict(),
            "extras": self.extras,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Frame":
        fl = d.get("fused_label")
        return cls(
            fusion_timestamp=float(d["fusion_timestamp"]),
            tracks=[SensorTrack.from_dict(t) for t in d["tracks"]],
            ego=EgoState.from_dict(d["ego"]),
            truth=ParallelogramState.from_dict(d["truth"]),
            lane=Lane(d["lane"]),
            scenario_id=d.get("scenario_id", ""),
            object_id=int(d.get("object_id", 1)),
            fused_label=None if fl is None else FusedLabel.from_dict(fl),
            extras=d.get("extras", {}),
        )


# --- noise & visibility ------------------------------------------------------


def noise_cov(spec: SensorSpec, point, noise_scale: float = 1.0) -> np.ndarray:
    """Range-dependent covariance: std grows linearly with range, oval along the bearing."""
    d = np.asarray(point, float) - np.asarray(spec.mount)
    r = max(float(np.hypot(*d)), 2.0)
    s_r = noise_scale * spec.sigma0 * r / 10.0
    s_c = spec.cross_ratio * s_r
    b = math.atan2(d[1], d[0])
    c, s = math.cos(b), math.sin(b)
    rot = np.array([[c, -s], [s, c]])
    return rot @ np.diag([s_r * s_r, s_c * s_c]) @ rot.T


def _reported_cov(spec, point, noise_scale):
    cov = noise_cov(spec, point, noise_scale)
    return cov + np.eye(2) * REPORTED_SIGMA_FLOOR ** 2 if noise_scale == 0 else cov


def _rays_blocked(origin, pts, occluder) -> np.ndarray:
    """True where the segment origin->pt crosses any edge of the occluder polygon."""
    o = np.asarray(origin, float)
    d = pts - o  # (n, 2)
    a = occluder
    b = np.roll(occluder, -1, axis=0)
    e = b - a  # (m, 2)
    denom = d[:, None, 0] * e[None, :, 1] - d[:, None, 1] * e[None, :, 0]
    ao = a[None, :, :] - o
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (ao[..., 0] * e[None, :, 1] - ao[..., 1] * e[None, :, 0]) / denom
        u = (ao[..., 0] * d[:, None, 1] - ao[..., 1] * d[:, None, 0]) / denom
    hit = (np.abs(denom) > 1e-12) & (t > 0) & (t < 1 - 1e-9) & (u >= 0) & (u <= 1)
    return hit.any(axis=1)


def _in_fov(spec: SensorSpec, p) -> bool:
    d = np.asarray(p, float) - np.asarray(spec.mount)
    r = float(np.hypot(*d))
    bearing = math.atan2(d[1], d[0]) - spec.boresight
    return r <= spec.max_range and abs(float(geo.wrap_angle(bearing))) <= 0.5 * spec.fov


N_EDGE_SAMPLES = 41
GRAZING_SIN = 0.02


def visible_runs(poly, origin, occluders=()):
    """For each edge facing ``origin``: (edge index, t0, t1) of its longest unoccluded run.

    ``t`` parametrises the edge from its start vertex (0) to its end vertex (1).
    """
    o = np.asarray(origin, float)
    runs = []
    ts = np.linspace(0.0, 1.0, N_EDGE_SAMPLES)
    for k in range(4):
        a, b = poly[k], poly[(k + 1) % 4]
        e = b - a
        n = np.array([e[1], -e[0]]) / np.linalg.norm(e)
        to_o = o - 0.5 * (a + b)
        if n @ to_o <= GRAZING_SIN * np.linalg.norm(to_o):
            continue
        pts = a + ts[:, None] * e
        vis = np.ones(N_EDGE_SAMPLES, dtype=bool)
        for occ in occluders:
            vis &= ~_rays_blocked(o, pts, occ)
        best, start = None, None
        for i, v in enumerate(np.append(vis, False)):
            if v and start is None:
                start = i
            elif not v and start is not None:
                if i - 1 > start and (best is None or i - 1 - start > best[1] - best[0]):
                    best = (start, i - 1)
                start = None
        if best is not None:
            runs.append((k, ts[best[0]], ts[best[1]]))
    return runs


def _abstract_shape(poly, spec: SensorSpec, occluders):
    """Noiseless extension points and kind for one sensor, or None if not visible."""
    o = np.asarray(spec.mount, float)
    runs = visible_runs(poly, o, () if spec.penetrating else occluders)
    if not runs:
        return None
    if spec.penetrating and len(runs) == 1:
        k = runs[0][0]
        mids = [0.5 * (poly[j] + poly[(j + 1) % 4]) for j in ((k - 1) % 4, (k + 1) % 4)]
        side = (k - 1) % 4 if np.linalg.norm(mids[0] - o) <= np.linalg.norm(mids[1] - o) else (k + 1) % 4
        runs = sorted(runs + [(side, 0.0, 1.0)])

    def pt(k, t):
        return poly[k] + t * (poly[(k + 1) % 4] - poly[k])

    kind, pts = None, None
    if len(runs) == 2:
        (k1, a1, b1), (k2, a2, b2) = runs
        if (k1 + 1) % 4 == k2 and b1 == 1.0 and a2 == 0.0:
            kind, pts = ShapeKind.L_SHAPE, (pt(k1, a1), poly[k2], pt(k2, b2))
        elif (k2 + 1) % 4 == k1 and b2 == 1.0 and a1 == 0.0:
            kind, pts = ShapeKind.L_SHAPE, (pt(k2, a2), poly[k1], pt(k1, b1))
    if kind is None:
        k, a, b = max(runs, key=lambda r: (r[2] - r[1]) * np.linalg.norm(poly[(r[0] + 1) % 4] - poly[r[0]]))
        kind, pts = ShapeKind.I_SHAPE, (pt(k, a), pt(k, b))
    pts = [np.asarray(p, float) for p in pts]
    near = min(pts, key=lambda p: np.linalg.norm(p - o))
    if not _in_fov(spec, near):
        return None
    if spec.point_range is not None and np.linalg.norm(near - o) > spec.point_range:
        corner = pts[1] if kind is ShapeKind.L_SHAPE else near
        return ShapeKind.POINT, [corner]
    if kind is ShapeKind.L_SHAPE:
        return kind, list(geo.order_l_points(*pts))
    return kind, list(geo.order_endpoints(*pts))


def _sample_noise(spec: SensorSpec, pts, noise_scale, rng) -> np.ndarray:
    """Zero-mean draws from :func:`noise_cov` at each point, vectorised."""
    pts = np.atleast_2d(np.asarray(pts, float))
    d = pts - np.asarray(spec.mount)
    r = np.maximum(np.hypot(d[:, 0], d[:, 1]), 2.0)
    s_r = noise_scale * spec.sigma0 * r / 10.0
    z = rng.standard_normal((len(pts), 2)) * np.stack([s_r, spec.cross_ratio * s_r], axis=1)
    b = np.arctan2(d[:, 1], d[:, 0])
    c, s = np.cos(b), np.sin(b)
    return np.stack([c * z[:, 0] - s * z[:, 1], s * z[:, 0] + c * z[:, 1]], axis=1)


CONTOUR_ANGULAR_RES = 0.002  # rad between contour returns


MIN_EDGE_RETURNS = 10  # fewer returns than this and an edge is not resolved


def _edge_returns(a, b, spec) -> int:
    """Number of contour returns on edge a-b: its angular extent over the resolution."""
    o = np.asarray(spec.mount)
    ang = abs(float(geo.wrap_angle(math.atan2(*(b - o)[::-1]) - math.atan2(*(a - o)[::-1]))))
    return int(min(ang / CONTOUR_ANGULAR_RES, 150))


def _contour_points(kind, pts, spec, noise_scale, rng):
    chain = [pts[0], pts[1]] if kind is ShapeKind.I_SHAPE else [pts[0], pts[1], pts[2]]
    if kind is ShapeKind.L_SHAPE:
        n1, n2 = _edge_returns(pts[0], pts[1], spec), _edge_returns(pts[1], pts[2], spec)
        if min(n1, n2) < MIN_EDGE_RETURNS:
            chain = [pts[0], pts[1]] if n1 >= n2 else [pts[1], pts[2]]
    out = []
    for a, b in zip(chain[:-1], chain[1:]):
        n = max(_edge_returns(a, b, spec), 6)
        seg = a + np.linspace(0.0, 1.0, n)[:, None] * (b - a)
        out.append(seg if not out else seg[1:])
    contour = np.vstack(out)
    if noise_scale > 0:
        contour = contour + _sample_noise(spec, contour, noise_scale, rng)
    return contour


def sense_target(truth: ParallelogramState, sensor_id, ego: EgoState | None, rng, *,
                 timestamp: float | None = None, occluders=(), noise_scale: float = 1.0,
                 dropout: float = 0.0, object_id: int = 1) -> SensorTrack | None:
    """One sensor observation of ``truth`` or None (dropout / not visible)."""
    spec = SENSORS[SensorId(sensor_id)]
    if dropout > 0.0 and rng.random() < dropout:
        return None
    poly = geo.state_to_polygon(truth)
    shaped = _abstract_shape(poly, spec, [np.asarray(o, float) for o in occluders])
    if shaped is None:
        return None
    kind, pts = shaped
    ts = float(timestamp if timestamp is not None else (ego.timestamp if ego else 0.0))
    if spec.sensor_id is SensorId.LIDAR_CONTOUR and kind is not ShapeKind.POINT:
        contour = _contour_points(kind, pts, spec, noise_scale, rng)
        sig = noise_scale * spec.sigma0 * max(np.linalg.norm(pts[1] - spec.mount), 2.0) / 10.0
        prim = geo.fit_l_shape_ransac(contour, iterations=100, inlier_tol=max(0.1, 3.0 * sig),
                                      rng=rng)
        covs = np.stack([_reported_cov(spec, p, noise_scale) for p in prim.points])
        prim = ShapePrimitive(prim.kind, prim.points, covs)
    else:
        covs = np.stack([_reported_cov(spec, p, noise_scale) for p in pts])
        noisy = np.stack(pts)
        if noise_scale > 0:
            noisy = noisy + _sample_noise(spec, noisy, noise_scale, rng)
        prim = ShapePrimitive(kind, noisy, covs)
    ref = prim.points[1] if prim.kind is ShapeKind.L_SHAPE else prim.points[0]
    sv = noise_scale * spec.sigma_v
    vel = np.array([truth.v_x, truth.v_y]) + (rng.normal(0.0, sv, 2) if sv > 0 else 0.0)
    k_ref = 1 if prim.kind is ShapeKind.L_SHAPE else 0
    state_cov = np.zeros((4, 4))
    state_cov[:2, :2] = prim.covs[k_ref]
    state_cov[2:, 2:] = np.eye(2) * max(sv, REPORTED_SIGMA_FLOOR) ** 2
    return SensorTrack(spec.sensor_id, object_id, ts, np.concatenate([ref, vel]), state_cov, prim)


# --- scenario kinematics -----------------------------------------------------


def _smoothstep(t, t0, dur):
    """Cosine ramp 0 -> 1 over [t0, t0 + dur] and its time derivative."""
    if t <= t0:
        return 0.0, 0.0
    if t >= t0 + dur:
        return 1.0, 0.0
    u = (t - t0) / dur
    return 0.5 * (1 - math.cos(math.pi * u)), 0.5 * math.pi / dur * math.sin(math.pi * u)


class _Scene:
    """Analytic trajectories of ego, target and (optional) occluder."""

    def __init__(self, cfg: ScenarioConfig, rng):
        self.cfg = cfg
        m = cfg.motion_scale
        L, W = cfg.target_length, cfg.target_width
        self.v0 = rng.uniform(20.0, 33.0)
        self.a_amp = rng.uniform(0.0, 1.5)
        self.w_e = rng.uniform(0.1, 0.4)
        self.ph_e = rng.uniform(0, 2 * math.pi)
        lo, hi = 15.0 + 0.5 * L, max(16.0 + 0.5 * L, 80.0 - 0.5 * L)
        self.x0 = rng.uniform(lo, hi)
        self.ax = m * rng.uniform(2.0, 8.0)
        self.px = rng.uniform(15.0, 40.0)
        self.ph_x = rng.uniform(0, 2 * math.pi)
        lanes = [Lane.EL, Lane.LL, Lane.RL]
        self.lane = cfg.lane if cfg.lane is not None else lanes[int(rng.integers(0, 3))]
        self.y0 = LANE_CENTRES.get(self.lane, 0.0)
        kind = cfg.scenario_kind
        if kind is ScenarioKind.CUT_IN:
            side = 1.0 if self.lane in (Lane.LL, Lane.EL) else -1.0
            self.lane = Lane.LL if side > 0 else Lane.RL
            self.cut_amp = 3.5
            self.cut_side = side
            self.cut_t0 = 0.25 * cfg.duration
            self.cut_dur = min(rng.uniform(2.5, 4.0), max(0.5, 0.7 * cfg.duration))
        if kind is ScenarioKind.OCCLUSION:
            toward = -math.copysign(1.0, self.y0) if self.y0 != 0 else (1.0 if rng.random() < 0.5 else -1.0)
            self.occ_y = self.y0 + toward * rng.uniform(1.3, 2.1)
            self.occ_len, self.occ_w = 4.5, 1.9
            self.occ_frac = rng.uniform(0.35, 0.6)
            self.occ_amp = rng.uniform(0.15, 0.3)
            self.occ_p = rng.uniform(4.0, 9.0)
            self.occ_ph = rng.uniform(0, 2 * math.pi)
        if kind is ScenarioKind.ARTICULATED:
            self.trailer_len = L * rng.uniform(0.62, 0.72)
            self.tractor_len = L - self.trailer_len
            self.hinge_amp = m * rng.uniform(0.05, 0.25)
            self.hinge_p = rng.uniform(6.0, 14.0)
            self.hinge_ph = rng.uniform(0, 2 * math.pi)

    def ego(self, t) -> EgoState:
        v = self.v0 + self.a_amp * math.sin(self.w_e * t + self.ph_e)
        a = self.a_amp * self.w_e * math.cos(self.w_e * t + self.ph_e)
        return EgoState(float(np.clip(v, 0.0, MAX_EGO_SPEED)), 0.0, a, t)

    def _long(self, t):
        w = 2 * math.pi / self.px
        return self.x0 + self.ax * math.sin(w * t + self.ph_x), self.ax * w * math.cos(w * t + self.ph_x)

    def _lat(self, t):
        if self.cfg.scenario_kind is ScenarioKind.CUT_IN:
            s, ds = _smoothstep(t, self.cut_t0, self.cut_dur)
            amp = self.cut_side * self.cut_amp * self.cfg.motion_scale
            return amp * (1.0 - s), -amp * ds
        return self.y0, 0.0

    def truth(self, t) -> ParallelogramState:
        cfg = self.cfg
        xc, dxc = self._long(t)
        yc, dyc = self._lat(t)
        vx = self.ego(t).v + dxc
        vy = dyc
        if cfg.scenario_kind is ScenarioKind.ARTICULATED:
            return self._articulated(t, xc, yc, vx, vy)
        th = math.atan2(vy, vx)
        L, W = cfg.target_length, cfg.target_width
        u = np.array([math.cos(th), math.sin(th)])
        n = np.array([-u[1], u[0]])
        rf = np.array([xc, yc]) - 0.5 * L * u - 0.5 * W * n
        return ParallelogramState(float(rf[0]), float(rf[1]), L, W, float(th), math.pi / 2, vx, vy)

    def _articulated(self, t, xc, yc, vx, vy):
        W = self.cfg.target_width
        gamma = self.hinge_amp * math.sin(2 * math.pi * t / self.hinge_p + self.hinge_ph)
        total = self.trailer_len + self.tractor_len
        rear_x = xc - 0.5 * total
        p2 = np.array([rear_x, yc - 0.5 * W])  # trailer rear-right
        p1 = np.array([rear_x, yc + 0.5 * W])  # trailer rear-left
        hinge = np.array([rear_x + self.trailer_len, yc])
        u = np.array([math.cos(gamma), math.sin(gamma)])
        n = np.array([-u[1], u[0]])
        p3 = hinge + self.tractor_len * u - 0.5 * W * n  # tractor front-right
        e = p3 - p2
        th = math.atan2(e[1], e[0])
        return ParallelogramState(float(p2[0]), float(p2[1]), float(np.hypot(*e)), W, th,
                                  float(math.pi / 2 - th), vx, vy)

    def occluders(self, t):
        if self.cfg.scenario_kind is not ScenarioKind.OCCLUSION:
            return []
        xt, _ = self._long(t)
        rear_t = xt - 0.5 * self.cfg.target_length
        xo = xt * (self.occ_frac + self.occ_amp * math.sin(2 * math.pi * t / self.occ_p + self.occ_ph))
        xo = min(xo, rear_t - 0.5 * self.occ_len - 2.0)
        xo = max(xo, 6.0 + 0.5 * self.occ_len)
        hl, hw = 0.5 * self.occ_len, 0.5 * self.occ_w
        return [np.array([[xo - hl, self.occ_y - hw], [xo + hl, self.occ_y - hw],
                          [xo + hl, self.occ_y + hw], [xo - hl, self.occ_y + hw]])]


def scenario_rng(cfg: ScenarioConfig) -> np.random.Generator:
    kind_idx = list(ScenarioKind).index(cfg.scenario_kind)
    return np.random.default_rng(np.random.SeedSequence([int(cfg.seed), kind_idx]))


def generate_scenario(cfg: ScenarioConfig) -> list[Frame]:
    """Frames on the 20 ms grid over ``[0, duration]``; deterministic in the seed."""
    rng = scenario_rng(cfg)
    scene = _Scene(cfg, rng)
    n_slots = int(math.floor(cfg.duration / SLOT_S + 1e-9)) + 1
    events = []
    for spec in SENSORS.values():
        period = 1.0 / spec.rate_hz
        phase = rng.uniform(0.0, period)
        n = 0
        while phase + n * period <= cfg.duration + 1e-12:
            events.append((phase + n * period, spec.sensor_id.index, spec.sensor_id))
            n += 1
    events.sort()
    per_slot: list[list[SensorTrack]] = [[] for _ in range(n_slots)]
    for ts, _, sid in events:
        truth = scene.truth(ts)
        obs = sense_target(truth, sid, None, rng, timestamp=ts, occluders=scene.occluders(ts),
                           noise_scale=cfg.noise_scale, dropout=cfg.dropout_for(sid))
        if obs is None:
            continue
        slot = int(math.ceil(ts / SLOT_S - 1e-9))
        if slot < n_slots:
            per_slot[slot].append(obs)
    frames = []
    for j in range(n_slots):
        t = round(j * SLOT_S, 9)
        truth = scene.truth(t)
        frames.append(Frame(
            fusion_timestamp=t, tracks=per_slot[j], ego=scene.ego(t), truth=truth,
            lane=lane_of(float(truth.centroid[1])), scenario_id=cfg.scenario_id,
            extras={"kind": cfg.scenario_kind.value},
        ))
    return frames


def default_dimensions(kind: ScenarioKind, rng) -> tuple[float, float]:
    if kind is ScenarioKind.ARTICULATED:
        return float(rng.uniform(15.0, 21.0)), 2.5
    if kind is not ScenarioKind.CUT_IN and rng.random() < 0.3:
        return float(rng.uniform(10.0, 16.0)), 2.5
    return float(rng.uniform(3.8, 5.2)), float(rng.uniform(1.7, 2.0))


def make_configs(kinds, per_kind: int, duration: float, seed: int, **overrides) -> list[ScenarioConfig]:
    """Scenario configs with seeded per-scenario dimensions."""
    out = []
    for ki, kind in enumerate(kinds):
        kind = ScenarioKind(kind)
        for i in range(per_kind):
            s = seed * 100003 + ki * 10007 + i
            dims_rng = np.random.default_rng(np.random.SeedSequence([s, 99]))
            L, W = default_dimensions(kind, dims_rng)
            out.append(ScenarioConfig(kind, duration, s, L, W, **overrides))
    return out


# --- dataset IO --------------------------------------------------------------


def _header() -> str:
    return json.dumps({"schema": SCHEMA_NAME, "version": SCHEMA_VERSION}, sort_keys=True)


def frame_line(frame: Frame) -> str:
    return json.dumps(frame.to_dict(), sort_keys=True, separators=(",", ":"))


def write_dataset(frames, path) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        fh.write(_header() + "\n")
        for f in frames:
            fh.write(frame_line(f) + "\n")


def read_dataset(path) -> list[Frame]:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        first = fh.readline()
        try:
            head = json.loads(first)
        except json.JSONDecodeError:
            raise SchemaMismatch(f"{path}: first line is not a JSON header") from None
        if not isinstance(head, dict) or head.get("schema") != SCHEMA_NAME:
            raise SchemaMismatch(f"{path}: expected schema {SCHEMA_NAME!r}, got {head!r}")
        if head.get("version") != SCHEMA_VERSION:
            raise SchemaMismatch(
                f"{path}: dataset version {head.get('version')!r}, reader supports {SCHEMA_VERSION}")
        return [Frame.from_dict(json.loads(line)) for line in fh if line.strip()]


def with_fused_label(frame: Frame, label: FusedLabel | None) -> Frame:
    return replace(frame, fused_label=label)
