"""Planar geometry for parallelogram object shapes.

Coordinates are metres in the ego frame (x forward, y left). Polygons are
``(n, 2)`` float arrays with counter-clockwise vertex order; segments are
``(2, 2)`` arrays ``[a, b]``.

The overlap routines (:func:`giou`, :func:`diou`, ...) are written once over
generic scalars so the same code path also runs on :class:`Jet` values, which
is how the training loss gets exact gradients through polygon clipping.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import CollinearPoints, DegenerateArea

TWO_PI = 2.0 * math.pi


def wrap_angle(a):
    """Wrap angle(s) into the half-open interval (-pi, pi]."""
    return -(np.mod(-np.asarray(a, dtype=float) + math.pi, TWO_PI) - math.pi)


def wrap_angle_period(a, period):
    """Wrap into (-period/2, period/2]."""
    half = 0.5 * period
    return -(np.mod(-np.asarray(a, dtype=float) + half, period) - half)


@dataclass(frozen=True)
class ParallelogramState:
    """The 8-parameter object label: reference vertex, size, angles, velocity.

    ``theta`` is the direction of the length edge leaving the reference point,
    ``theta_star`` the internal angle between length and width edges.
    """

    rf_x: float
    rf_y: float
    l: float
    w: float
    theta: float
    theta_star: float
    v_x: float = 0.0
    v_y: float = 0.0

    FIELDS = ("rf_x", "rf_y", "l", "w", "theta", "theta_star", "v_x", "v_y")

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f) for f in self.FIELDS], dtype=float)

    @classmethod
    def from_array(cls, arr) -> "ParallelogramState":
        arr = np.asarray(arr, dtype=float).reshape(-1)
        if arr.size != 8:
            raise ValueError(f"expected 8 parameters, got {arr.size}")
        return cls(*(float(v) for v in arr))

    def to_dict(self) -> dict:
        return {f: float(getattr(self, f)) for f in self.FIELDS}

    @classmethod
    def from_dict(cls, d: dict) -> "ParallelogramState":
        return cls(**{f: float(d[f]) for f in cls.FIELDS})

    def check(self) -> "ParallelogramState":
        vals = self.as_array()
        if not np.all(np.isfinite(vals)):
            raise ValueError(f"non-finite state {self}")
        if self.l <= 0 or self.w <= 0:
            raise ValueError(f"non-positive extent in {self}")
        if not (-math.pi < self.theta <= math.pi):
            raise ValueError(f"theta {self.theta} outside (-pi, pi]")
        if not (0.0 < self.theta_star < math.pi):
            raise ValueError(f"theta_star {self.theta_star} outside (0, pi)")
        return self

    @property
    def centroid(self) -> np.ndarray:
        return state_to_polygon(self).mean(axis=0)


class ShapeKind(str, Enum):
    L_SHAPE = "L_SHAPE"
    I_SHAPE = "I_SHAPE"
    POINT = "POINT"

    @property
    def n_points(self) -> int:
        return {"L_SHAPE": 3, "I_SHAPE": 2, "POINT": 1}[self.value]


@dataclass(frozen=True)
class ShapePrimitive:
    kind: ShapeKind
    points: np.ndarray = field(repr=False)
    covs: np.ndarray = field(repr=False)

    def __post_init__(self):
        kind = ShapeKind(self.kind)
        pts = np.asarray(self.points, dtype=float).reshape(-1, 2)
        covs = np.asarray(self.covs, dtype=float).reshape(-1, 2, 2)
        if len(pts) != kind.n_points:
            raise ValueError(f"{kind.value} needs {kind.n_points} points, got {len(pts)}")
        if len(covs) != len(pts):
            raise ValueError("one covariance per extension point required")
        if not np.allclose(covs, np.transpose(covs, (0, 2, 1)), atol=1e-12):
            raise ValueError("point covariances must be symmetric")
        if np.any(np.linalg.det(covs) <= 0.0) or np.any(covs[:, 0, 0] <= 0.0):
            raise ValueError("point covariances must be positive definite")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "covs", covs)

    def segments(self) -> list[np.ndarray]:
        if self.kind is ShapeKind.L_SHAPE:
            return [self.points[[0, 1]], self.points[[1, 2]]]
        if self.kind is ShapeKind.I_SHAPE:
            return [self.points[[0, 1]]]
        return []

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "points": self.points.tolist(),
            "covs": self.covs.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ShapePrimitive":
        return cls(ShapeKind(d["kind"]), np.array(d["points"], float), np.array(d["covs"], float))


def _cross(ax, ay, bx, by):
    return ax * by - ay * bx


def signed_area(poly) -> float:
    p = np.asarray(poly, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_area(poly) -> float:
    return abs(signed_area(poly))


def ensure_ccw(poly) -> np.ndarray:
    p = np.asarray(poly, dtype=float)
    return p[::-1].copy() if signed_area(p) < 0 else p.copy()


def complete_parallelogram(p1, p2, p3) -> np.ndarray:
    """Complete three ordered extension points to a CCW parallelogram.

    ``p2`` is the corner shared by both visible edges; the missing vertex is
    ``p1 + p3 - p2``.
    """
    p1, p2, p3 = (np.asarray(p, dtype=float).reshape(2) for p in (p1, p2, p3))
    e1, e3 = p1 - p2, p3 - p2
    if 0.5 * abs(_cross(e1[0], e1[1], e3[0], e3[1])) < 1e-9:
        raise CollinearPoints(f"points {p1}, {p2}, {p3} are collinear")
    return ensure_ccw(np.stack([p1, p2, p3, p1 + p3 - p2]))


def _unit(phi):
    return np.array([math.cos(phi), math.sin(phi)])


def state_to_polygon(s: ParallelogramState) -> np.ndarray:
    rf = np.array([s.rf_x, s.rf_y])
    el = s.l * _unit(s.theta)
    ew = s.w * _unit(s.theta + s.theta_star)
    return np.stack([rf, rf + el, rf + el + ew, rf + ew])


def polygon_to_state(poly, velocity=(0.0, 0.0)) -> ParallelogramState:
    """Inverse of :func:`state_to_polygon`; vertex 0 is the reference point."""
    p = np.asarray(poly, dtype=float)
    el, ew = p[1] - p[0], p[3] - p[0]
    theta = float(wrap_angle(math.atan2(el[1], el[0])))
    phi = math.atan2(ew[1], ew[0])
    theta_star = float(np.mod(phi - theta, TWO_PI))
    return ParallelogramState(
        float(p[0, 0]), float(p[0, 1]), float(np.hypot(*el)), float(np.hypot(*ew)),
        theta, theta_star, float(velocity[0]), float(velocity[1]),
    )


def orient_polygon(poly, heading) -> ParallelogramState:
    """Read a parallelogram as a state whose length edge best follows ``heading``.

    The reference point becomes the start vertex of the CCW edge most aligned
    with the heading direction.
    """
    p = ensure_ccw(poly)
    h = np.asarray(heading, dtype=float)
    edges = np.roll(p, -1, axis=0) - p
    align = edges @ h / np.maximum(np.linalg.norm(edges, axis=1), 1e-12)
    k = int(np.argmax(align))
    return polygon_to_state(np.roll(p, -k, axis=0))


# --- scalar-generic overlap machinery -------------------------------------


class Jet:
    """Forward-mode dual number carrying a fixed-length gradient vector."""

    __slots__ = ("v", "d")

    def __init__(self, v, d):
        self.v = v
        self.d = d

    def __add__(self, o):
        if isinstance(o, Jet):
            return Jet(self.v + o.v, self.d + o.d)
        return Jet(self.v + o, self.d)

    __radd__ = __add__

    def __sub__(self, o):
        if isinstance(o, Jet):
            return Jet(self.v - o.v, self.d - o.d)
        return Jet(self.v - o, self.d)

    def __rsub__(self, o):
        return Jet(o - self.v, -self.d)

    def __neg__(self):
        return Jet(-self.v, -self.d)

    def __mul__(self, o):
        if isinstance(o, Jet):
            return Jet(self.v * o.v, self.v * o.d + o.v * self.d)
        return Jet(self.v * o, self.d * o)

    __rmul__ = __mul__

    def __truediv__(self, o):
        if isinstance(o, Jet):
            q = self.v / o.v
            return Jet(q, (self.d - q * o.d) / o.v)
        return Jet(self.v / o, self.d / o)

    def __rtruediv__(self, o):
        q = o / self.v
        return Jet(q, -q / self.v * self.d)

    def __repr__(self):
        return f"Jet({self.v!r}, {self.d!r})"


def _val(x) -> float:
    return x.v if isinstance(x, Jet) else x


def _shoelace(pts):
    n = len(pts)
    acc = 0.0
    for i in range(n):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % n]
        acc = acc + (x0 * y1 - x1 * y0)
    return 0.5 * acc


def _clip(subject, clipper):
    """Sutherland-Hodgman clip of ``subject`` by the CCW convex ``clipper``."""
    out = list(subject)
    m = len(clipper)
    for i in range(m):
        if not out:
            break
        cx, cy = clipper[i]
        ex, ey = clipper[(i + 1) % m]
        dx, dy = ex - cx, ey - cy
        dxv, dyv, cxv, cyv = _val(dx), _val(dy), _val(cx), _val(cy)

        def side(p):
            return dxv * (_val(p[1]) - cyv) - dyv * (_val(p[0]) - cxv)

        src, out = out, []
        s = src[-1]
        ss = side(s)
        for p in src:
            sp = side(p)
            if sp >= 0.0:
                if ss < 0.0:
                    out.append(_edge_hit(s, p, cx, cy, dx, dy))
                out.append(p)
            elif ss >= 0.0:
                out.append(_edge_hit(s, p, cx, cy, dx, dy))
            s, ss = p, sp
    return out


def _edge_hit(s, p, cx, cy, dx, dy):
    rx, ry = p[0] - s[0], p[1] - s[1]
    denom = _cross(rx, ry, dx, dy)
    if abs(_val(denom)) < 1e-300:
        return s
    t = _cross(cx - s[0], cy - s[1], dx, dy) / denom
    return (s[0] + t * rx, s[1] + t * ry)


def _hull_indices(xy: np.ndarray) -> list[int]:
    """Andrew's monotone chain; CCW indices without collinear points."""
    order = sorted(range(len(xy)), key=lambda i: (xy[i, 0], xy[i, 1]))

    def turn(o, a, b):
        return (xy[a, 0] - xy[o, 0]) * (xy[b, 1] - xy[o, 1]) - (xy[a, 1] - xy[o, 1]) * (
            xy[b, 0] - xy[o, 0]
        )

    lower: list[int] = []
    for i in order:
        while len(lower) >= 2 and turn(lower[-2], lower[-1], i) <= 0:
            lower.pop()
        lower.append(i)
    upper: list[int] = []
    for i in reversed(order):
        while len(upper) >= 2 and turn(upper[-2], upper[-1], i) <= 0:
            upper.pop()
        upper.append(i)
    return lower[:-1] + upper[:-1]


def convex_hull(points) -> np.ndarray:
    p = np.asarray(points, dtype=float).reshape(-1, 2)
    return p[_hull_indices(p)]


def _as_ccw_list(pts):
    vals = np.array([[_val(x), _val(y)] for x, y in pts])
    pts = list(pts)
    if signed_area(vals) < 0:
        pts.reverse()
    return pts


def _overlap_terms(pa, pb):
    """(iou, giou, diou) of two convex polygons given as lists of scalar pairs."""
    pa, pb = _as_ccw_list(pa), _as_ccw_list(pb)
    area_a, area_b = _shoelace(pa), _shoelace(pb)
    if _val(area_a) + _val(area_b) < 1e-12:
        raise DegenerateArea("both polygons have (near) zero area")
    inter_pts = _clip(pa, pb)
    inter = _shoelace(inter_pts) if len(inter_pts) >= 3 else 0.0
    if _val(inter) < 0.0:
        inter = 0.0
    union = area_a + area_b - inter
    iou = inter / union

    allp = pa + pb
    xy = np.array([[_val(x), _val(y)] for x, y in allp])
    hull = [allp[i] for i in _hull_indices(xy)]
    hull_area = _shoelace(hull)
    giou = iou - (hull_area - union) / hull_area

    ca = (sum(x for x, _ in pa) / len(pa), sum(y for _, y in pa) / len(pa))
    cb = (sum(x for x, _ in pb) / len(pb), sum(y for _, y in pb) / len(pb))
    d2 = (ca[0] - cb[0]) * (ca[0] - cb[0]) + (ca[1] - cb[1]) * (ca[1] - cb[1])
    ix_min, ix_max = int(np.argmin(xy[:, 0])), int(np.argmax(xy[:, 0]))
    iy_min, iy_max = int(np.argmin(xy[:, 1])), int(np.argmax(xy[:, 1]))
    span_x = allp[ix_max][0] - allp[ix_min][0]
    span_y = allp[iy_max][1] - allp[iy_min][1]
    c2 = span_x * span_x + span_y * span_y
    diou = iou - d2 / c2
    return iou, giou, diou


def _pairs(poly):
    return [(float(x), float(y)) for x, y in np.asarray(poly, dtype=float)]


def polygon_intersection_area(a, b) -> float:
    pts = _clip(_pairs(ensure_ccw(a)), _pairs(ensure_ccw(b)))
    if len(pts) < 3:
        return 0.0
    return max(0.0, float(_shoelace(pts)))


def iou(a, b) -> float:
    return float(_overlap_terms(_pairs(a), _pairs(b))[0])


def giou(a, b) -> float:
    """Generalized IoU; the enclosure is the convex hull of both vertex sets."""
    return float(_overlap_terms(_pairs(a), _pairs(b))[1])


def diou(a, b) -> float:
    """Distance IoU with vertex-average centroids and axis-aligned enclosing box."""
    return float(_overlap_terms(_pairs(a), _pairs(b))[2])


def overlap_metrics(a, b) -> tuple[float, float, float]:
    i, g, d = _overlap_terms(_pairs(a), _pairs(b))
    return float(i), float(g), float(d)


def overlap_with_grad(params, label_poly):
    """IoU, GIoU and DIoU of a predicted shape against a fixed label polygon.

    ``params`` holds ``(rf_x, rf_y, l, w, theta, theta_star)``. Returns three
    ``(value, gradient)`` pairs with gradients of length 6 with respect to
    ``params``. Gradients are exact almost everywhere; at vertex-contact
    configurations the active branch of the clipping decides.
    """
    rfx, rfy, l, w, th, ths = (float(v) for v in params)
    eye = np.eye(6)
    jrx, jry, jl, jw = Jet(rfx, eye[0]), Jet(rfy, eye[1]), Jet(l, eye[2]), Jet(w, eye[3])
    c1, s1 = math.cos(th), math.sin(th)
    c2, s2 = math.cos(th + ths), math.sin(th + ths)
    ux, uy = Jet(c1, -s1 * eye[4]), Jet(s1, c1 * eye[4])
    dphi = eye[4] + eye[5]
    vx, vy = Jet(c2, -s2 * dphi), Jet(s2, c2 * dphi)
    p0 = (jrx, jry)
    p1 = (jrx + jl * ux, jry + jl * uy)
    p3 = (jrx + jw * vx, jry + jw * vy)
    p2 = (p1[0] + jw * vx, p1[1] + jw * vy)
    terms = _overlap_terms([p0, p1, p2, p3], _pairs(label_poly))
    out = []
    for t in terms:
        if isinstance(t, Jet):
            out.append((float(t.v), np.array(t.d, dtype=float)))
        else:
            out.append((float(t), np.zeros(6)))
    return tuple(out)


# --- segments ---------------------------------------------------------------


def point_segment_distance(p, seg) -> float:
    p = np.asarray(p, dtype=float)
    a, b = np.asarray(seg, dtype=float)
    ab = b - a
    denom = float(ab @ ab)
    t = 0.0 if denom == 0.0 else min(1.0, max(0.0, float((p - a) @ ab) / denom))
    return float(np.hypot(*(a + t * ab - p)))


def directed_hausdorff_segment(s1, s2) -> float:
    """sup over s1 of the distance to s2; attained at an endpoint of s1."""
    s1 = np.asarray(s1, dtype=float)
    return max(point_segment_distance(s1[0], s2), point_segment_distance(s1[1], s2))


def hausdorff_segments(s1, s2) -> float:
    return max(directed_hausdorff_segment(s1, s2), directed_hausdorff_segment(s2, s1))


def segment_angle_diff(s1, s2) -> float:
    """Unsigned acute angle between the lines carrying two segments, in [0, pi/2]."""
    d1 = np.diff(np.asarray(s1, dtype=float), axis=0)[0]
    d2 = np.diff(np.asarray(s2, dtype=float), axis=0)[0]
    c = abs(float(d1 @ d2)) / (np.linalg.norm(d1) * np.linalg.norm(d2))
    return math.acos(min(1.0, c))


# --- extension point conventions and L-shape fitting ------------------------


def order_endpoints(a, b) -> tuple[np.ndarray, np.ndarray]:
    """Rear endpoint first; lateral segments are ordered left (larger y) first."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    d = b - a
    if abs(d[0]) >= abs(d[1]):
        return (a, b) if a[0] <= b[0] else (b, a)
    return (a, b) if a[1] >= b[1] else (b, a)


def order_l_points(p1, p2, p3) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Put the endpoint with the smaller longitudinal coordinate first."""
    p1, p2, p3 = (np.asarray(p, dtype=float) for p in (p1, p2, p3))
    if (p3[0], -p3[1]) < (p1[0], -p1[1]):
        p1, p3 = p3, p1
    return p1, p2, p3


def _fit_line(points):
    centre = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - centre, full_matrices=False)
    return centre, vt[0]


def _ransac_line(points, iterations, tol, rng):
    n = len(points)
    i = rng.integers(0, n, iterations)
    j = (i + rng.integers(1, n, iterations)) % n
    d = points[j] - points[i]
    norm = np.linalg.norm(d, axis=1)
    ok = norm > 1e-12
    normal = np.stack([-d[:, 1], d[:, 0]], axis=1) / np.where(ok, norm, 1.0)[:, None]
    dist = np.abs(np.einsum("kd,knd->kn", normal, points[None, :, :] - points[i][:, None, :]))
    counts = np.where(ok, (dist <= tol).sum(axis=1), -1)
    best = int(np.argmax(counts))
    mask = dist[best] <= tol
    if mask.sum() >= 2:
        centre, direction = _fit_line(points[mask])
        refined = np.abs((points - centre) @ np.array([-direction[1], direction[0]])) <= tol
        if refined.sum() >= mask.sum():
            mask = refined
            centre, direction = _fit_line(points[mask])
    else:
        centre, direction = points[i[best]], d[best] / max(norm[best], 1e-12)
    return centre, direction, mask


def fit_l_shape_ransac(contour, iterations: int = 200, inlier_tol: float = 0.15,
                       rng=None, point_cov=None) -> ShapePrimitive:
    """Dual-line RANSAC abstraction of a contour into an L-, I- or point shape.

    The first line is fitted to all points, the second to the first line's
    outliers. Lines are unconstrained in angle. With fewer than three inliers
    on the second line (or near-parallel lines) the result is an I-shape from
    the first line's inlier extent; with fewer than six points it is a point
    at the centroid. ``point_cov`` is attached to every extension point
    (default isotropic with sigma = inlier_tol / 3).
    """
    pts = np.asarray(contour, dtype=float).reshape(-1, 2)
    cov = np.eye(2) * (inlier_tol / 3.0) ** 2 if point_cov is None else np.asarray(point_cov, float)
    if len(pts) < 6:
        centre = pts.mean(axis=0) if len(pts) else np.zeros(2)
        return ShapePrimitive(ShapeKind.POINT, centre[None], cov[None])
    rng = np.random.default_rng(rng)
    c1, d1, in1 = _ransac_line(pts, iterations, inlier_tol, rng)
    rest = pts[~in1]
    second = None
    if len(rest) >= 3:
        c2, d2, in2 = _ransac_line(rest, iterations, inlier_tol, rng)
        if in2.sum() >= 3 and abs(_cross(d1[0], d1[1], d2[0], d2[1])) > math.sin(math.radians(15)):
            second = (c2, d2, rest[in2])
    if second is None:
        t = (pts[in1] - c1) @ d1
        a, b = order_endpoints(c1 + t.min() * d1, c1 + t.max() * d1)
        return ShapePrimitive(ShapeKind.I_SHAPE, np.stack([a, b]), np.stack([cov, cov]))
    c2, d2, pts2 = second
    # corner = c1 + s d1 = c2 + r d2
    s = _cross(c2[0] - c1[0], c2[1] - c1[1], d2[0], d2[1]) / _cross(d1[0], d1[1], d2[0], d2[1])
    corner = c1 + s * d1
    t1 = (pts[in1] - corner) @ d1
    t2 = (pts2 - corner) @ d2
    far1 = corner + t1[np.argmax(np.abs(t1))] * d1
    far2 = corner + t2[np.argmax(np.abs(t2))] * d2
    p1, p2, p3 = order_l_points(far1, corner, far2)
    return ShapePrimitive(ShapeKind.L_SHAPE, np.stack([p1, p2, p3]), np.stack([cov, cov, cov]))


def closest_farthest_corners(poly) -> tuple[np.ndarray, np.ndarray]:
    """Vertices nearest to and farthest from the ego origin (first index wins ties)."""
    p = np.asarray(poly, dtype=float)
    r = np.hypot(p[:, 0], p[:, 1])
    return p[int(np.argmin(r))].copy(), p[int(np.argmax(r))].copy()


def rigid_transform(poly, angle: float, shift=(0.0, 0.0)) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    return np.asarray(poly, dtype=float) @ rot.T + np.asarray(shift, dtype=float)
