import math

import numpy as np
import pytest

from leofusion.geometry import ParallelogramState, state_to_polygon


def random_state(rng, spread=3.0) -> ParallelogramState:
    return ParallelogramState(
        rf_x=rng.uniform(-spread, spread),
        rf_y=rng.uniform(-spread, spread),
        l=rng.uniform(0.5, 5.0),
        w=rng.uniform(0.5, 3.0),
        theta=rng.uniform(-math.pi, math.pi),
        theta_star=rng.uniform(0.35, math.pi - 0.35),
        v_x=rng.normal(0, 5),
        v_y=rng.normal(0, 1),
    )


def random_polygon(rng, spread=3.0) -> np.ndarray:
    return state_to_polygon(random_state(rng, spread))


def mc_overlap_oracle(a, b, n=1_000_000, seed=0):
    """Monte-Carlo (iou, giou, diou) estimate independent of the clipping code.

    Membership comes from matplotlib's path test, the hull area from qhull,
    centroids from the sample means.
    """
    from matplotlib.path import Path
    from scipy.spatial import ConvexHull

    allv = np.vstack([a, b])
    lo, hi = allv.min(axis=0), allv.max(axis=0)
    box = float(np.prod(hi - lo))
    pts = np.random.default_rng(seed).uniform(lo, hi, size=(n, 2))
    in_a = Path(a).contains_points(pts)
    in_b = Path(b).contains_points(pts)
    inter = box * np.count_nonzero(in_a & in_b) / n
    union = box * np.count_nonzero(in_a | in_b) / n
    iou = inter / union
    hull = ConvexHull(allv).volume
    giou = iou - (hull - union) / hull
    d2 = float(np.sum((pts[in_a].mean(axis=0) - pts[in_b].mean(axis=0)) ** 2))
    c2 = float(np.sum((hi - lo) ** 2))
    return iou, giou, iou - d2 / c2, inter


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
