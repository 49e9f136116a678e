"""Parallelogram states, overlap metrics and the training loss.

Run: python3 demos/01_geometry_and_losses.py
"""
import math

import numpy as np

from leofusion import geometry as geo
from leofusion import training as tr
from leofusion.autodiff import Tape, Tensor

# A 4.5 m x 1.8 m car 20 m ahead. RF is the rear vertex the state is anchored on.
car = geo.ParallelogramState(rf_x=17.75, rf_y=-0.9, l=4.5, w=1.8, theta=0.0, theta_star=math.pi / 2,
                             v_x=22.0, v_y=0.0)
print("car polygon (CCW):\n", geo.state_to_polygon(car).round(3))

# A trailer is not a rectangle: theta* != 90 deg skews the shape.
skewed = geo.ParallelogramState(17.75, -0.9, 4.5, 1.8, 0.05, math.radians(80), 22.0, 0.0)
iou, giou, diou = geo.overlap_metrics(geo.state_to_polygon(skewed), geo.state_to_polygon(car))
print(f"skewed vs car: IoU {iou:.3f}  GIoU {giou:.3f}  DIoU {diou:.3f}")

# Disjoint boxes still get a useful signal from GIoU/DIoU.
far = geo.ParallelogramState(25.0, 2.0, 4.5, 1.8, 0.0, math.pi / 2, 22.0, 0.0)
print("disjoint: IoU %.3f  GIoU %.3f  DIoU %.3f" % geo.overlap_metrics(geo.state_to_polygon(far),
                                                                        geo.state_to_polygon(car)))

# The composite loss is differentiable through the polygon clipping.
pred = skewed.as_array() + np.array([0.3, -0.1, 0.4, 0.0, 0.0, 0.0, 0.5, 0.0])
with Tape() as tape:
    p = Tensor(pred, requires_grad=True)
    loss = tr.total_loss(p, car.as_array())
grad = tape.backward(loss)[p]
print(f"L_total = {float(loss.value):.4f}")
for name, g in zip(("rf_x", "rf_y", "l", "w", "theta", "theta*", "v_x", "v_y"), grad):
    print(f"  dL/d{name:7s} {g:+.4f}")

# Wrapped angles: pi-0.1 and -pi+0.1 are 0.2 rad apart, not 2*pi-0.2.
a, b = np.zeros(8), np.zeros(8)
a[4], b[4] = math.pi - 0.1, -math.pi + 0.1
print("wrapped theta loss:", float(tr.param_loss(a, b).value))
