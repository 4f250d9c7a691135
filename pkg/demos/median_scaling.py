"""Why median scaling matters when absolute scale is ambiguous.

A prediction that gets the shape of a scene right but its size wrong by a
constant factor fails every delta threshold. Rescaling each prediction so
its median matches the ground-truth median removes that factor and leaves
the structural error behind.

    python demos/median_scaling.py
"""

import numpy as np

from depthadapt.core import DepthMap
from depthadapt.metrics import EvalProtocol, delta_accuracy, median_scale, rmse

rng = np.random.default_rng(0)
gt = DepthMap(rng.uniform(1.0, 8.0, (48, 64)).astype(np.float32))

structure = rng.normal(0.0, 0.05, gt.depths.shape).astype(np.float32)
pred = DepthMap((gt.depths * 1.4 * np.exp(structure)).astype(np.float32))

protocol = EvalProtocol(max_depth=10.0)
print(f"raw prediction:    delta1 {delta_accuracy(pred, gt, 1, protocol):.3f}  rmse {rmse(pred, gt, protocol):.3f}")
scaled = median_scale(pred, gt, protocol)
print(f"median-scaled:     delta1 {delta_accuracy(scaled, gt, 1, protocol):.3f}  rmse {rmse(scaled, gt, protocol):.3f}")
# scaling twice changes nothing
again = median_scale(scaled, gt, protocol)
print("idempotent:", np.array_equal(again.depths, scaled.depths))
