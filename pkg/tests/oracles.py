"""Independent brute-force references used by several test modules."""

import math

import numpy as np


def loop_metrics(preds, gts, masks, floor=0.01, max_depth=None):
    """delta1..3 and RMSE by an explicit per-pixel loop over pooled pixels."""
    hits = [0, 0, 0]
    sq = 0.0
    n = 0
    for p, g, m in zip(preds, gts, masks):
        h, w = g.shape
        for i in range(h):
            for j in range(w):
                if not m[i, j] or not g[i, j] > 0:
                    continue
                gv = float(g[i, j])
                pv = float(p[i, j])
                if max_depth is not None:
                    gv = min(gv, max_depth)
                    pv = min(pv, max_depth)
                gv = max(gv, floor)
                pv = max(pv, floor)
                ratio = max(pv / gv, gv / pv)
                for k in range(3):
                    if ratio < 1.25 ** (k + 1):
                        hits[k] += 1
                sq += (pv - gv) ** 2
                n += 1
    return hits[0] / n, hits[1] / n, hits[2] / n, math.sqrt(sq / n)


def riemann_energy_wh(timestamps, watts, t0, t1, steps=2_000_000):
    """Midpoint Riemann sum of the piecewise-linear power curve."""
    edges = np.linspace(t0, t1, steps + 1)
    mids = (edges[:-1] + edges[1:]) / 2
    return float(np.sum(np.interp(mids, timestamps, watts)) * (t1 - t0) / steps / 3600.0)
