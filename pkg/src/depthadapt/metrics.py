"""Depth evaluation: threshold accuracies, RMSE, median scaling and test-set evaluation."""

from __future__ import annotations

import csv
import io
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from .core import DepthMap, clip_depth, images_to_tensor

DELTA_BASE = 1.25
METRIC_COLUMNS = ["arch", "resolution", "training_data", "median_scaling", "delta1", "delta2", "delta3", "rmse"]

# crop windows as fractions (top, bottom, left, right) of the image
CROPS = {
    "eigen": (0.3324324, 0.91351351, 0.0359477, 0.96405229),
    "garg": (0.40810811, 0.99189189, 0.03594771, 0.96405229),
}


class DegeneratePredictionError(ValueError):
    pass


@dataclass(frozen=True)
class EvalProtocol:
    max_depth: float | None = None
    median_scaling: bool = False
    min_depth_floor: float = 0.01
    per_image_average: bool = False
    crop: str | None = None

    def __post_init__(self):
        if not self.min_depth_floor > 0:
            raise ValueError("min_depth_floor must be positive")
        if self.crop is not None and self.crop not in CROPS:
            raise ValueError(f"unknown crop {self.crop!r}; expected one of {sorted(CROPS)}")


@dataclass
class MetricsReport:
    delta1: float
    delta2: float
    delta3: float
    rmse: float
    n_pixels: int
    protocol: EvalProtocol = field(default_factory=EvalProtocol)

    def row(self, **labels) -> dict:
        out = {k: labels.get(k, "") for k in METRIC_COLUMNS[:3]}
        out["median_scaling"] = int(self.protocol.median_scaling)
        out.update(delta1=self.delta1, delta2=self.delta2, delta3=self.delta3, rmse=self.rmse)
        return out


def _arrays(m):
    """(depth HxW float64, mask HxW) from a DepthMap or a bare array."""
    if isinstance(m, DepthMap):
        return m.depths[..., 0].astype(np.float64), m.valid_mask
    a = np.asarray(m, dtype=np.float64)
    if a.ndim == 3:
        a = a[..., 0]
    return a, np.isfinite(a)


def evaluated_pixels(pred, gt, min_depth_floor=0.01, crop=None):
    """Return 1-D float64 arrays of (pred, gt) over the evaluated pixel set.

    Evaluated pixels are those with a valid, positive ground truth (inside
    the crop window if one is given); both maps are floored at
    ``min_depth_floor``.
    """
    p, _ = _arrays(pred)
    g, mask = _arrays(gt)
    if p.shape != g.shape:
        raise ValueError(f"prediction {p.shape} and ground truth {g.shape} differ")
    sel = mask & (g > 0)
    if crop is not None:
        h, w = g.shape
        t, b, l, r = CROPS[crop]
        window = np.zeros_like(sel)
        window[int(t * h) : int(b * h), int(l * w) : int(r * w)] = True
        sel &= window
    if not sel.any():
        raise ValueError("no evaluated pixels")
    return np.maximum(p[sel], min_depth_floor), np.maximum(g[sel], min_depth_floor)


def _delta(p, g, i):
    ratio = np.maximum(p / g, g / p)
    return float(np.mean(ratio < DELTA_BASE**i))


def _rmse(p, g):
    return float(np.sqrt(np.mean((p - g) ** 2)))


def delta_accuracy(pred, gt, i: int, protocol: EvalProtocol | None = None) -> float:
    """Fraction of evaluated pixels with max(pred/gt, gt/pred) < 1.25**i."""
    if i not in (1, 2, 3):
        raise ValueError(f"threshold index must be 1, 2 or 3, got {i}")
    protocol = protocol or EvalProtocol()
    return _delta(*evaluated_pixels(pred, gt, protocol.min_depth_floor, protocol.crop), i)


def rmse(pred, gt, protocol: EvalProtocol | None = None) -> float:
    protocol = protocol or EvalProtocol()
    return _rmse(*evaluated_pixels(pred, gt, protocol.min_depth_floor, protocol.crop))


def lower_median(values: np.ndarray) -> float:
    v = np.sort(np.asarray(values).ravel())
    if v.size == 0:
        raise ValueError("median of an empty set")
    return v[(v.size - 1) // 2]


def median_scale(pred: DepthMap, gt: DepthMap, protocol: EvalProtocol | None = None) -> DepthMap:
    """Rescale ``pred`` by median(gt)/median(pred) over the evaluated pixels.

    Computed as ``(pred / median_pred) * median_gt`` so the median element maps
    exactly onto the ground-truth median. Already-aligned maps are returned
    unchanged.
    """
    protocol = protocol or EvalProtocol()
    p, mask = _arrays(pred)
    g, gmask = _arrays(gt)
    sel = gmask & (g > 0)
    if not sel.any():
        raise ValueError("no evaluated pixels")
    dtype = pred.depths.dtype if isinstance(pred, DepthMap) else np.float32
    med_p = lower_median(p[sel].astype(dtype))
    med_g = lower_median(g[sel].astype(dtype))
    if not med_p > 0:
        raise DegeneratePredictionError(f"prediction median is {med_p}; cannot median-scale")
    if med_p == med_g:
        return pred if isinstance(pred, DepthMap) else DepthMap(p.astype(dtype))
    scaled = ((p / np.float64(med_p)) * np.float64(med_g)).astype(dtype)
    return DepthMap(scaled[..., None], mask)


def _predictions(predictor, images: torch.Tensor, out_shape) -> torch.Tensor:
    in_res = getattr(getattr(predictor, "spec", None), "input_resolution", None)
    x = images
    if in_res is not None and tuple(x.shape[2:]) != tuple(in_res):
        x = F.interpolate(x, size=in_res, mode="bilinear", align_corners=False)
    with torch.no_grad():
        y = predictor(x)
    if tuple(y.shape[2:]) != tuple(out_shape):
        y = F.interpolate(y, size=out_shape, mode="bilinear", align_corners=False)
    return y


def evaluate(net, test_set, protocol: EvalProtocol | None = None, batch_size: int = 16) -> MetricsReport:
    """Evaluate a depth predictor on a paired test set.

    ``net`` is a DepthNetwork or any callable mapping N x 3 x H x W images to
    N x 1 x H x W depths. Pixels are pooled over the whole set unless
    ``protocol.per_image_average`` is set.
    """
    protocol = protocol or EvalProtocol()
    items = list(test_set.items if hasattr(test_set, "items") else test_set)
    if not items:
        raise ValueError("empty test set")
    if isinstance(net, torch.nn.Module):
        net.eval()
    preds, gts, per_image = [], [], []
    for start in range(0, len(items), batch_size):
        chunk = items[start : start + batch_size]
        shapes = {im.shape for im, _ in chunk}
        groups = [[it for it in chunk if it[0].shape == s] for s in sorted(shapes)]
        for group in groups:
            images = images_to_tensor([im for im, _ in group])
            out = _predictions(net, images, group[0][1].shape).numpy()
            for (image, gt_map), y in zip(group, out):
                try:
                    gt_c = DepthMap(clip_depth(gt_map.depths, protocol.max_depth), gt_map.valid_mask)
                    pred = DepthMap(y.transpose(1, 2, 0))
                    if protocol.median_scaling:
                        pred = median_scale(pred, gt_c, protocol)
                    pred = DepthMap(clip_depth(pred.depths, protocol.max_depth), pred.valid_mask)
                    p, g = evaluated_pixels(pred, gt_c, protocol.min_depth_floor, protocol.crop)
                except ValueError as exc:
                    raise ValueError(f"sample {image.source_id}: {exc}") from exc
                preds.append(p)
                gts.append(g)
                per_image.append([_delta(p, g, 1), _delta(p, g, 2), _delta(p, g, 3), _rmse(p, g)])
    n = int(sum(len(p) for p in preds))
    if protocol.per_image_average:
        d1, d2, d3, r = np.mean(per_image, axis=0)
        return MetricsReport(float(d1), float(d2), float(d3), float(r), n, protocol)
    p, g = np.concatenate(preds), np.concatenate(gts)
    return MetricsReport(_delta(p, g, 1), _delta(p, g, 2), _delta(p, g, 3), _rmse(p, g), n, protocol)


def report_csv(rows: list[dict], columns=None, header=True) -> str:
    columns = columns or list(rows[0])
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    if header:
        writer.writeheader()
    for row in rows:
        writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def protocol_dict(protocol: EvalProtocol) -> dict:
    return asdict(protocol)
