"""Segmentation and saliency metrics.

Region similarity J and boundary accuracy F score binarized masks; MAE,
max-F, E-measure and S-measure score the raw probability map. Degenerate
cases follow the usual benchmark conventions: two empty masks agree
perfectly (score 1), an empty mask against a non-empty one scores 0.

All computation is double precision numpy; nothing here touches the autodiff
engine.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError

_EPS = np.finfo(np.float64).eps


def _as_binary(mask: np.ndarray, name: str) -> np.ndarray:
    m = np.asarray(mask)
    if not np.all((m == 0) | (m == 1)):
        raise ContractError(f"{name} must be strictly binary")
    return m.astype(bool)


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> None:
    if pred.shape != gt.shape:
        raise ContractError(f"prediction {pred.shape} vs ground truth {gt.shape}")


def region_similarity(pred_bin: np.ndarray, gt: np.ndarray) -> float:
    """Intersection over union of two binary masks."""
    _check_pair(pred_bin, gt)
    p = _as_binary(pred_bin, "pred")
    g = _as_binary(gt, "gt")
    union = np.logical_or(p, g).sum()
    if union == 0:
        return 1.0
    return float(np.logical_and(p, g).sum() / union)


def mae(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean absolute per-pixel error of a probability map against a mask."""
    _check_pair(pred, gt)
    return float(np.abs(np.asarray(pred, dtype=np.float64) -
                        np.asarray(gt, dtype=np.float64)).mean())


# ---------------------------------------------------------------------------
# Boundary F
# ---------------------------------------------------------------------------

def _boundary_map(mask: np.ndarray) -> np.ndarray:
    """Foreground pixels with a background 4-neighbor (borders count as
    background)."""
    m = mask.astype(bool)
    padded = np.zeros((m.shape[0] + 2, m.shape[1] + 2), dtype=bool)
    padded[1:-1, 1:-1] = m
    eroded = (padded[1:-1, 1:-1] & padded[:-2, 1:-1] & padded[2:, 1:-1]
              & padded[1:-1, :-2] & padded[1:-1, 2:])
    return m & ~eroded


def _disk_offsets(radius: int) -> list[tuple[int, int]]:
    offs = []
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            if dy * dy + dx * dx <= radius * radius:
                offs.append((dy, dx))
    return offs


def _dilate(mask: np.ndarray, radius: int) -> np.ndarray:
    out = np.zeros_like(mask, dtype=bool)
    h, w = mask.shape
    for dy, dx in _disk_offsets(radius):
        ys = slice(max(0, dy), min(h, h + dy))
        yd = slice(max(0, -dy), min(h, h - dy))
        xs = slice(max(0, dx), min(w, w + dx))
        xd = slice(max(0, -dx), min(w, w - dx))
        out[yd, xd] |= mask[ys, xs]
    return out


def default_boundary_tolerance(h: int, w: int) -> int:
    return int(np.ceil(0.008 * np.sqrt(h * h + w * w)))


def boundary_f_measure(pred_bin: np.ndarray, gt: np.ndarray,
                       tol_radius: int | None = None) -> float:
    """F1 of dilation-tolerant matching between the two boundary maps."""
    _check_pair(pred_bin, gt)
    p = _as_binary(pred_bin, "pred")
    g = _as_binary(gt, "gt")
    if tol_radius is None:
        tol_radius = default_boundary_tolerance(*p.shape)
    pb = _boundary_map(p)
    gb = _boundary_map(g)
    np_, ng = pb.sum(), gb.sum()
    if np_ == 0 and ng == 0:
        return 1.0
    if np_ == 0 or ng == 0:
        return 0.0
    precision = (pb & _dilate(gb, tol_radius)).sum() / np_
    recall = (gb & _dilate(pb, tol_radius)).sum() / ng
    if precision + recall == 0:
        return 0.0
    return float(2 * precision * recall / (precision + recall))


# ---------------------------------------------------------------------------
# Thresholded F sweep
# ---------------------------------------------------------------------------

def _check_probs(pred: np.ndarray) -> np.ndarray:
    p = np.asarray(pred, dtype=np.float64)
    if p.min() < 0 or p.max() > 1:
        raise ContractError(f"prediction values outside [0,1]: [{p.min()}, {p.max()}]")
    return p


def max_f_measure(pred: np.ndarray, gt: np.ndarray, beta_sq: float = 0.3,
                  thresholds: int = 256) -> float:
    """Best F_beta over uniform binarization thresholds in [0,1)."""
    _check_pair(pred, gt)
    p = _check_probs(pred)
    g = _as_binary(gt, "gt")
    n_gt = g.sum()
    best = 0.0
    for i in range(thresholds):
        t = i / thresholds
        pb = p > t
        n_pred = pb.sum()
        if n_pred == 0 or n_gt == 0:
            continue
        tp = (pb & g).sum()
        prec = tp / n_pred
        rec = tp / n_gt
        denom = beta_sq * prec + rec
        if denom > 0:
            best = max(best, (1 + beta_sq) * prec * rec / denom)
    return float(best)


def e_measure(pred: np.ndarray, gt: np.ndarray, thresholds: int = 256) -> float:
    """Best enhanced-alignment score over binarization thresholds.

    Per threshold the binarized prediction and the mask are bias-centered;
    the alignment 2ab/(a^2+b^2) is enhanced by ((1+phi)^2)/4 and averaged.
    Uniform ground truth falls back to direct agreement with the prediction.
    """
    _check_pair(pred, gt)
    p = _check_probs(pred)
    g = _as_binary(gt, "gt").astype(np.float64)
    n = g.size
    g_sum = g.sum()
    best = 0.0
    for i in range(thresholds):
        t = i / thresholds
        pb = (p > t).astype(np.float64)
        if g_sum == 0:
            enhanced = 1.0 - pb
        elif g_sum == n:
            enhanced = pb
        else:
            a = pb - pb.mean()
            b = g - g.mean()
            align = 2.0 * a * b / (a * a + b * b + _EPS)
            enhanced = (1.0 + align) ** 2 / 4.0
        best = max(best, float(enhanced.mean()))
    return best


# ---------------------------------------------------------------------------
# Structure measure
# ---------------------------------------------------------------------------

def _object_score(vals: np.ndarray) -> float:
    if vals.size == 0:
        return 0.0
    x = vals.mean()
    sigma = vals.std(ddof=1) if vals.size > 1 else 0.0
    return float(2.0 * x / (x * x + 1.0 + sigma + _EPS))


def _s_object(pred: np.ndarray, gt: np.ndarray) -> float:
    fg = _object_score(pred[gt])
    bg = _object_score((1.0 - pred)[~gt])
    u = gt.mean()
    return float(u * fg + (1.0 - u) * bg)


def _centroid(gt: np.ndarray) -> tuple[int, int]:
    h, w = gt.shape
    total = gt.sum()
    if total == 0:
        return h // 2, w // 2
    rows = np.arange(h)
    cols = np.arange(w)
    cy = int(round(float((gt.sum(axis=1) * rows).sum() / total)))
    cx = int(round(float((gt.sum(axis=0) * cols).sum() / total)))
    return cy, cx


def _ssim_like(x: np.ndarray, y: np.ndarray) -> float:
    n = x.size
    if n == 0:
        return 1.0
    mx, my = x.mean(), y.mean()
    if n > 1:
        vx = ((x - mx) ** 2).sum() / (n - 1)
        vy = ((y - my) ** 2).sum() / (n - 1)
        vxy = ((x - mx) * (y - my)).sum() / (n - 1)
    else:
        vx = vy = vxy = 0.0
    alpha = 4.0 * mx * my * vxy
    beta = (mx * mx + my * my) * (vx + vy)
    if alpha != 0:
        return float(alpha / (beta + _EPS))
    if beta == 0:
        return 1.0
    return 0.0


def _s_region(pred: np.ndarray, gt: np.ndarray) -> float:
    cy, cx = _centroid(gt)
    h, w = gt.shape
    cy = min(max(cy, 0), h - 1) + 1  # split below/right of the centroid cell
    cx = min(max(cx, 0), w - 1) + 1
    quads = (
        (slice(0, cy), slice(0, cx)),
        (slice(0, cy), slice(cx, w)),
        (slice(cy, h), slice(0, cx)),
        (slice(cy, h), slice(cx, w)),
    )
    score = 0.0
    for ys, xs in quads:
        weight = gt[ys, xs].size / gt.size
        score += weight * _ssim_like(pred[ys, xs], gt[ys, xs].astype(np.float64))
    return score


def s_measure(pred: np.ndarray, gt: np.ndarray, alpha: float = 0.5) -> float:
    """alpha-weighted object similarity plus 4-quadrant regional similarity."""
    _check_pair(pred, gt)
    p = _check_probs(pred)
    g = _as_binary(gt, "gt")
    y = g.mean()
    if y == 0:
        return float(1.0 - p.mean())
    if y == 1:
        return float(p.mean())
    s = alpha * _s_object(p, g) + (1.0 - alpha) * _s_region(p, g)
    return float(min(max(s, 0.0), 1.0))


# ---------------------------------------------------------------------------
# Sequence evaluation
# ---------------------------------------------------------------------------

@dataclass
class MetricReport:
    j_mean: float
    f_mean: float
    jf_mean: float
    mae: float
    f_max: float
    e_max: float
    s_measure: float
    per_sequence: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "j_mean": self.j_mean, "f_mean": self.f_mean, "jf_mean": self.jf_mean,
            "mae": self.mae, "f_max": self.f_max, "e_max": self.e_max,
            "s_measure": self.s_measure, "per_sequence": self.per_sequence,
        }

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.as_dict(), indent=2))

    def write_csv(self, path) -> None:
        fields = ["sequence", "j_mean", "f_mean", "jf_mean", "mae", "f_max",
                  "e_max", "s_measure"]
        with open(path, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=fields)
            wr.writeheader()
            for seq, row in self.per_sequence.items():
                wr.writerow({"sequence": seq, **row})
            wr.writerow({"sequence": "__overall__", "j_mean": self.j_mean,
                         "f_mean": self.f_mean, "jf_mean": self.jf_mean,
                         "mae": self.mae, "f_max": self.f_max,
                         "e_max": self.e_max, "s_measure": self.s_measure})


def frame_metrics(pred: np.ndarray, gt: np.ndarray,
                  binarize_threshold: float = 0.5,
                  tol_radius: int | None = None) -> dict:
    p = _check_probs(pred)
    g = _as_binary(gt, "gt")
    pb = (p > binarize_threshold).astype(np.uint8)
    return {
        "j": region_similarity(pb, g.astype(np.uint8)),
        "f": boundary_f_measure(pb, g.astype(np.uint8), tol_radius),
        "mae": mae(p, g),
        "f_max": max_f_measure(p, g),
        "e_max": e_measure(p, g),
        "s": s_measure(p, g),
    }


def evaluate_sequence(pred_maps: list, gt_masks: list,
                      binarize_threshold: float = 0.5,
                      tol_radius: int | None = None) -> MetricReport:
    """Average per-frame metrics over one aligned frame list."""
    if len(pred_maps) != len(gt_masks):
        raise ContractError(f"{len(pred_maps)} predictions vs {len(gt_masks)} masks")
    if not pred_maps:
        raise ContractError("empty sequence")
    rows = [frame_metrics(p, g, binarize_threshold, tol_radius)
            for p, g in zip(pred_maps, gt_masks)]
    j = float(np.mean([r["j"] for r in rows]))
    f = float(np.mean([r["f"] for r in rows]))
    return MetricReport(
        j_mean=j, f_mean=f, jf_mean=(j + f) / 2.0,
        mae=float(np.mean([r["mae"] for r in rows])),
        f_max=float(np.mean([r["f_max"] for r in rows])),
        e_max=float(np.mean([r["e_max"] for r in rows])),
        s_measure=float(np.mean([r["s"] for r in rows])),
    )


def aggregate_reports(reports: dict) -> MetricReport:
    """Mean over per-sequence reports, keeping the per-sequence breakdown."""
    if not reports:
        raise ContractError("no sequences to aggregate")
    per_seq = {}
    for name, rep in reports.items():
        per_seq[name] = {k: getattr(rep, k) for k in
                         ("j_mean", "f_mean", "jf_mean", "mae", "f_max",
                          "e_max", "s_measure")}
    j = float(np.mean([r.j_mean for r in reports.values()]))
    f = float(np.mean([r.f_mean for r in reports.values()]))
    return MetricReport(
        j_mean=j, f_mean=f, jf_mean=(j + f) / 2.0,
        mae=float(np.mean([r.mae for r in reports.values()])),
        f_max=float(np.mean([r.f_max for r in reports.values()])),
        e_max=float(np.mean([r.e_max for r in reports.values()])),
        s_measure=float(np.mean([r.s_measure for r in reports.values()])),
        per_sequence=per_seq,
    )
