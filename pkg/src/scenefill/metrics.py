"""Cloud-to-cloud evaluation: Chamfer distance, completeness/accuracy at
radius thresholds, and labeled voxel IoU at several resolutions.

Nearest neighbors use a KD-tree; O(N^2) reference implementations are kept
alongside for test oracles. Distances are meters, Chamfer uses squared
distances summed over both directions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .core import NUM_CLASSES, voxelize_points


def chamfer_distance(pred, gt):
    """Mean squared nearest-neighbor distance, both directions, summed."""
    if len(pred) == 0 or len(gt) == 0:
        raise ValueError("chamfer distance needs two non-empty clouds")
    d_pg, _ = cKDTree(gt.positions).query(pred.positions)
    d_gp, _ = cKDTree(pred.positions).query(gt.positions)
    return float((d_pg ** 2).mean() + (d_gp ** 2).mean())


def chamfer_distance_bruteforce(pred, gt):
    """Quadratic reference for chamfer_distance."""
    diff = pred.positions[:, None, :] - gt.positions[None, :, :]
    d2 = (diff ** 2).sum(axis=2)
    return float(d2.min(axis=1).mean() + d2.min(axis=0).mean())


def completeness(pred, gt, radius):
    """Fraction of reference points with a predicted point strictly closer
    than ``radius``."""
    if len(gt) == 0:
        raise ValueError("empty reference cloud")
    if len(pred) == 0:
        return 0.0
    d, _ = cKDTree(pred.positions).query(gt.positions)
    return float((d < radius).mean())


def accuracy(pred, gt, radius):
    """Fraction of predicted points with a reference point strictly closer
    than ``radius``."""
    if len(pred) == 0:
        raise ValueError("empty predicted cloud")
    if len(gt) == 0:
        return 0.0
    d, _ = cKDTree(gt.positions).query(pred.positions)
    return float((d < radius).mean())


def completeness_bruteforce(pred, gt, radius):
    diff = gt.positions[:, None, :] - pred.positions[None, :, :]
    d = np.sqrt((diff ** 2).sum(axis=2)).min(axis=1)
    return float((d < radius).mean())


def accuracy_bruteforce(pred, gt, radius):
    diff = pred.positions[:, None, :] - gt.positions[None, :, :]
    d = np.sqrt((diff ** 2).sum(axis=2)).min(axis=1)
    return float((d < radius).mean())


def voxel_iou(pred, gt, edge, box_min, box_size):
    """Labeled voxel IoU over a grid spanning the given box.

    Returns (completion_iou, per_class, class_average):
      * completion_iou treats occupancy as binary.
      * per_class[c] = TP / (TP + FP + FN) where a true positive is a cell
        occupied in both grids with label c on both sides.
      * class_average averages the classes occupied in either cloud.
    """
    box_min = np.asarray(box_min, dtype=np.float64)
    ext = np.asarray(box_size, dtype=np.float64)
    dims = tuple(int(np.ceil(e / edge - 1e-9)) for e in ext)
    gp = voxelize_points(pred, edge, box_min, dims)
    gg = voxelize_points(gt, edge, box_min, dims)
    ids_p, lab_p = gp.flat_ids, gp.labels
    ids_g, lab_g = gg.flat_ids, gg.labels
    inter = np.intersect1d(ids_p, ids_g, assume_unique=True)
    union = ids_p.size + ids_g.size - inter.size
    completion = inter.size / union if union else 1.0
    kp = np.searchsorted(ids_p, inter)
    kg = np.searchsorted(ids_g, inter)
    same = lab_p[kp] == lab_g[kg]
    per_class = {}
    for c in range(1, NUM_CLASSES + 1):
        in_p = lab_p == c
        in_g = lab_g == c
        if not in_p.any() and not in_g.any():
            continue
        tp = int((same & (lab_g[kg] == c)).sum()) if inter.size else 0
        fp = int(in_p.sum()) - tp
        fn = int(in_g.sum()) - tp
        per_class[c] = tp / (tp + fp + fn) if tp + fp + fn else 0.0
    avg = float(np.mean(list(per_class.values()))) if per_class else 0.0
    return completion, per_class, avg


@dataclass
class MetricsReport:
    chamfer: float
    completeness: dict = field(default_factory=dict)  # radius -> fraction
    accuracy: dict = field(default_factory=dict)
    voxel: dict = field(default_factory=dict)  # edge -> (completion, per_class, avg)

    def to_text(self):
        lines = [f"chamfer_m2 = {self.chamfer:.9g}"]
        for r in sorted(self.completeness):
            lines.append(f"completeness_{r:g} = {self.completeness[r]:.6f}")
        for r in sorted(self.accuracy):
            lines.append(f"accuracy_{r:g} = {self.accuracy[r]:.6f}")
        for e in sorted(self.voxel, reverse=True):
            comp, per_class, avg = self.voxel[e]
            lines.append(f"voxel_iou_completion_{e:g} = {comp:.6f}")
            lines.append(f"voxel_iou_classavg_{e:g} = {avg:.6f}")
        return "\n".join(lines) + "\n"

    def to_json(self):
        return json.dumps({
            "chamfer_m2": self.chamfer,
            "completeness": {str(k): v for k, v in self.completeness.items()},
            "accuracy": {str(k): v for k, v in self.accuracy.items()},
            "voxel_iou": {
                str(e): {"completion": c, "class_avg": a,
                         "per_class": {str(k): v for k, v in pc.items()}}
                for e, (c, pc, a) in self.voxel.items()
            },
        }, indent=2)


def evaluate(pred, gt, radii=(0.02, 0.04, 0.06, 0.08, 0.10),
             edges=(0.08, 0.06, 0.04, 0.02, 0.01),
             box_min=(-2.4, -1.22, -2.4), box_size=(4.8, 2.44, 4.8)):
    """Full report for a completed cloud against its reference."""
    report = MetricsReport(chamfer=chamfer_distance(pred, gt))
    for r in radii:
        report.completeness[r] = completeness(pred, gt, r)
        report.accuracy[r] = accuracy(pred, gt, r)
    for e in edges:
        report.voxel[e] = voxel_iou(pred, gt, e, box_min, box_size)
    return report
