"""Focal and Dice segmentation terms, loss aggregation, and drivable-confidence calibration."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .bev_core import SemanticGrid
from .report import LossReport, check_weights
from .uncertainty import DrivableScoreMap

_EPS_P = 1e-12


@dataclass(frozen=True)
class LossWeights:
    perc: float = 1.0
    focal: float = 1.0
    dice: float = 1.0
    det: float = 1.0
    cls: float = 1.0
    traj: float = 1.0
    rank: float = 1.0
    intent: float = 1.0
    center: float = 1.0

    def __post_init__(self):
        check_weights(**asdict(self))

    @classmethod
    def zeros(cls) -> "LossWeights":
        return cls(**{k: 0.0 for k in asdict(cls())})


def _target_prob(pbar, target: SemanticGrid):
    y = target.labels
    py = np.take_along_axis(np.asarray(pbar, dtype=float), y[..., None], axis=-1)[..., 0]
    return y, py


def focal_loss(pbar, target: SemanticGrid, gamma: float = 2.0, alpha: float = 0.25):
    """Mean over pixels of ``-alpha (1 - p_y)^gamma ln p_y``.

    Returns ``(loss, grad wrt pbar)``; only the target-class entries of the
    gradient are nonzero.
    """
    y, py = _target_prob(pbar, target)
    p = np.clip(py, _EPS_P, 1.0)
    one_m = 1.0 - p
    logp = np.log(p)
    per = -alpha * one_m ** gamma * logp
    n = py.size
    if gamma == 0:
        dp = -alpha / p
    else:
        dp = alpha * gamma * one_m ** (gamma - 1) * logp - alpha * one_m ** gamma / p
    grad = np.zeros_like(np.asarray(pbar, dtype=float))
    np.put_along_axis(grad, y[..., None], (dp / n)[..., None], axis=-1)
    return float(per.sum() / n), grad


def dice_loss(pbar, target: SemanticGrid, smooth: float = 1.0):
    """``1 - mean_c (2 sum p_c 1[y=c] + s) / (sum p_c + sum 1[y=c] + s)``.

    Returns ``(loss, grad wrt pbar)``.
    """
    pbar = np.asarray(pbar, dtype=float)
    k = pbar.shape[-1]
    onehot = np.eye(k)[target.labels]
    axes = tuple(range(pbar.ndim - 1))
    inter = (pbar * onehot).sum(axis=axes)
    num = 2.0 * inter + smooth
    den = pbar.sum(axis=axes) + onehot.sum(axis=axes) + smooth
    loss = 1.0 - float(np.mean(num / den))
    grad = -(2.0 * onehot * den - num) / (den ** 2) / k
    return loss, grad


def bev_loss(components: dict, w: LossWeights = LossWeights()) -> LossReport:
    """Weighted BEV objective.  The detection term is accepted but always zero."""
    comps = {
        "perc": float(components.get("perc", 0.0)),
        "focal": float(components.get("focal", 0.0)),
        "dice": float(components.get("dice", 0.0)),
        "det": 0.0,
    }
    return LossReport("bev", comps, {k: getattr(w, k) for k in comps})


def total_loss(bev: LossReport, lane: LossReport, planning: LossReport) -> LossReport:
    return LossReport("total", children=[bev, lane, planning])


# -- calibration -----------------------------------------------------------

@dataclass
class CalibrationReport:
    bins: list[dict] = field(default_factory=list)
    ece: float = 0.0
    source: str = "s_safe"

    @property
    def total(self) -> int:
        return sum(b["count"] for b in self.bins)

    def to_dict(self) -> dict:
        return {"source": self.source, "ece": self.ece, "num_pixels": self.total, "bins": self.bins}

    def write_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(["bin_lo", "bin_hi", "mean_conf", "accuracy", "count"])
            for b in self.bins:
                wr.writerow([f"{b['bin_lo']:.6f}", f"{b['bin_hi']:.6f}",
                             f"{b['mean_conf']:.6f}", f"{b['accuracy']:.6f}", b["count"]])


def calibration_from_scores(score, truth, num_bins: int = 10, source: str = "s_safe") -> CalibrationReport:
    """ECE of the binary drivable decision ``score >= 0.5`` with confidence
    ``max(score, 1 - score)``, using equal-width bins over [0, 1]."""
    if num_bins < 1:
        raise ValueError("num_bins must be >= 1")
    s = np.asarray(score, dtype=float).ravel()
    t = np.asarray(truth, dtype=bool).ravel()
    if s.shape != t.shape:
        raise ValueError(f"score and truth sizes differ: {s.size} vs {t.size}")
    conf = np.maximum(s, 1.0 - s)
    correct = ((s >= 0.5) == t).astype(float)
    idx = np.minimum((conf * num_bins).astype(np.int64), num_bins - 1)
    count = np.bincount(idx, minlength=num_bins)
    conf_sum = np.bincount(idx, weights=conf, minlength=num_bins)
    acc_sum = np.bincount(idx, weights=correct, minlength=num_bins)
    n = s.size
    bins, ece = [], 0.0
    for b in range(num_bins):
        c = int(count[b])
        mc = conf_sum[b] / c if c else 0.0
        ac = acc_sum[b] / c if c else 0.0
        ece += (c / n) * abs(ac - mc) if c else 0.0
        bins.append({"bin_lo": b / num_bins, "bin_hi": (b + 1) / num_bins,
                     "mean_conf": float(mc), "accuracy": float(ac), "count": c})
    return CalibrationReport(bins, float(min(max(ece, 0.0), 1.0)), source)


def expected_calibration_error(
    smap: DrivableScoreMap, truth, num_bins: int = 10, source: str = "s_safe"
) -> CalibrationReport:
    if source not in ("s_safe", "p_pos"):
        raise ValueError(f"unknown confidence source {source!r}")
    return calibration_from_scores(getattr(smap, source), truth, num_bins, source)
