"""Depth metrics, Gaussian NLL of ground truth, and outlier-removal curves.

Plain numpy; every reduction runs over the valid pixels in row-major
order, so results are deterministic.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from .depthdist import DepthDistribution
from .errors import ContractViolation

CAP = 80.0
SIGMA_FLOOR = 1e-3
PERCENTAGES = (0.0, 5.0, 10.0, 15.0, 20.0, 30.0)
METRIC_COLUMNS = ("abs_rel", "sq_rel", "rmse", "rmse_log", "d1", "d2", "d3")
HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


class EmptySelection(ContractViolation):
    """No pixel is left to evaluate."""


@dataclass(frozen=True)
class MetricReport:
    abs_rel: float
    sq_rel: float
    rmse: float
    rmse_log: float
    d1: float
    d2: float
    d3: float
    valid_count: int

    def row(self) -> list:
        return [getattr(self, c) for c in METRIC_COLUMNS]

    def to_dict(self) -> dict:
        return asdict(self)


def _valid(gt, valid_mask, cap, shape):
    gt = np.asarray(gt, float)
    if gt.shape != shape:
        raise ContractViolation(f"raster shapes differ: {shape} vs {gt.shape}")
    mask = (gt > 0) & (gt < cap) & np.isfinite(gt)
    if valid_mask is not None:
        valid_mask = np.asarray(valid_mask, bool)
        if valid_mask.shape != shape:
            raise ContractViolation("valid mask does not match the rasters")
        mask &= valid_mask
    return gt, mask


def median_scale(pred, gt, mask) -> float:
    """Factor ``median(gt) / median(pred)`` over ``mask``."""
    return float(np.median(np.asarray(gt)[mask]) / np.median(np.asarray(pred)[mask]))


def _metrics(pred, gt) -> MetricReport:
    diff = gt - pred
    ratio = np.maximum(gt / pred, pred / gt)
    return MetricReport(
        abs_rel=float(np.mean(np.abs(diff) / gt)),
        sq_rel=float(np.mean(diff**2 / gt)),
        rmse=float(np.sqrt(np.mean(diff**2))),
        rmse_log=float(np.sqrt(np.mean((np.log(gt) - np.log(pred)) ** 2))),
        d1=float(np.mean(ratio < 1.25)),
        d2=float(np.mean(ratio < 1.25**2)),
        d3=float(np.mean(ratio < 1.25**3)),
        valid_count=int(gt.size),
    )


def depth_metrics(pred, gt, valid_mask=None, cap: float = CAP, median_scaling: bool = False) -> MetricReport:
    """The seven standard metrics over pixels with ``0 < gt < cap``.

    Threshold accuracies use strict inequality, so a ratio of exactly 1.25
    counts as a miss.
    """
    pred = np.asarray(pred, float)
    gt, mask = _valid(gt, valid_mask, cap, pred.shape)
    if not mask.any():
        raise EmptySelection("no valid pixels to evaluate (check the mask and the depth cap)")
    p, g = pred[mask], gt[mask]
    if np.any(p <= 0):
        raise ContractViolation("predicted depth must be positive on evaluated pixels")
    if median_scaling:
        p = p * (np.median(g) / np.median(p))
    return _metrics(p, g)


def nll(d: DepthDistribution, gt, valid_mask=None, sigma_floor: float = SIGMA_FLOOR,
        cap: float = CAP) -> float:
    """Mean per-pixel Gaussian negative log-likelihood of ``gt``."""
    mean = np.asarray(d.mean, float)
    gt, mask = _valid(gt, valid_mask, cap, mean.shape)
    if not mask.any():
        raise EmptySelection("no valid pixels for the NLL")
    s = np.maximum(np.asarray(d.std, float)[mask], sigma_floor)
    r = gt[mask] - mean[mask]
    return float(np.mean(HALF_LOG_2PI + np.log(s) + r**2 / (2 * s**2)))


def uniform_opt_nll(mean, gt, valid_mask=None, sigma_floor: float = SIGMA_FLOOR,
                    cap: float = CAP) -> tuple[float, float]:
    """Best single ``sigma`` for the NLL and the NLL it attains: ``(sigma*, nll*)``.

    The minimizer of the mean NLL over a shared sigma is the RMS residual.
    """
    mean = np.asarray(mean, float)
    gt, mask = _valid(gt, valid_mask, cap, mean.shape)
    if not mask.any():
        raise EmptySelection("no valid pixels for the NLL")
    sigma = max(float(np.sqrt(np.mean((gt[mask] - mean[mask]) ** 2))), sigma_floor)
    d = DepthDistribution(mean, np.full(mean.shape, sigma))
    return sigma, nll(d, gt, mask, sigma_floor, cap)


@dataclass(frozen=True)
class RemovalCurve:
    percentages: tuple
    reports: tuple

    def __post_init__(self):
        p = np.asarray(self.percentages, float)
        if len(p) != len(self.reports):
            raise ContractViolation("one report per percentage is required")
        _check_percentages(p)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.reports])

    def to_rows(self) -> list:
        return [[p] + r.row() + [r.valid_count] for p, r in zip(self.percentages, self.reports)]


def _check_percentages(p):
    if p.ndim != 1 or p.size == 0 or np.any(np.diff(p) <= 0) or p[0] < 0 or p[-1] >= 100:
        raise ContractViolation("percentages must be strictly increasing within [0, 100)")


def removal_order(std, mask) -> np.ndarray:
    """Flat indices of valid pixels, largest sigma first, ties by index."""
    idx = np.flatnonzero(mask)
    s = np.asarray(std, float).ravel()[idx]
    return idx[np.lexsort((idx, -s))]


def outlier_removal_curve(d: DepthDistribution, gt, valid_mask=None, percentages=PERCENTAGES,
                          cap: float = CAP, median_scaling: bool = False) -> RemovalCurve:
    """Metrics after discarding the top ``p`` percent of valid pixels by sigma.

    ``floor(n * p / 100)`` pixels are removed for ``n`` valid pixels.
    """
    p = np.asarray(percentages, float)
    _check_percentages(p)
    mean = np.asarray(d.mean, float)
    gt, mask = _valid(gt, valid_mask, cap, mean.shape)
    if not mask.any():
        raise EmptySelection("no valid pixels to evaluate")
    order = removal_order(d.std, mask)
    n = order.size
    reports = []
    for pct in p:
        n_drop = int(math.floor(n * pct / 100.0))
        if n_drop >= n:
            raise EmptySelection(f"removing {pct}% leaves no pixels")
        keep = mask.copy().ravel()
        keep[order[:n_drop]] = False
        reports.append(depth_metrics(mean, gt, keep.reshape(mask.shape), cap, median_scaling))
    return RemovalCurve(tuple(float(x) for x in p), tuple(reports))


# ---------------------------------------------------------------------------
# output


def write_metrics_csv(path, reports: dict) -> None:
    """One row per named report, columns in the conventional order."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("name",) + METRIC_COLUMNS + ("valid_count",))
        for name, r in reports.items():
            writer.writerow([name] + [repr(x) for x in r.row()] + [r.valid_count])


def write_curve_csv(path, curve: RemovalCurve) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("percentage",) + METRIC_COLUMNS + ("valid_count",))
        writer.writerows(curve.to_rows())


def write_json(path, obj) -> None:
    def enc(o):
        if isinstance(o, (MetricReport, RemovalCurve)):
            return asdict(o)
        raise TypeError(type(o))

    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, default=enc)
