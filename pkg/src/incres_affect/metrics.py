"""Valence/arousal evaluation metrics: RMSE, Pearson CC, CCC, SAGR.

Variances are population variances (divide by n) everywhere.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import LengthMismatch, ZeroDenominator, ZeroVariance

DIMENSIONS = ("valence", "arousal")
METRICS = ("rmse", "cc", "ccc", "sagr")


def _pair(pred, truth, min_len=1):
    pred = np.asarray(pred, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if pred.shape != truth.shape:
        raise LengthMismatch(f"prediction has {pred.size} values, ground truth {truth.size}")
    if pred.size < min_len:
        raise LengthMismatch(f"need at least {min_len} values, got {pred.size}")
    return pred, truth


def rmse(pred, truth) -> float:
    pred, truth = _pair(pred, truth)
    d = pred - truth
    return float(np.sqrt(np.mean(d * d)))


def _moments(pred, truth):
    mp, mt = pred.mean(), truth.mean()
    dp, dt = pred - mp, truth - mt
    return mp, mt, np.mean(dp * dp), np.mean(dt * dt), np.mean(dp * dt)


def cc(pred, truth) -> float:
    """Pearson correlation. Raises ZeroVariance for a constant series."""
    pred, truth = _pair(pred, truth, min_len=2)
    _, _, vp, vt, cov = _moments(pred, truth)
    if vp == 0.0 or vt == 0.0:
        which = "prediction" if vp == 0.0 else "ground truth"
        raise ZeroVariance(f"{which} series is constant; correlation is undefined")
    return float(np.clip(cov / np.sqrt(vp * vt), -1.0, 1.0))


def ccc(pred, truth) -> float:
    """Concordance correlation: 2 cov / (var_p + var_t + (mean_p - mean_t)^2).

    Equal to 2 rho sd_p sd_t / (...) since cov = rho sd_p sd_t.
    """
    pred, truth = _pair(pred, truth, min_len=2)
    mp, mt, vp, vt, cov = _moments(pred, truth)
    denom = vp + vt + (mp - mt) ** 2
    if denom == 0.0:
        raise ZeroDenominator("both series are constant with equal means; CCC is undefined")
    return float(2.0 * cov / denom)


def sagr(pred, truth) -> float:
    """Fraction of samples whose signs (-1, 0, +1) agree."""
    pred, truth = _pair(pred, truth)
    return float(np.mean(np.sign(pred) == np.sign(truth)))


def histogram2d(valence, arousal, bins: int = 20) -> np.ndarray:
    """Counts on a uniform bins x bins grid over [-1, 1]^2.

    Rows index valence, columns arousal. Bins are half-open except the last,
    which includes +1. Values outside [-1, 1] are clamped first.
    """
    v, a = _pair(valence, arousal, min_len=0)
    if bins < 1:
        raise ValueError("bins must be at least 1")
    counts = np.zeros((bins, bins), dtype=np.int64)
    iv = _bin_index(v, bins)
    ia = _bin_index(a, bins)
    np.add.at(counts, (iv, ia), 1)
    return counts


def _bin_index(x, bins):
    x = np.clip(x, -1.0, 1.0)
    idx = np.floor((x + 1.0) * 0.5 * bins).astype(np.int64)
    return np.minimum(idx, bins - 1)


def _safe(fn, pred, truth):
    try:
        return fn(pred, truth)
    except (ZeroVariance, ZeroDenominator, LengthMismatch):
        return None


@dataclass
class EvalReport:
    """Headline metrics over all frames plus a per-video breakdown.

    ``metrics[dim][name]`` is None when the metric is undefined for the data
    (a constant series); ``undefined`` counts per-video entries dropped from
    the per-video means for that reason.
    """

    n: int
    metrics: dict
    histogram: np.ndarray
    per_video: dict = field(default_factory=dict)
    per_video_mean: dict = field(default_factory=dict)
    undefined: dict = field(default_factory=dict)

    def headline(self) -> dict[str, float | None]:
        return {f"{dim}_{m}": self.metrics[dim][m] for dim in DIMENSIONS for m in METRICS}

    def mean_rmse(self) -> float:
        return 0.5 * (self.metrics["valence"]["rmse"] + self.metrics["arousal"]["rmse"])

    def to_text(self) -> str:
        lines = [f"frames: {self.n}"]
        for key, value in self.headline().items():
            lines.append(f"{key}: {_fmt(value)}")
        for key, value in self.per_video_mean.items():
            lines.append(f"per_video_mean.{key}: {_fmt(value)}")
        for key, value in self.undefined.items():
            lines.append(f"per_video_undefined.{key}: {value}")
        for vid, vals in self.per_video.items():
            for key, value in vals.items():
                lines.append(f"video.{vid}.{key}: {_fmt(value)}")
        return "\n".join(lines) + "\n"


def _fmt(value):
    return "undefined" if value is None else repr(float(value))


def parse_report(text: str) -> dict[str, float | None]:
    out = {}
    for line in text.splitlines():
        if ":" not in line:
            continue
        key, raw = (s.strip() for s in line.rsplit(":", 1))
        out[key] = None if raw == "undefined" else float(raw)
    return out


def _all_metrics(pred, truth) -> dict:
    return {"rmse": rmse(pred, truth), "cc": _safe(cc, pred, truth),
            "ccc": _safe(ccc, pred, truth), "sagr": sagr(pred, truth)}


def evaluate(pred, truth, video_ids=None, bins: int = 20, clamp: bool = True) -> EvalReport:
    """Score (n, 2) predictions against (n, 2) labels.

    Headline numbers use all frames pooled into one series per dimension.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape or pred.ndim != 2 or pred.shape[1] != 2:
        raise LengthMismatch(f"expected matching n x 2 arrays, got {pred.shape} and {truth.shape}")
    if clamp:
        pred = np.clip(pred, -1.0, 1.0)
    metrics = {dim: _all_metrics(pred[:, k], truth[:, k]) for k, dim in enumerate(DIMENSIONS)}
    report = EvalReport(len(pred), metrics, histogram2d(pred[:, 0], pred[:, 1], bins))
    if video_ids is not None:
        video_ids = np.asarray(video_ids)
        sums: dict[str, list] = {}
        for vid in dict.fromkeys(video_ids.tolist()):
            rows = video_ids == vid
            entry = {}
            for k, dim in enumerate(DIMENSIONS):
                for name, value in _all_metrics(pred[rows, k], truth[rows, k]).items():
                    entry[f"{dim}_{name}"] = value
                    sums.setdefault(f"{dim}_{name}", []).append(value)
            report.per_video[str(vid)] = entry
        for key, values in sums.items():
            defined = [v for v in values if v is not None]
            report.per_video_mean[key] = float(np.mean(defined)) if defined else None
            report.undefined[key] = len(values) - len(defined)
    return report
