"""Perturbation magnitude measurement and campaign aggregation.

Pixel distances are plain infinity/Euclidean norms of the image
difference in [0,1] units.  Feature distances standardize each channel
of the embedding to zero mean and unit std first, so that pure style
(statistics) changes measure small while content changes measure large.
"""

from __future__ import annotations

import csv
import io
import statistics
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .autograd import GraphError, Tensor
from .styleops import VARIANCE_FLOOR

__all__ = [
    "DistanceReport",
    "pixel_distance",
    "standardize_embedding",
    "normalized_embedding",
    "feature_distance",
    "campaign_report",
    "render_csv",
]


@dataclass(frozen=True)
class DistanceReport:
    """Pixel/feature perturbation magnitudes for one adversarial sample."""

    pixel_linf: float
    pixel_l2: float
    feature_linf: float
    feature_l2: float

    def __post_init__(self):
        for name in ("pixel_linf", "pixel_l2", "feature_linf", "feature_l2"):
            if getattr(self, name) < 0:
                raise GraphError(f"{name} must be non-negative")


def _as_data(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def pixel_distance(x, x_adv) -> tuple[float, float]:
    """(l_inf, l_2) of the flattened pixel difference."""
    a, b = _as_data(x), _as_data(x_adv)
    if a.shape != b.shape:
        raise GraphError(f"image shapes differ: {a.shape} vs {b.shape}")
    d = (a - b).ravel()
    return float(np.abs(d).max(initial=0.0)), float(np.linalg.norm(d))


def standardize_embedding(b: np.ndarray) -> np.ndarray:
    """Zero-mean/unit-std each channel of a (N,C,H,W) embedding."""
    mu = b.mean(axis=(2, 3), keepdims=True)
    sigma = np.sqrt(b.var(axis=(2, 3), keepdims=True) + VARIANCE_FLOOR)
    return (b - mu) / sigma


def normalized_embedding(x, encoder: Callable[[Tensor], Tensor]) -> np.ndarray:
    """Encode ``x`` and standardize the embedding per channel."""
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))
    if x.data.ndim == 3:
        x = Tensor(x.data[None])
    emb = encoder(x)
    return standardize_embedding(emb.data)


def feature_distance(x, x_adv, encoder: Callable[[Tensor], Tensor]) -> tuple[float, float]:
    """(l_inf, l_2) between the standardized embeddings of two images."""
    ha = normalized_embedding(x, encoder)
    hb = normalized_embedding(x_adv, encoder)
    if ha.shape != hb.shape:
        raise GraphError(f"embedding shapes differ: {ha.shape} vs {hb.shape}")
    d = (ha - hb).ravel()
    return float(np.abs(d).max(initial=0.0)), float(np.linalg.norm(d))


def distance_report(x, x_adv, encoder) -> DistanceReport:
    pl, p2 = pixel_distance(x, x_adv)
    fl, f2 = feature_distance(x, x_adv, encoder)
    return DistanceReport(pixel_linf=pl, pixel_l2=p2, feature_linf=fl, feature_l2=f2)


def batched_distance_reports(x0: np.ndarray, x_adv: np.ndarray, encoder) -> list:
    """Distance reports for aligned image batches, with batched encoding."""
    if x0.shape != x_adv.shape:
        raise GraphError(f"batch shapes differ: {x0.shape} vs {x_adv.shape}")
    h0 = standardize_embedding(encoder(Tensor(x0)).data)
    ha = standardize_embedding(encoder(Tensor(x_adv)).data)
    reports = []
    for i in range(x0.shape[0]):
        dpix = (x0[i] - x_adv[i]).ravel()
        dfeat = (h0[i] - ha[i]).ravel()
        reports.append(
            DistanceReport(
                pixel_linf=float(np.abs(dpix).max(initial=0.0)),
                pixel_l2=float(np.linalg.norm(dpix)),
                feature_linf=float(np.abs(dfeat).max(initial=0.0)),
                feature_l2=float(np.linalg.norm(dfeat)),
            )
        )
    return reports


_COLUMNS = ("pixel_linf", "pixel_l2", "feature_linf", "feature_l2")


def campaign_report(outcomes: Sequence) -> dict:
    """Aggregate a list of attack outcomes into a summary table.

    Returns success rate, accuracy under attack, and mean/median of each
    distance column (pixel l_inf additionally scaled by 255 for
    comparability with 8-bit conventions).
    """
    if not outcomes:
        raise GraphError("campaign_report needs at least one outcome")
    table: dict = {
        "n": len(outcomes),
        "success_rate": sum(1 for o in outcomes if o.success) / len(outcomes),
    }
    table["accuracy_under_attack"] = 1.0 - table["success_rate"]
    for col in _COLUMNS:
        values = [getattr(o.distances, col) for o in outcomes]
        table[f"mean_{col}"] = statistics.fmean(values)
        table[f"median_{col}"] = statistics.median(values)
    table["mean_pixel_linf_x255"] = table["mean_pixel_linf"] * 255.0
    table["median_pixel_linf_x255"] = table["median_pixel_linf"] * 255.0
    return table


def render_csv(table: dict) -> str:
    """RFC-4180 one-row CSV rendering of a report table."""
    buf = io.StringIO()
    writer = csv.writer(buf, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
    keys = list(table.keys())
    writer.writerow(keys)
    writer.writerow([_format_cell(table[k]) for k in keys])
    return buf.getvalue()


def _format_cell(v) -> str:
    if isinstance(v, float):
        return f"{v:.10g}"
    return str(v)
