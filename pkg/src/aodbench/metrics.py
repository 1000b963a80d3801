"""Verification statistics: RMSE/MAE/MBE, normal/extreme breakdowns, per-site stats, rankings."""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .collocation import CollocatedPair
from .stations import EXTREME_THRESHOLD, Site


@dataclass(frozen=True)
class ErrorStats:
    rmse: float | None
    mae: float | None
    mbe: float | None
    n: int

    def to_dict(self) -> dict:
        return asdict(self)


EMPTY = ErrorStats(None, None, None, 0)


@dataclass(frozen=True)
class BreakdownReport:
    normal: ErrorStats
    extreme: ErrorStats
    all: ErrorStats
    threshold: float

    def to_dict(self) -> dict:
        return {"threshold": self.threshold, "normal": self.normal.to_dict(),
                "extreme": self.extreme.to_dict(), "all": self.all.to_dict()}


@dataclass(frozen=True)
class SiteStats:
    site: Site
    stats: ErrorStats
    extreme_count: int
    variance: float

    def to_dict(self) -> dict:
        return {"site": self.site.name, "lat": self.site.lat, "lon": self.site.lon,
                **self.stats.to_dict(), "extreme_count": self.extreme_count,
                "variance": self.variance}


def compute_stats(pred, truth) -> ErrorStats:
    """Errors are ``pred - truth``, so a negative MBE means under-prediction."""
    p = np.asarray(pred, dtype=np.float64).ravel()
    t = np.asarray(truth, dtype=np.float64).ravel()
    if p.size != t.size:
        raise ValueError(f"length mismatch: {p.size} predictions vs {t.size} truths")
    if p.size == 0:
        raise ValueError("empty input")
    e = p - t
    n = e.size
    # fsum: exactly rounded sums, so results do not depend on element order
    return ErrorStats(
        rmse=math.sqrt(math.fsum(e * e) / n),
        mae=math.fsum(np.abs(e)) / n,
        mbe=math.fsum(e) / n,
        n=int(n),
    )


def _stats_or_empty(pred, truth) -> ErrorStats:
    return compute_stats(pred, truth) if len(truth) else EMPTY


def breakdown_arrays(pred, truth, threshold: float = EXTREME_THRESHOLD) -> BreakdownReport:
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(truth, dtype=np.float64)
    if p.shape != t.shape:
        raise ValueError("prediction and truth arrays are not aligned")
    ext = t > threshold
    return BreakdownReport(
        normal=_stats_or_empty(p[~ext], t[~ext]),
        extreme=_stats_or_empty(p[ext], t[ext]),
        all=_stats_or_empty(p, t),
        threshold=threshold,
    )


def breakdown(pairs: Sequence[CollocatedPair], threshold: float = EXTREME_THRESHOLD) -> BreakdownReport:
    """Partition by the station value and score the reanalysis in each part."""
    return breakdown_arrays([p.merra_aod for p in pairs],
                            [p.aeronet_aod for p in pairs], threshold)


def per_site(pairs: Sequence[CollocatedPair], min_obs: int = 1,
             threshold: float = EXTREME_THRESHOLD, preds=None) -> list[SiteStats]:
    """Group by site. ``preds`` optionally replaces the reanalysis values (aligned with pairs)."""
    if preds is not None and len(preds) != len(pairs):
        raise ValueError("preds not aligned with pairs")
    groups: dict[str, list[int]] = defaultdict(list)
    sites: dict[str, Site] = {}
    for i, p in enumerate(pairs):
        groups[p.site.name].append(i)
        sites[p.site.name] = p.site
    out = []
    for name in sorted(groups):
        idx = groups[name]
        if len(idx) < min_obs:
            continue
        truth = np.array([pairs[i].aeronet_aod for i in idx])
        pred = (np.array([pairs[i].merra_aod for i in idx]) if preds is None
                else np.asarray(preds, dtype=np.float64)[idx])
        out.append(SiteStats(
            site=sites[name],
            stats=compute_stats(pred, truth),
            extreme_count=int(np.sum(truth > threshold)),
            variance=float(np.var(truth)),
        ))
    return out


RANK_KEYS = ("extreme_count", "variance", "rmse", "mae", "mbe")


def rank_sites(stats: Sequence[SiteStats], key: str, k: int) -> list[SiteStats]:
    """Top-k by ``key`` descending, ties broken by site name."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if key not in RANK_KEYS:
        raise ValueError(f"unknown ranking key {key!r}")

    def value(s: SiteStats) -> float:
        if key in ("extreme_count", "variance"):
            return getattr(s, key)
        return getattr(s.stats, key)

    return sorted(stats, key=lambda s: (-value(s), s.site.name))[:k]


def compare_models(pairs: Sequence[CollocatedPair], model_preds,
                   threshold: float = EXTREME_THRESHOLD) -> dict:
    """Baseline vs model, Table-2 layout: {model: {category: {stat: value}}}."""
    preds = np.asarray(model_preds, dtype=np.float64).ravel()
    if preds.size != len(pairs):
        raise ValueError(f"{preds.size} predictions for {len(pairs)} pairs")
    truth = [p.aeronet_aod for p in pairs]
    base = breakdown(pairs, threshold)
    model = breakdown_arrays(preds, truth, threshold)

    def cols(r: BreakdownReport) -> dict:
        return {cat: {"rmse": s.rmse, "mae": s.mae, "mbe": s.mbe, "n": s.n}
                for cat, s in (("extreme", r.extreme), ("all", r.all))}

    return {"threshold": threshold, "baseline": cols(base), "model": cols(model)}
