"""Pair station records with reanalysis cells and build t-1 patch samples."""
from __future__ import annotations

import datetime as dt
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .geo_grid import (
    GridField, GridSpec, LatitudeRangeError, LongitudeRangeError, extract_patch,
    haversine_km, nearest_index,
)
from .stations import Site, StationRecord

PATCH_SIZE = 30

# disposition labels, one per record
SAMPLE = "sample"
NO_PREVIOUS_DAY = "no-previous-day"
MISSING_CELLS = "missing-cells"
LATITUDE_OUT_OF_RANGE = "latitude-out-of-range"
DATE_ABSENT = "date-absent"
DISPOSITIONS = (SAMPLE, NO_PREVIOUS_DAY, MISSING_CELLS, LATITUDE_OUT_OF_RANGE, DATE_ABSENT)


@dataclass(frozen=True)
class CollocatedPair:
    site: Site
    date: dt.date
    merra_aod: float
    aeronet_aod: float
    distance_km: float


@dataclass(frozen=True, eq=False)
class Sample:
    patch: np.ndarray  # PATCH_SIZE x PATCH_SIZE, day t-1
    target: float  # station AOD, day t
    site: Site
    date: dt.date
    baseline: float  # reanalysis nearest-cell AOD, day t


@dataclass
class CollocationResult:
    pairs: list[CollocatedPair]
    unmatched: int = 0
    missing_cell: int = 0


@dataclass
class SampleSet:
    samples: list[Sample]
    dispositions: Counter = field(default_factory=Counter)

    def __len__(self):
        return len(self.samples)


def _as_series(series) -> dict[dt.date, GridField]:
    if isinstance(series, Mapping):
        return dict(series)
    out: dict[dt.date, GridField] = {}
    for f in series:
        if f.date in out:
            raise ValueError(f"duplicate date {f.date} in series")
        out[f.date] = f
    return out


def _sorted(records: Iterable[StationRecord]) -> list[StationRecord]:
    return sorted(records, key=lambda r: (r.site.name, r.date))


def collocate(series, records: Iterable[StationRecord]) -> CollocationResult:
    by_date = _as_series(series)
    result = CollocationResult(pairs=[])
    node_cache: dict[tuple[GridSpec, Site], tuple[int, int, float]] = {}
    for rec in _sorted(records):
        f = by_date.get(rec.date)
        if f is None:
            result.unmatched += 1
            continue
        key = (f.spec, rec.site)
        if key not in node_cache:
            r, c = nearest_index(f.spec, rec.site.lat, rec.site.lon)
            d = haversine_km(rec.site.lat, rec.site.lon,
                             float(f.spec.lat_of(r)), float(f.spec.lon_of(c)))
            node_cache[key] = (r, c, d)
        r, c, d = node_cache[key]
        v = float(f.values[r, c])
        if np.isnan(v):
            result.missing_cell += 1
            continue
        result.pairs.append(CollocatedPair(rec.site, rec.date, v, rec.aod550, d))
    return result


def build_samples(series, records: Iterable[StationRecord],
                  size: int = PATCH_SIZE) -> SampleSet:
    """One sample per record whose t-1 patch is complete; every record gets a disposition."""
    by_date = _as_series(series)
    out = SampleSet(samples=[])
    one_day = dt.timedelta(days=1)
    for rec in _sorted(records):
        today = by_date.get(rec.date)
        if today is None:
            out.dispositions[DATE_ABSENT] += 1
            continue
        prev = by_date.get(rec.date - one_day)
        if prev is None:
            out.dispositions[NO_PREVIOUS_DAY] += 1
            continue
        r, c = nearest_index(prev.spec, rec.site.lat, rec.site.lon)
        try:
            patch = extract_patch(prev, (r, c), size)
        except (LatitudeRangeError, LongitudeRangeError):
            out.dispositions[LATITUDE_OUT_OF_RANGE] += 1
            continue
        tr, tc = nearest_index(today.spec, rec.site.lat, rec.site.lon)
        baseline = float(today.values[tr, tc])
        if not patch.valid or np.isnan(baseline):
            out.dispositions[MISSING_CELLS] += 1
            continue
        out.samples.append(Sample(patch.values, rec.aod550, rec.site, rec.date, baseline))
        out.dispositions[SAMPLE] += 1
    return out


def max_collocation_distance(spec: GridSpec, samples_per_axis: int = 101) -> float:
    """Worst-case site-to-nearest-node distance, sampled over an equatorial cell quadrant.

    The quadrant is sampled on a ``samples_per_axis``^2 lattice (>= 1e4 points
    at the default), then the lattice is repeatedly narrowed around the worst
    point so the supremum is resolved well below a metre.
    """
    nodes = [(a, b) for a in (0.0, spec.dlat) for b in (0.0, spec.dlon)]

    def worst(lat_lo, lat_hi, lon_lo, lon_hi):
        lat = np.linspace(lat_lo, lat_hi, samples_per_axis)[:, None]
        lon = np.linspace(lon_lo, lon_hi, samples_per_axis)[None, :]
        best = np.full((samples_per_axis, samples_per_axis), np.inf)
        for nlat, nlon in nodes:
            best = np.minimum(best, haversine_km(lat, lon, nlat, nlon))
        i, j = np.unravel_index(np.argmax(best), best.shape)
        return best[i, j], lat[i, 0], lon[0, j]

    hl, hw = spec.dlat / 2, spec.dlon / 2
    d, lat, lon = worst(0.0, hl, 0.0, hw)
    step_lat, step_lon = hl / (samples_per_axis - 1), hw / (samples_per_axis - 1)
    for _ in range(6):
        d, lat, lon = worst(max(lat - 2 * step_lat, 0.0), min(lat + 2 * step_lat, hl),
                            max(lon - 2 * step_lon, 0.0), min(lon + 2 * step_lon, hw))
        step_lat, step_lon = 4 * step_lat / (samples_per_axis - 1), 4 * step_lon / (samples_per_axis - 1)
    return float(d)
