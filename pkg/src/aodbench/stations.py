"""Station ground truth: CSV ingestion, Angstrom wavelength conversion, daily means."""
from __future__ import annotations

import csv
import datetime as dt
import io
import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable, Sequence

HEADER = ["site", "lat", "lon", "date", "aod_500nm", "angstrom_440_675"]
EXTREME_THRESHOLD = 0.7


class StationFormatError(ValueError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


class MissingHeaderError(StationFormatError):
    pass


class NumericFieldError(StationFormatError):
    pass


class StationLatitudeError(StationFormatError):
    pass


@dataclass(frozen=True)
class Site:
    name: str
    lat: float
    lon: float

    def __post_init__(self):
        if not self.name:
            raise ValueError("site name must be non-empty")
        if not -90 <= self.lat <= 90:
            raise ValueError(f"latitude {self.lat} outside [-90, 90]")


@dataclass(frozen=True)
class StationObservation:
    site: Site
    date: dt.date
    aod500: float
    alpha: float


@dataclass(frozen=True)
class StationRecord:
    site: Site
    date: dt.date
    aod550: float
    n_obs: int = 1


def _float(value: str, line: int, column: str) -> float:
    try:
        x = float(value)
    except ValueError:
        raise NumericFieldError(line, f"{column}={value!r} is not a number") from None
    if not math.isfinite(x):
        raise NumericFieldError(line, f"{column}={value!r} is not finite")
    return x


def parse_station_csv(text: str) -> list[StationObservation]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != HEADER:
        raise MissingHeaderError(1, f"expected header {','.join(HEADER)}")
    sites: dict[str, Site] = {}
    out = []
    for row in reader:
        line = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(HEADER):
            raise StationFormatError(line, f"expected {len(HEADER)} fields, got {len(row)}")
        name = row[0].strip()
        if not name:
            raise StationFormatError(line, "empty site name")
        lat = _float(row[1], line, "lat")
        lon = _float(row[2], line, "lon")
        if not -90 <= lat <= 90:
            raise StationLatitudeError(line, f"latitude {lat} outside [-90, 90]")
        try:
            date = dt.date.fromisoformat(row[3].strip())
        except ValueError:
            raise StationFormatError(line, f"bad date {row[3]!r}") from None
        aod = _float(row[4], line, "aod_500nm")
        if aod < 0:
            raise NumericFieldError(line, f"negative AOD {aod}")
        alpha = _float(row[5], line, "angstrom_440_675")
        site = sites.get(name)
        if site is None:
            site = sites[name] = Site(name, lat, lon)
        elif (site.lat, site.lon) != (lat, lon):
            raise StationFormatError(line, f"site {name!r} changes coordinates")
        out.append(StationObservation(site, date, aod, alpha))
    return out


def write_station_csv(observations: Iterable[StationObservation]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    for o in observations:
        w.writerow([o.site.name, repr(o.site.lat), repr(o.site.lon),
                    o.date.isoformat(), repr(o.aod500), repr(o.alpha)])
    return buf.getvalue()


def angstrom_convert(aod_from: float, alpha: float,
                     lambda_from: float = 500.0, lambda_to: float = 550.0) -> float:
    """Power-law AOD at ``lambda_to`` given AOD at ``lambda_from``."""
    if aod_from < 0:
        raise ValueError(f"negative AOD {aod_from}")
    if lambda_from <= 0 or lambda_to <= 0:
        raise ValueError("wavelengths must be positive")
    if alpha == 0 or lambda_from == lambda_to:
        return aod_from
    return aod_from * (lambda_to / lambda_from) ** (-alpha)


def daily_mean(observations: Sequence[StationObservation]) -> StationRecord:
    if not observations:
        raise ValueError("no observations")
    site, date = observations[0].site, observations[0].date
    for o in observations:
        if o.site != site or o.date != date:
            raise ValueError("observations span several sites or days")
    converted = [angstrom_convert(o.aod500, o.alpha) for o in observations]
    # fsum keeps the mean order independent; the clamp absorbs the final rounding
    mean = math.fsum(converted) / len(converted)
    mean = min(max(mean, min(converted)), max(converted))
    return StationRecord(site, date, mean, len(converted))


def daily_records(observations: Iterable[StationObservation]) -> list[StationRecord]:
    """Group observations by (site, day) and average; sorted by site name then date."""
    groups: dict[tuple[str, dt.date], list[StationObservation]] = defaultdict(list)
    for o in observations:
        groups[(o.site.name, o.date)].append(o)
    return [daily_mean(groups[k]) for k in sorted(groups)]


def classify_extreme(aod: float, threshold: float = EXTREME_THRESHOLD) -> bool:
    return aod > threshold
