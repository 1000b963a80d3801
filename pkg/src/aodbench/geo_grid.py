"""Gridded daily AOD fields: data model, AODGRID v1 binary format, spatial lookups."""
from __future__ import annotations

import datetime as dt
import math
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

EARTH_RADIUS_KM = 6371.0
MAGIC = b"AODG"
VERSION = 1
_HEADER = struct.Struct("<4sBIIddddI")
HEADER_SIZE = _HEADER.size  # 49
_QNAN32 = np.uint32(0x7FC00000)
_U32_MAX = 2**32 - 1


class GridFormatError(ValueError):
    """Malformed AODGRID payload."""


class BadMagicError(GridFormatError):
    pass


class UnsupportedVersionError(GridFormatError):
    pass


class TruncatedPayloadError(GridFormatError):
    pass


class InconsistentDimensionsError(GridFormatError):
    pass


class DimensionOverflowError(GridFormatError):
    pass


class LatitudeRangeError(ValueError):
    """Patch window leaves the latitude range of the grid."""


class LongitudeRangeError(ValueError):
    """Patch window leaves a regional (non-periodic) grid."""


@dataclass(frozen=True)
class GridSpec:
    lat0: float
    dlat: float
    nlat: int
    lon0: float
    dlon: float
    nlon: int

    def __post_init__(self):
        if not (self.dlat > 0 and self.dlon > 0):
            raise ValueError("grid spacing must be positive")
        if self.nlat < 1 or self.nlon < 1:
            raise ValueError("grid must have at least one row and column")
        if self.lat0 < -90 or self.lat0 + (self.nlat - 1) * self.dlat > 90 + 1e-9:
            raise ValueError("grid latitudes exceed [-90, 90]")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nlat, self.nlon)

    @property
    def is_global(self) -> bool:
        """True when the columns span the full circle, so longitude wraps."""
        return abs(self.nlon * self.dlon - 360.0) < 1e-6

    def lat_of(self, row):
        return self.lat0 + np.asarray(row) * self.dlat

    def lon_of(self, col):
        return self.lon0 + np.asarray(col) * self.dlon


MERRA2 = GridSpec(lat0=-90.0, dlat=0.5, nlat=361, lon0=-180.0, dlon=0.625, nlon=576)


@dataclass(frozen=True, eq=False)
class GridField:
    spec: GridSpec
    date: dt.date
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float32).reshape(-1)
        if vals.size != self.spec.nlat * self.spec.nlon:
            raise ValueError(
                f"expected {self.spec.nlat * self.spec.nlon} values, got {vals.size}"
            )
        vals = vals.reshape(self.spec.nlat, self.spec.nlon)
        if np.any(vals[~np.isnan(vals)] < 0):
            raise ValueError("AOD values must be non-negative")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    def __eq__(self, other):
        if not isinstance(other, GridField):
            return NotImplemented
        return (
            self.spec == other.spec
            and self.date == other.date
            and np.array_equal(self.values, other.values, equal_nan=True)
        )

    __hash__ = None


@dataclass(frozen=True)
class Patch:
    values: np.ndarray
    center_lat: float
    center_lon: float
    source_date: dt.date
    valid: bool


def _date_to_u32(d: dt.date) -> int:
    return d.year * 10000 + d.month * 100 + d.day


def _u32_to_date(v: int) -> dt.date:
    try:
        return dt.date(v // 10000, (v // 100) % 100, v % 100)
    except ValueError as e:
        raise GridFormatError(f"invalid date field {v}") from e


def write_grid_file(field: GridField) -> bytes:
    s = field.spec
    if s.nlat > _U32_MAX or s.nlon > _U32_MAX:
        raise DimensionOverflowError("grid dimensions exceed 32-bit range")
    header = _HEADER.pack(
        MAGIC, VERSION, s.nlat, s.nlon, s.lat0, s.dlat, s.lon0, s.dlon,
        _date_to_u32(field.date),
    )
    bits = field.values.astype("<f4").view("<u4").copy()
    bits[np.isnan(field.values)] = _QNAN32
    return header + bits.tobytes()


def parse_grid_file(data: bytes) -> GridField:
    if len(data) < 4 or data[:4] != MAGIC:
        raise BadMagicError(f"bad magic {bytes(data[:4])!r}")
    if len(data) < 5:
        raise TruncatedPayloadError("header truncated")
    if data[4] != VERSION:
        raise UnsupportedVersionError(f"unsupported version {data[4]}")
    if len(data) < HEADER_SIZE:
        raise TruncatedPayloadError(f"header truncated at {len(data)} bytes")
    _, _, nlat, nlon, lat0, dlat, lon0, dlon, date = _HEADER.unpack_from(data)
    try:
        spec = GridSpec(lat0, dlat, nlat, lon0, dlon, nlon)
    except ValueError as e:
        raise InconsistentDimensionsError(str(e)) from e
    expected = HEADER_SIZE + 4 * nlat * nlon
    if len(data) < expected:
        raise TruncatedPayloadError(f"payload has {len(data)} bytes, expected {expected}")
    if len(data) > expected:
        raise InconsistentDimensionsError(
            f"payload has {len(data) - expected} bytes beyond {nlat}x{nlon} values"
        )
    values = np.frombuffer(data, dtype="<f4", count=nlat * nlon, offset=HEADER_SIZE)
    try:
        return GridField(spec, _u32_to_date(date), values.astype(np.float32))
    except ValueError as e:
        if isinstance(e, GridFormatError):
            raise
        raise GridFormatError(str(e)) from e


def haversine_km(lat1, lon1, lat2, lon2):
    """Great-circle distance in km; broadcasts over array inputs."""
    p1, p2 = np.radians(lat1), np.radians(lat2)
    dphi = p2 - p1
    dlam = np.radians(np.subtract(lon2, lon1))
    a = np.sin(dphi / 2) ** 2 + np.cos(p1) * np.cos(p2) * np.sin(dlam / 2) ** 2
    d = 2 * EARTH_RADIUS_KM * np.arcsin(np.sqrt(np.clip(a, 0.0, 1.0)))
    return float(d) if np.ndim(d) == 0 else d


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def nearest_index(spec: GridSpec, lat: float, lon: float) -> tuple[int, int]:
    """Grid node closest to (lat, lon) by great-circle distance.

    Starts from the degree-space rounding (ties toward +inf) and then checks
    the 3x3 neighbourhood, since near a row midpoint the poleward node can be
    marginally closer on the sphere.
    """
    if not -90 <= lat <= 90:
        raise ValueError(f"latitude {lat} outside [-90, 90]")
    row = min(max(_round_half_up((lat - spec.lat0) / spec.dlat), 0), spec.nlat - 1)
    if spec.is_global:
        col = _round_half_up(((lon - spec.lon0) % 360.0) / spec.dlon) % spec.nlon
    else:
        rel = (lon - spec.lon0 + 180.0) % 360.0 - 180.0
        col = min(max(_round_half_up(rel / spec.dlon), 0), spec.nlon - 1)

    best = (row, col)
    best_d = haversine_km(lat, lon, spec.lat0 + row * spec.dlat, spec.lon0 + col * spec.dlon)
    for dr in (-1, 0, 1):
        r = row + dr
        if not 0 <= r < spec.nlat:
            continue
        for dc in (-1, 0, 1):
            c = col + dc
            if spec.is_global:
                c %= spec.nlon
            elif not 0 <= c < spec.nlon:
                continue
            if (r, c) == (row, col):
                continue
            d = haversine_km(lat, lon, spec.lat0 + r * spec.dlat, spec.lon0 + c * spec.dlon)
            if d < best_d - 1e-9:
                best, best_d = (r, c), d
    return best


def window_bounds(center: int, size: int) -> tuple[int, int]:
    """Inclusive [start, stop] of a size-long window; even sizes put the center at offset size//2."""
    start = center - size // 2
    return start, start + size - 1


def extract_patch(field: GridField, center: tuple[int, int], size: int = 30) -> Patch:
    spec = field.spec
    row, col = center
    r0, r1 = window_bounds(row, size)
    if r0 < 0 or r1 > spec.nlat - 1:
        raise LatitudeRangeError(
            f"rows {r0}..{r1} outside grid rows 0..{spec.nlat - 1}"
        )
    c0, c1 = window_bounds(col, size)
    if spec.is_global:
        cols = np.arange(c0, c1 + 1) % spec.nlon
        vals = field.values[r0:r1 + 1][:, cols]
    else:
        if c0 < 0 or c1 > spec.nlon - 1:
            raise LongitudeRangeError(
                f"cols {c0}..{c1} outside regional grid cols 0..{spec.nlon - 1}"
            )
        vals = field.values[r0:r1 + 1, c0:c1 + 1]
    vals = np.array(vals, dtype=np.float64)
    return Patch(
        values=vals,
        center_lat=float(spec.lat_of(row)),
        center_lon=float(spec.lon_of(col)),
        source_date=field.date,
        valid=bool(not np.isnan(vals).any()),
    )


def aggregate_daily_mean(fields: Sequence[GridField]) -> GridField:
    if not fields:
        raise ValueError("no fields to aggregate")
    spec, date = fields[0].spec, fields[0].date
    for f in fields[1:]:
        if f.spec != spec:
            raise ValueError("mismatched grid specs")
        if f.date != date:
            raise ValueError("fields span more than one date")
    # sorted along the stack axis so the sum is independent of input order
    stack = np.sort(np.stack([f.values.astype(np.float64) for f in fields]), axis=0)
    count = np.sum(~np.isnan(stack), axis=0)
    total = np.nansum(stack, axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(count > 0, total / count, np.nan)
    return GridField(spec, date, mean)


def grid_filename(date: dt.date) -> str:
    return f"aod_{date:%Y%m%d}.aodg"


def write_grid_series(fields: Sequence[GridField], out_dir) -> list:
    from pathlib import Path

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for f in fields:
        path = out / grid_filename(f.date)
        path.write_bytes(write_grid_file(f))
        paths.append(path)
    return paths


def read_grid_series(path, threads: int | None = None) -> dict[dt.date, GridField]:
    """Load every ``*.aodg`` file under a directory (or a single file), keyed by date.

    Several files for the same date are treated as sub-daily snapshots and
    averaged.
    """
    from concurrent.futures import ThreadPoolExecutor
    from pathlib import Path

    p = Path(path)
    files = [p] if p.is_file() else sorted(p.glob("*.aodg"))

    def load(fp):
        try:
            return parse_grid_file(fp.read_bytes())
        except GridFormatError as e:
            raise GridFormatError(f"{fp}: {e}") from e

    with ThreadPoolExecutor(max_workers=threads or None) as pool:
        fields = list(pool.map(load, files))
    by_date: dict[dt.date, list[GridField]] = {}
    for f in fields:
        by_date.setdefault(f.date, []).append(f)
    return {
        d: fs[0] if len(fs) == 1 else aggregate_daily_mean(fs)
        for d, fs in sorted(by_date.items())
    }
