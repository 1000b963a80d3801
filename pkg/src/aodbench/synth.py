"""Seeded synthetic reanalysis fields and station truth with a known t-1 dependence."""
from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field

import numpy as np

from .collocation import PATCH_SIZE
from .geo_grid import GridField, GridSpec, extract_patch, nearest_index
from .stations import EXTREME_THRESHOLD, Site, StationObservation, StationRecord, angstrom_convert

DEFAULT_SPEC = GridSpec(lat0=10.0, dlat=0.5, nlat=60, lon0=70.0, dlon=0.625, nlon=60)
BACKGROUND = 0.1
PLUME_LEVEL = 0.4
PLUME_SIGMA = (8.0, 14.0)
OFFSET = 0.03
BONUS = 1.0
KERNEL_SIGMA = 3.0


@dataclass(frozen=True)
class SynthConfig:
    seed: int = 7
    days: int = 400
    spec: GridSpec = DEFAULT_SPEC
    sites: int = 12
    extreme_fraction: float = 0.15
    noise_sd: float = 0.02
    start: dt.date = dt.date(2008, 1, 1)
    plumes: int = 8

    def __post_init__(self):
        if self.days < 2:
            raise ValueError("need at least 2 days (truth depends on the previous day)")
        if self.sites < 1:
            raise ValueError("need at least one site")
        if not 0 < self.extreme_fraction < 1:
            raise ValueError("extreme_fraction must be in (0, 1)")
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be >= 0")
        half = PATCH_SIZE // 2
        if self.spec.nlat < PATCH_SIZE + 2 or self.spec.nlon < PATCH_SIZE + 2:
            raise ValueError(f"grid must exceed {PATCH_SIZE} cells in each direction")
        if self.spec.lat_of(half) < -82 or self.spec.lat_of(self.spec.nlat - half) > 82:
            raise ValueError("site band must stay 8 degrees from the poles")


@dataclass(frozen=True)
class TruthModel:
    """truth = scale*s + offset + bonus*max(0, s - knee) + noise,
    s = Gaussian-weighted mean of the previous-day patch around its center cell."""

    scale: float
    offset: float
    knee: float
    bonus: float
    kernel_sigma: float
    noise_sd: float
    patch_size: int = PATCH_SIZE

    def weights(self) -> np.ndarray:
        c = self.patch_size // 2
        i = np.arange(self.patch_size) - c
        w = np.exp(-(i[:, None] ** 2 + i[None, :] ** 2) / (2 * self.kernel_sigma ** 2))
        return w / w.sum()

    def statistic(self, patch) -> float:
        return float(np.sum(self.weights() * np.asarray(patch, dtype=np.float64)))

    def signal(self, s):
        s = np.asarray(s, dtype=np.float64)
        return self.scale * s + self.offset + self.bonus * np.maximum(0.0, s - self.knee)

    def to_dict(self) -> dict:
        return {"formula": "scale*s + offset + bonus*max(0, s - knee) + N(0, noise_sd)",
                "statistic": "gaussian-weighted mean of the t-1 patch around offset "
                             f"({self.patch_size // 2}, {self.patch_size // 2})",
                "scale": self.scale, "offset": self.offset, "knee": self.knee,
                "bonus": self.bonus, "kernel_sigma": self.kernel_sigma,
                "noise_sd": self.noise_sd, "patch_size": self.patch_size}


@dataclass
class SynthTruth:
    sites: list[Site]
    records: list[StationRecord]
    model: TruthModel
    alphas: dict = field(default_factory=dict)


def gen_grid_series(config: SynthConfig) -> list[GridField]:
    """Background plus drifting Gaussian plumes; plume motion and strength are AR(1).

    The plume layer is rescaled so its 85th percentile over all cells and days
    equals ``PLUME_LEVEL``, which keeps the value distribution similar across seeds.
    """
    spec = config.spec
    rng = np.random.default_rng([config.seed, 0])
    k = config.plumes
    pos = np.column_stack([rng.uniform(0, spec.nlat, k), rng.uniform(0, spec.nlon, k)])
    vel = rng.normal(0, 0.6, (k, 2))
    log_amp = rng.normal(0.0, 0.5, k)
    sigma = rng.uniform(*PLUME_SIGMA, k)
    rows = np.arange(spec.nlat)[:, None]
    cols = np.arange(spec.nlon)[None, :]
    lo, hi = np.array([-10.0, -10.0]), np.array([spec.nlat + 10.0, spec.nlon + 10.0])
    plumes = np.zeros((config.days,) + spec.shape)
    for day in range(config.days):
        for p in range(k):
            d2 = (rows - pos[p, 0]) ** 2 + (cols - pos[p, 1]) ** 2
            plumes[day] += np.exp(log_amp[p]) * np.exp(-d2 / (2 * sigma[p] ** 2))
        vel = 0.8 * vel + rng.normal(0, 0.4, (k, 2))
        pos = pos + vel
        bounced = (pos < lo) | (pos > hi)
        vel[bounced] *= -1
        pos = np.clip(pos, lo, hi)
        log_amp = 0.9 * log_amp + rng.normal(0, 0.25, k)
    plumes *= PLUME_LEVEL / np.quantile(plumes, 0.85)
    out = []
    for day in range(config.days):
        noise = np.random.default_rng([config.seed, 1, day]).normal(0, 0.005, spec.shape)
        values = np.maximum(BACKGROUND + plumes[day] + noise, 0.0)
        out.append(GridField(spec, config.start + dt.timedelta(days=day), values))
    return out


def place_sites(config: SynthConfig) -> list[Site]:
    spec = config.spec
    rng = np.random.default_rng([config.seed, 2])
    half = PATCH_SIZE // 2
    sites = []
    for i in range(config.sites):
        r = rng.uniform(half + 1, spec.nlat - half - 1)
        c = rng.uniform(half + 1, spec.nlon - half - 1)
        sites.append(Site(f"SYN{i + 1:02d}", round(float(spec.lat_of(r)), 4),
                          round(float(spec.lon_of(c)), 4)))
    return sites


def _calibrate(s: np.ndarray, target_fraction: float, offset: float,
               threshold: float = EXTREME_THRESHOLD) -> tuple[float, float]:
    """Knee at the (1 - fraction) quantile of ``s``; scale so noiseless truth crosses
    the threshold exactly at the knee. Returns (scale, knee)."""
    knee = float(np.quantile(s, 1.0 - target_fraction))
    if not knee > 0:
        raise ValueError("patch statistic quantile is not positive; cannot calibrate")
    return (threshold - offset) / knee, knee


def gen_station_truth(series: list[GridField], config: SynthConfig,
                      sites: list[Site] | None = None) -> SynthTruth:
    sites = place_sites(config) if sites is None else sites
    probe = TruthModel(1.0, OFFSET, 0.0, BONUS, KERNEL_SIGMA, config.noise_sd)
    stats = np.empty((len(sites), len(series) - 1))
    for si, site in enumerate(sites):
        for t in range(1, len(series)):
            prev = series[t - 1]
            node = nearest_index(prev.spec, site.lat, site.lon)
            stats[si, t - 1] = probe.statistic(extract_patch(prev, node).values)
    scale, knee = _calibrate(stats.ravel(), config.extreme_fraction, OFFSET)
    model = TruthModel(scale, OFFSET, knee, BONUS,
                       probe.kernel_sigma, config.noise_sd)
    rng = np.random.default_rng([config.seed, 3])
    records = []
    alphas = {}
    for si, site in enumerate(sites):
        truth = model.signal(stats[si])
        if config.noise_sd > 0:
            truth = truth + rng.normal(0, config.noise_sd, truth.shape)
        truth = np.maximum(truth, 0.0)
        for t in range(1, len(series)):
            records.append(StationRecord(site, series[t].date, float(truth[t - 1]), 1))
            alphas[(site.name, series[t].date)] = float(rng.uniform(0.2, 1.8))
    records.sort(key=lambda r: (r.site.name, r.date))
    return SynthTruth(sites, records, model, alphas)


def truth_observations(truth: SynthTruth) -> list[StationObservation]:
    """Express each daily truth as a 500 nm reading with a random Angstrom exponent."""
    obs = []
    for rec in truth.records:
        alpha = truth.alphas[(rec.site.name, rec.date)]
        obs.append(StationObservation(rec.site, rec.date,
                                      angstrom_convert(rec.aod550, alpha, 550.0, 500.0), alpha))
    return obs
