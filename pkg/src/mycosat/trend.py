"""Multi-year richness rasters: gap filling, per-pixel trends, baseline
percentiles, conservation triage zones, zonal areas and zone trajectories."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensorio import ValidationError, atomic_write_text, dump_json, read_tensor, write_tensor

DEFAULT_PIXEL_AREA_HA = 0.01
STABILITY = 0.5

ZONES = ("none", "Vulnerable", "Refugia", "Improving", "Degraded", "Background")
NONE, VULNERABLE, REFUGIA, IMPROVING, DEGRADED, BACKGROUND = range(6)
FOREST_CLASSES = ("none", "ASNW", "PAWS", "non_ancient")


@dataclass
class YearStack:
    years: np.ndarray      # [Y], strictly increasing
    rasters: np.ndarray    # [Y, H, W] float, NaN = missing
    pixel_area_ha: float = DEFAULT_PIXEL_AREA_HA

    def __post_init__(self):
        self.years = np.asarray(self.years, dtype=np.int64)
        self.rasters = np.asarray(self.rasters, dtype=np.float64)
        if self.rasters.ndim != 3 or self.rasters.shape[0] != self.years.size:
            raise ValidationError(f"need [Y x H x W] rasters for {self.years.size} years, got {self.rasters.shape}",
                                  "rasters")
        if self.years.size > 1 and not (np.diff(self.years) > 0).all():
            raise ValidationError("years must be strictly increasing", "years")
        if self.pixel_area_ha <= 0:
            raise ValidationError("pixel area must be positive", "pixel_area_ha")

    @property
    def shape(self) -> tuple[int, int]:
        return self.rasters.shape[1:]

    def layer(self, year: int) -> int:
        hit = np.flatnonzero(self.years == year)
        if hit.size == 0:
            raise ValidationError(f"year {year} not in stack {self.years.tolist()}", "years")
        return int(hit[0])


@dataclass
class ForestMask:
    classes: np.ndarray  # [H, W] codes into FOREST_CLASSES

    def __post_init__(self):
        self.classes = np.asarray(self.classes, dtype=np.uint8)
        if self.classes.ndim != 2 or self.classes.max(initial=0) >= len(FOREST_CLASSES):
            raise ValidationError("forest mask must be [H x W] with codes 0..3", "forest_mask")

    @property
    def forested(self) -> np.ndarray:
        return self.classes > 0


@dataclass
class TriageRaster:
    baseline_pct: np.ndarray
    slope: np.ndarray
    zone: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def _check_grid(shape, mask: ForestMask | None):
    if mask is not None and mask.classes.shape != tuple(shape):
        raise ValidationError(f"forest mask {mask.classes.shape} does not match raster grid {tuple(shape)}",
                              "forest_mask")


# ---------------------------------------------------------------- gap fill

def gap_fill(stack: YearStack, target_year: int, source_year: int,
             mask: ForestMask | None = None) -> tuple[YearStack, float, int]:
    """Fill missing target-year pixels from the source year.

    Returns the new stack, the filled fraction of the (forested) area and
    the number of pixels still missing because the source was missing too.
    """
    _check_grid(stack.shape, mask)
    t, s = stack.layer(target_year), stack.layer(source_year)
    region = mask.forested if mask is not None else np.ones(stack.shape, dtype=bool)
    rasters = stack.rasters.copy()
    hole = np.isnan(rasters[t]) & region
    fill = hole & ~np.isnan(rasters[s])
    rasters[t][fill] = rasters[s][fill]
    total = int(region.sum())
    fraction = fill.sum() / total if total else 0.0
    return YearStack(stack.years, rasters, stack.pixel_area_ha), float(fraction), int((hole & ~fill).sum())


# ------------------------------------------------------------------ slopes

def pixel_slopes(stack: YearStack, min_years: int = 3) -> np.ndarray:
    """OLS slope of value on calendar year for each pixel, over its observed years.

    Pixels with fewer than ``min_years`` observations get NaN.
    """
    v = stack.rasters
    ok = ~np.isnan(v)
    x = stack.years.astype(np.float64)[:, None, None]
    n = ok.sum(axis=0)
    vz = np.where(ok, v, 0.0)
    # centre years per pixel on the observed subset for numerical stability
    xbar = np.where(ok, x, 0.0).sum(axis=0) / np.maximum(n, 1)
    dx = np.where(ok, x - xbar, 0.0)
    ybar = vz.sum(axis=0) / np.maximum(n, 1)
    sxy = (dx * (vz - ybar)).sum(axis=0)
    sxx = (dx * dx).sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        slope = sxy / sxx
    slope[(n < min_years) | (sxx == 0)] = np.nan
    return slope


# ------------------------------------------------------------ percentiles

def percentile_rank(values: np.ndarray, reference: np.ndarray) -> np.ndarray:
    """Percentile of each value within ``reference`` (inverse of linear-interpolation quantiles).

    A value equal to ``reference`` entries spanning sorted positions i..j
    gets ``100 * (i + j) / 2 / (n - 1)``; values in between are interpolated.
    """
    ref = np.sort(np.asarray(reference, dtype=np.float64))
    n = ref.size
    if n == 0:
        raise ValueError("empty reference")
    values = np.asarray(values, dtype=np.float64)
    if n == 1:
        return np.where(np.isnan(values), np.nan, 50.0)
    lo = np.searchsorted(ref, values, side="left")
    hi = np.searchsorted(ref, values, side="right")
    tied = hi > lo
    pos = np.where(tied, (lo + hi - 1) / 2.0, 0.0)
    # strictly between ref[lo-1] and ref[lo]
    k = np.clip(lo, 1, n - 1)
    a, b = ref[k - 1], ref[k]
    with np.errstate(divide="ignore", invalid="ignore"):
        interp = (k - 1) + (values - a) / (b - a)
    pos = np.where(tied, pos, np.clip(interp, 0.0, n - 1.0))
    out = 100.0 * pos / (n - 1)
    return np.where(np.isnan(values), np.nan, out)


def baseline_percentiles(stack: YearStack, baseline_years=(2017, 2018, 2019), mask: ForestMask | None = None):
    """Mean over the baseline years, its 25/50/75th percentiles over forested
    pixels, and every pixel's percentile rank within that distribution."""
    _check_grid(stack.shape, mask)
    layers = [stack.layer(y) for y in baseline_years]
    sub = stack.rasters[layers]
    counts = (~np.isnan(sub)).sum(axis=0)
    with np.errstate(invalid="ignore"):
        baseline = np.where(counts > 0, np.nansum(sub, axis=0) / np.maximum(counts, 1), np.nan)
    region = mask.forested if mask is not None else np.ones(stack.shape, dtype=bool)
    ref = baseline[region & ~np.isnan(baseline)]
    if ref.size == 0:
        raise ValidationError("no forested pixel has a baseline value", "baseline")
    p25, p50, p75 = np.quantile(ref, [0.25, 0.5, 0.75])
    pct = percentile_rank(baseline, ref)
    pct[~region] = np.nan
    return baseline, {"p25": float(p25), "p50": float(p50), "p75": float(p75)}, pct


# ------------------------------------------------------------------ triage

def classify_pixel(pct: float, slope: float) -> int:
    """Zone code for one forested pixel; NaN inputs give ``NONE``."""
    if math.isnan(pct) or math.isnan(slope):
        return NONE
    if pct > 75:
        return VULNERABLE if slope < -STABILITY else REFUGIA
    if pct >= 50:
        return BACKGROUND
    if slope > STABILITY:
        return IMPROVING
    if slope < -STABILITY and pct < 25:
        return DEGRADED
    return BACKGROUND


def classify_triage(baseline_pct, slope, mask: ForestMask | None = None) -> tuple[np.ndarray, dict]:
    """Vectorised :func:`classify_pixel` over rasters.

    Non-forest pixels get ``NONE``. Diagnostics count forested pixels
    without a slope or percentile (``missing``) and pixels at 25-50th
    percentile losing more than the stability threshold, which no named zone
    covers and which are placed in Background (``rule_gap_count``).
    """
    pct = np.asarray(baseline_pct, dtype=np.float64)
    slope = np.asarray(slope, dtype=np.float64)
    if pct.shape != slope.shape:
        raise ValidationError(f"percentile {pct.shape} and slope {slope.shape} rasters differ", "slope")
    _check_grid(pct.shape, mask)
    forested = mask.forested if mask is not None else np.ones(pct.shape, dtype=bool)
    valid = forested & ~np.isnan(pct) & ~np.isnan(slope)
    zone = np.full(pct.shape, NONE, dtype=np.uint8)
    high = pct > 75
    low = pct < 50
    loss = slope < -STABILITY
    zone[valid] = BACKGROUND
    zone[valid & high & loss] = VULNERABLE
    zone[valid & high & ~loss] = REFUGIA
    zone[valid & low & (slope > STABILITY)] = IMPROVING
    zone[valid & (pct < 25) & loss] = DEGRADED
    gap = valid & low & (pct >= 25) & loss
    return zone, {"missing": int((forested & ~valid).sum()), "rule_gap_count": int(gap.sum())}


def triage(stack: YearStack, mask: ForestMask, baseline_years=(2017, 2018, 2019)) -> TriageRaster:
    _, thresholds, pct = baseline_percentiles(stack, baseline_years, mask)
    slope = pixel_slopes(stack)
    zone, diag = classify_triage(pct, slope, mask)
    return TriageRaster(pct, slope, zone, {**diag, "thresholds": thresholds})


# ------------------------------------------------------------------- zonal

def zonal_stats(zone, mask: ForestMask, pixel_area_ha: float = DEFAULT_PIXEL_AREA_HA) -> list[dict]:
    """Area and share of every zone within each forest class.

    Rows cover the five named zones plus ``unclassified`` (forested pixels
    left as ``none``), so the pixel counts of a class always add up to its
    total. ``share`` is area over the class area.
    """
    zone = np.asarray(zone)
    _check_grid(zone.shape, mask)
    rows = []
    for ci, cname in enumerate(FOREST_CLASSES):
        if ci == 0:
            continue
        in_class = mask.classes == ci
        total = int(in_class.sum())
        for zi, zname in enumerate(ZONES):
            count = int((in_class & (zone == zi)).sum())
            rows.append({"forest_class": cname, "zone": zname if zi else "unclassified", "pixels": count,
                         "hectares": count * pixel_area_ha, "share": count / total if total else 0.0})
    return rows


# ------------------------------------------------------------ trajectories

def sample_trajectories(stack: YearStack, zone, per_zone: int = 500, seed: int = 0) -> tuple[list[dict], list[str]]:
    """Per zone and year: mean richness and a normal-approximation 95% CI.

    Up to ``per_zone`` pixels are drawn per zone without replacement.
    Missing values are skipped year by year. Empty zones are left out and
    reported in the returned notes.
    """
    zone = np.asarray(zone)
    if zone.shape != stack.shape:
        raise ValidationError("zone raster does not match the stack grid", "zone")
    rng = np.random.default_rng(seed)
    flat = stack.rasters.reshape(stack.years.size, -1)
    rows, notes = [], []
    for zi in range(1, len(ZONES)):
        idx = np.flatnonzero(zone.ravel() == zi)
        if idx.size == 0:
            notes.append(f"zone {ZONES[zi]} is empty")
            continue
        pick = np.sort(rng.choice(idx, size=min(per_zone, idx.size), replace=False))
        for k, year in enumerate(stack.years):
            v = flat[k, pick]
            v = v[~np.isnan(v)]
            if v.size == 0:
                continue
            mean = float(v.mean())
            half = 1.96 * float(v.std(ddof=1)) / math.sqrt(v.size) if v.size > 1 else 0.0
            rows.append({"zone": ZONES[zi], "year": int(year), "n": int(v.size), "mean": mean,
                         "ci95_low": mean - half, "ci95_high": mean + half})
    return rows, notes


# ------------------------------------------------------------- raster I/O

@dataclass
class GeoInfo:
    origin: tuple[float, float] = (0.0, 0.0)
    cellsize: float = 10.0
    crs: str = "EPSG:27700"
    nodata: float | None = None
    years: list[int] | None = None

    def to_dict(self) -> dict:
        return {"origin": list(self.origin), "cellsize": self.cellsize, "crs": self.crs,
                "nodata": self.nodata, "years": self.years}


def _sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".json")


def _maskfile(path: Path) -> Path:
    return path.with_name(path.stem + ".valid" + path.suffix)


def write_raster(path, data, geo: GeoInfo = GeoInfo()) -> None:
    """Tensor file plus a JSON sidecar; float rasters also get a u8 validity mask."""
    path = Path(path)
    data = np.asarray(data)
    write_tensor(path, data)
    if data.dtype.kind == "f":
        write_tensor(_maskfile(path), (~np.isnan(data)).astype(np.uint8))
    atomic_write_text(_sidecar(path), dump_json(geo.to_dict()))


def read_raster(path) -> tuple[np.ndarray, GeoInfo]:
    path = Path(path)
    data = read_tensor(path)
    geo = GeoInfo()
    if _sidecar(path).exists():
        meta = json.loads(_sidecar(path).read_text(encoding="utf-8"))
        geo = GeoInfo(tuple(meta.get("origin", geo.origin)), meta.get("cellsize", geo.cellsize),
                      meta.get("crs", geo.crs), meta.get("nodata"), meta.get("years"))
    if data.dtype.kind == "f":
        data = data.astype(np.float64)
        if _maskfile(path).exists():
            data[read_tensor(_maskfile(path)) == 0] = np.nan
    return data, geo


def synth_stack(height: int = 64, width: int = 64, years=range(2017, 2025), seed: int = 0,
                missing_fraction: float = 0.0):
    """Richness stack with smooth spatial structure, per-pixel trends and a forest mask.

    When ``missing_fraction`` > 0, that share of forested pixels is blanked in
    the final year so gap filling has work to do.
    """
    rng = np.random.default_rng(seed)
    years = np.asarray(list(years), dtype=np.int64)
    yy, xx = np.mgrid[0:height, 0:width] / max(height, width)
    base = 40.0 + 15.0 * np.sin(3.0 * xx) * np.cos(2.0 * yy) + rng.normal(0, 2, (height, width))
    trend = 2.0 * np.sin(5.0 * yy + 1.0) + rng.normal(0, 0.3, (height, width))
    t = (years - years[0]).astype(np.float64)[:, None, None]
    rasters = base + trend * t + rng.normal(0, 1.0, (years.size, height, width))
    classes = rng.choice(4, size=(height, width), p=[0.2, 0.3, 0.2, 0.3]).astype(np.uint8)
    mask = ForestMask(classes)
    if missing_fraction > 0:
        fidx = np.flatnonzero(mask.forested.ravel())
        n_miss = int(round(missing_fraction * fidx.size))
        hole = rng.choice(fidx, size=n_miss, replace=False)
        last = rasters[-1].reshape(-1)
        last[hole] = np.nan
    return YearStack(years, rasters), mask
