"""Per-location observation time series ("d-pixels") and temporal view sampling.

A tile stack holds ``data[t, i, j, c]`` with a validity mask ``mask[t, i, j]``.
Extracting location ``(i, j)`` yields a d-pixel: a ``[T x C]`` series with a
length-``T`` mask. Views for self-supervised training are random subsets of
the valid timesteps of each modality.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .tensorio import S1_BANDS, S2_BANDS, PatchBundle, ValidationError

DEFAULT_K2 = 40
DEFAULT_K1 = 40


class EmptyModalityError(ValueError):
    pass


@dataclass(frozen=True)
class TileStack:
    data: np.ndarray   # [T, W, H, C]
    mask: np.ndarray   # [T, W, H]
    doys: np.ndarray   # [T]

    def __post_init__(self):
        if self.data.ndim != 4:
            raise ValidationError(f"data must be 4-D, got shape {self.data.shape}", "data")
        if self.data.shape[0] < 1:
            raise ValidationError("stack needs at least one timestep", "data")
        if self.mask.shape != self.data.shape[:3]:
            raise ValidationError(f"mask shape {self.mask.shape} != {self.data.shape[:3]}", "mask")
        if self.doys.shape != (self.data.shape[0],):
            raise ValidationError("doys length must equal T", "doys")


@dataclass(frozen=True)
class DPixel:
    series: np.ndarray  # [T, C]
    valid: np.ndarray   # [T] of {0, 1}
    doys: np.ndarray    # [T]

    @property
    def valid_index(self) -> np.ndarray:
        return np.flatnonzero(self.valid)


@dataclass(frozen=True)
class View:
    s2_idx: np.ndarray
    s1_idx: np.ndarray


@dataclass(frozen=True)
class ViewPair:
    view_a: View
    view_b: View


def stack_from_bundle(bundle: PatchBundle, modality: str) -> TileStack:
    if modality not in ("s2", "s1"):
        raise ValueError(f"modality must be 's2' or 's1', got {modality!r}")
    return TileStack(
        data=getattr(bundle, f"{modality}_bands"),
        mask=getattr(bundle, f"{modality}_mask"),
        doys=getattr(bundle, f"{modality}_doys"),
    )


def extract_dpixel(stack: TileStack, i: int, j: int) -> DPixel:
    _, n_i, n_j, _ = stack.data.shape
    if not (0 <= i < n_i and 0 <= j < n_j):
        raise IndexError(f"pixel ({i}, {j}) outside stack of extent ({n_i}, {n_j})")
    return DPixel(
        series=stack.data[:, i, j, :].copy(),
        valid=stack.mask[:, i, j].astype(np.uint8),
        doys=stack.doys.copy(),
    )


def _draw(valid_idx: np.ndarray, k: int, rng: np.random.Generator, name: str) -> np.ndarray:
    if valid_idx.size == 0:
        raise EmptyModalityError(f"{name}: no valid timesteps to sample from")
    if k < 1:
        raise ValueError("k must be >= 1")
    replace = valid_idx.size < k
    return np.sort(rng.choice(valid_idx, size=k, replace=replace))


def sample_view(dp_s2: DPixel, dp_s1: DPixel, k2: int = DEFAULT_K2, k1: int = DEFAULT_K1,
                rng: np.random.Generator | None = None) -> View:
    """Draw ``k2`` optical and ``k1`` radar timesteps from the valid observations.

    Sampling is without replacement when enough valid timesteps exist and
    with replacement otherwise, so the view length is always fixed. Indices
    come back sorted (chronological).
    """
    rng = np.random.default_rng() if rng is None else rng
    s2 = _draw(dp_s2.valid_index, k2, rng, "s2")
    s1 = _draw(dp_s1.valid_index, k1, rng, "s1")
    return View(s2_idx=s2, s1_idx=s1)


def make_view_pair(dp_s2: DPixel, dp_s1: DPixel, k2: int = DEFAULT_K2, k1: int = DEFAULT_K1,
                   rng: np.random.Generator | None = None) -> ViewPair:
    rng = np.random.default_rng() if rng is None else rng
    a = sample_view(dp_s2, dp_s1, k2, k1, rng)
    b = sample_view(dp_s2, dp_s1, k2, k1, rng)
    return ViewPair(a, b)


def view_features(dp_s2: DPixel, dp_s1: DPixel, view: View) -> np.ndarray:
    """Mean channel vector over the sampled timesteps, optical then radar."""
    return np.concatenate([dp_s2.series[view.s2_idx].mean(axis=0),
                           dp_s1.series[view.s1_idx].mean(axis=0)]).astype(np.float64)


def sample_rng(global_seed: int, sample_id: str) -> np.random.Generator:
    """Independent stream per sample, stable regardless of iteration order."""
    digest = hashlib.sha256(sample_id.encode("utf-8")).digest()
    return np.random.default_rng([int(global_seed), int.from_bytes(digest[:8], "little")])


def bundle_dpixels(bundle: PatchBundle) -> list[tuple[DPixel, DPixel]]:
    """All (optical, radar) d-pixel pairs of a bundle, row-major over the patch."""
    s2 = stack_from_bundle(bundle, "s2")
    s1 = stack_from_bundle(bundle, "s1")
    n_i, n_j = s2.data.shape[1:3]
    return [(extract_dpixel(s2, i, j), extract_dpixel(s1, i, j))
            for i in range(n_i) for j in range(n_j)]


def _doys(rng, T):
    if T > 366:
        raise ValueError("at most 366 timesteps per year")
    return np.sort(rng.choice(np.arange(1, 367), size=T, replace=False)).astype(np.int32)


def synth_bundle(seed: int, T2: int = 60, T1: int = 50, valid_fraction: float = 0.7,
                 patch: int = 3) -> PatchBundle:
    """Deterministic synthetic bundle: seasonal sinusoids plus noise, Bernoulli masks."""
    if not 0 < valid_fraction <= 1:
        raise ValueError("valid_fraction must be in (0, 1]")
    rng = np.random.default_rng(seed)
    s2_doys = _doys(rng, T2)
    s1_doys = _doys(rng, T1)

    phase = rng.uniform(0, 2 * np.pi)
    amp2 = rng.uniform(0.02, 0.2, size=S2_BANDS)
    base2 = rng.uniform(0.02, 0.4, size=S2_BANDS)
    season2 = np.sin(2 * np.pi * s2_doys / 365.25 + phase)
    s2 = base2 + amp2 * season2[:, None, None, None]
    s2 = s2 + rng.normal(0, 0.01, size=(T2, patch, patch, S2_BANDS))

    amp1 = rng.uniform(0.5, 3.0, size=S1_BANDS)
    base1 = np.array([-10.0, -17.0]) + rng.normal(0, 1.5, size=S1_BANDS)
    season1 = np.sin(2 * np.pi * s1_doys / 365.25 + phase)
    s1 = base1 + amp1 * season1[:, None, None, None]
    s1 = s1 + rng.normal(0, 0.5, size=(T1, patch, patch, S1_BANDS))

    s2_mask = (rng.random((T2, patch, patch)) < valid_fraction).astype(np.uint8)
    s1_mask = (rng.random((T1, patch, patch)) < valid_fraction).astype(np.uint8)

    return PatchBundle(
        sample_id=f"synth-{seed}",
        lat=float(rng.uniform(35, 70)),
        lon=float(rng.uniform(-10, 140)),
        year=2024,
        s2_bands=s2.astype(np.float32), s2_mask=s2_mask, s2_doys=s2_doys,
        s1_bands=s1.astype(np.float32), s1_mask=s1_mask, s1_doys=s1_doys,
    )
