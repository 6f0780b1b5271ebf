"""Species richness from OTU abundance counts, and the per-biome outlier filter."""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np


@dataclass(frozen=True)
class AbundanceVector:
    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.ndim != 1 or c.size == 0:
            raise ValueError("abundance vector must be a non-empty 1-D array")
        if np.any(c < 1) or not np.all(np.equal(np.mod(c, 1), 0)):
            raise ValueError("abundance counts must be positive integers")
        object.__setattr__(self, "counts", c.astype(np.int64))

    @classmethod
    def from_counts(cls, counts) -> "AbundanceVector":
        """Build from raw counts, dropping zero entries (unobserved OTUs)."""
        c = np.asarray(counts)
        return cls(c[c > 0])

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def s_obs(self) -> int:
        return int(self.counts.size)

    @property
    def f1(self) -> int:
        return int(np.count_nonzero(self.counts == 1))

    @property
    def f2(self) -> int:
        return int(np.count_nonzero(self.counts == 2))


@dataclass(frozen=True)
class RichnessSample:
    sample_id: str
    lat: float
    lon: float
    biome_id: str
    richness_hat: float


def _as_av(av) -> AbundanceVector:
    return av if isinstance(av, AbundanceVector) else AbundanceVector(np.asarray(av))


def chao1(av) -> float:
    """Bias-corrected Chao1 asymptotic richness.

    ``S_obs + (n-1)/n * f1^2 / (2 f2)`` when doubletons exist, otherwise
    ``S_obs + (n-1)/n * f1 (f1 - 1) / 2``.
    """
    av = _as_av(av)
    n, f1, f2 = av.n, av.f1, av.f2
    k = (n - 1) / n
    if f2 > 0:
        return av.s_obs + k * f1 * f1 / (2.0 * f2)
    return av.s_obs + k * f1 * (f1 - 1) / 2.0


def extrapolate(av, m: float) -> float:
    """Expected richness after ``m`` additional reads (Chao et al. 2014 estimator)."""
    if m < 0:
        raise ValueError("m must be non-negative")
    av = _as_av(av)
    f0 = chao1(av) - av.s_obs
    if m == 0 or f0 <= 0:
        return float(av.s_obs)
    q = 1.0 - av.f1 / (av.n * f0 + av.f1)
    # expm1/log keep (1 - x)^m accurate for very large m
    return float(av.s_obs + f0 * -math.expm1(m * math.log(q)))


def estimate_richness(av, method: str = "chao1") -> float:
    """``chao1`` (asymptote) or ``double_depth`` (extrapolated to twice the reads)."""
    av = _as_av(av)
    if method == "chao1":
        return chao1(av)
    if method == "double_depth":
        return extrapolate(av, av.n)
    raise ValueError(f"unknown richness method {method!r}")


def parse_counts(text: str) -> np.ndarray:
    text = text.strip()
    if not text:
        return np.zeros(0, dtype=np.int64)
    return np.array([int(tok) for tok in text.split(";") if tok.strip()], dtype=np.int64)


def biome_thresholds(samples: list[RichnessSample], k_iqr: float = 5.0) -> dict[str, float]:
    """Per-biome cut-off ``median + k_iqr * (Q3 - Q1)`` with linear-interpolation quantiles."""
    groups: dict[str, list[float]] = {}
    for s in samples:
        groups.setdefault(s.biome_id, []).append(s.richness_hat)
    out = {}
    for biome, vals in groups.items():
        q1, med, q3 = np.quantile(np.asarray(vals, dtype=np.float64), [0.25, 0.5, 0.75])
        out[biome] = float(med + k_iqr * (q3 - q1))
    return out


def biome_filter(samples: list[RichnessSample], k_iqr: float = 5.0):
    """Single-pass removal of samples more than ``k_iqr`` IQRs above their biome median.

    Returns ``(kept, removed)``, each in input order.
    """
    thresholds = biome_thresholds(samples, k_iqr)
    kept, removed = [], []
    for s in samples:
        (removed if s.richness_hat > thresholds[s.biome_id] else kept).append(s)
    return kept, removed


def with_richness(sample: RichnessSample, value: float) -> RichnessSample:
    return replace(sample, richness_hat=float(value))
