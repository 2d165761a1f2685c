"""Feature statistics: normalization constants, correlations, slider ranges.

Raw feature values have wildly different scales (a summed 18-row eyebrow
height vs a single lip thickness), so training and editing operate on
standardized values (m - mean) / std.  The pairwise correlation matrix
feeds the correlation-relaxed disentanglement term of the training loss,
and per-feature percentile bounds give the edit service sensible slider
ranges.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from faceshape.errors import DegenerateStatisticsError
from faceshape.landmarks import FEATURE_COUNT, feature_names

STATS_FORMAT = "faceshape-stats v1"
CORR_FORMAT = "faceshape-correlation v1"

SLIDER_LO_PCT = 2.0
SLIDER_HI_PCT = 98.0


@dataclass
class FeatureStats:
    """Per-feature mean/std plus slider bounds in normalized units."""

    mean: np.ndarray          # (23,)
    std: np.ndarray           # (23,)
    slider_lo: np.ndarray     # (23,) normalized-unit lower bound
    slider_hi: np.ndarray     # (23,) normalized-unit upper bound
    sample_count: int

    def __post_init__(self):
        for name in ("mean", "std", "slider_lo", "slider_hi"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != (FEATURE_COUNT,):
                raise ValueError(f"{name} must have shape ({FEATURE_COUNT},), got {arr.shape}")
            setattr(self, name, arr)
        if np.any(self.std <= 0):
            bad = int(np.argmin(self.std))
            raise DegenerateStatisticsError(
                f"non-positive std for feature {bad} ({feature_names()[bad]})"
            )

    def normalize(self, raw):
        """(..., 23) raw feature values -> standardized values."""
        return (np.asarray(raw, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, normed):
        return np.asarray(normed, dtype=np.float64) * self.std + self.mean

    def save(self, path):
        path = Path(path)
        names = feature_names()
        lines = [f"# {STATS_FORMAT}", f"# samples\t{self.sample_count}",
                 "# id\tname\tmean\tstd\tslider_lo\tslider_hi"]
        for i in range(FEATURE_COUNT):
            lines.append(
                f"{i}\t{names[i]}\t{float(self.mean[i])!r}\t{float(self.std[i])!r}"
                f"\t{float(self.slider_lo[i])!r}\t{float(self.slider_hi[i])!r}"
            )
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text("\n".join(lines) + "\n")
        tmp.replace(path)

    @classmethod
    def load(cls, path) -> "FeatureStats":
        lines = Path(path).read_text().splitlines()
        if not lines or lines[0].strip() != f"# {STATS_FORMAT}":
            raise ValueError(f"{path}: not a {STATS_FORMAT} file")
        sample_count = 0
        mean = np.zeros(FEATURE_COUNT)
        std = np.zeros(FEATURE_COUNT)
        lo = np.zeros(FEATURE_COUNT)
        hi = np.zeros(FEATURE_COUNT)
        seen = set()
        for line in lines[1:]:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("# samples"):
                    sample_count = int(line.split("\t")[1])
                continue
            fields = line.split("\t")
            if len(fields) != 6:
                raise ValueError(f"{path}: malformed row {line!r}")
            i = int(fields[0])
            mean[i], std[i] = float(fields[2]), float(fields[3])
            lo[i], hi[i] = float(fields[4]), float(fields[5])
            seen.add(i)
        if seen != set(range(FEATURE_COUNT)):
            raise ValueError(f"{path}: expected rows for all {FEATURE_COUNT} features")
        return cls(mean=mean, std=std, slider_lo=lo, slider_hi=hi, sample_count=sample_count)


def _check_variance(mean: np.ndarray, std: np.ndarray):
    # treat near-machine-epsilon spread of a constant column as zero variance
    floor = 1e-9 * (1.0 + np.abs(mean))
    degenerate = ~np.isfinite(std) | (std <= floor)
    if np.any(degenerate):
        bad = int(np.argmax(degenerate))
        raise DegenerateStatisticsError(
            f"feature {bad} ({feature_names()[bad]}) has no variance in the sample"
        )


def fit_stats(raw_features: np.ndarray) -> FeatureStats:
    """Fit per-feature statistics from an (N, 23) matrix of raw values.

    Uses the sample standard deviation (N-1 denominator).  Raises
    DegenerateStatisticsError when a feature column has no variance.
    """
    raw = np.asarray(raw_features, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[1] != FEATURE_COUNT:
        raise ValueError(f"expected (N, {FEATURE_COUNT}) features, got {raw.shape}")
    if raw.shape[0] < 2:
        raise ValueError("need at least 2 samples to fit statistics")
    mean = raw.mean(axis=0)
    std = raw.std(axis=0, ddof=1)
    _check_variance(mean, std)
    normed = (raw - mean) / std
    lo = np.percentile(normed, SLIDER_LO_PCT, axis=0)
    hi = np.percentile(normed, SLIDER_HI_PCT, axis=0)
    return FeatureStats(mean=mean, std=std, slider_lo=lo, slider_hi=hi,
                        sample_count=raw.shape[0])


def correlation_matrix(raw_features: np.ndarray) -> np.ndarray:
    """Pearson correlation between feature columns: (23, 23), unit diagonal."""
    raw = np.asarray(raw_features, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[1] != FEATURE_COUNT:
        raise ValueError(f"expected (N, {FEATURE_COUNT}) features, got {raw.shape}")
    if raw.shape[0] < 2:
        raise ValueError("need at least 2 samples for correlations")
    _check_variance(raw.mean(axis=0), raw.std(axis=0, ddof=1))
    corr = np.corrcoef(raw, rowvar=False)
    corr = (corr + corr.T) / 2.0
    np.fill_diagonal(corr, 1.0)
    return np.clip(corr, -1.0, 1.0)


def save_correlation(corr: np.ndarray, path):
    corr = np.asarray(corr, dtype=np.float64)
    if corr.shape != (FEATURE_COUNT, FEATURE_COUNT):
        raise ValueError(f"expected ({FEATURE_COUNT}, {FEATURE_COUNT}) matrix, got {corr.shape}")
    path = Path(path)
    lines = [f"# {CORR_FORMAT}"]
    for row in corr:
        lines.append("\t".join(repr(float(v)) for v in row))
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text("\n".join(lines) + "\n")
    tmp.replace(path)


def load_correlation(path) -> np.ndarray:
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != f"# {CORR_FORMAT}":
        raise ValueError(f"{path}: not a {CORR_FORMAT} file")
    rows = [[float(v) for v in line.split("\t")]
            for line in lines[1:] if line.strip() and not line.startswith("#")]
    corr = np.array(rows, dtype=np.float64)
    if corr.shape != (FEATURE_COUNT, FEATURE_COUNT):
        raise ValueError(f"{path}: expected ({FEATURE_COUNT}, {FEATURE_COUNT}) matrix")
    return corr
