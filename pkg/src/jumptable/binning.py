"""Histogram-binning jump-table modeler with per-dataset bin-count selection."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from jumptable.device import ConductanceBounds, DeviceDataset, Profile

DEFAULT_BIN_COUNTS = (4, 8, 16, 32, 64)
DEFAULT_CANDIDATE_GRID = tuple(itertools.product(DEFAULT_BIN_COUNTS, DEFAULT_BIN_COUNTS))

# Models averaging fewer samples than this per occupied G bin are flagged.
MIN_CONFIDENT_SAMPLES_PER_BIN = 30


@dataclass(frozen=True)
class BinningConfig:
    g_bins: int
    dg_bins: int
    min_samples_per_bin: int = 2

    def __post_init__(self):
        if self.g_bins < 2 or self.dg_bins < 2:
            raise ValueError("g_bins and dg_bins must both be at least 2")
        if self.min_samples_per_bin < 1:
            raise ValueError("min_samples_per_bin must be at least 1")

    @property
    def total_bins(self) -> int:
        return self.g_bins + self.dg_bins


@dataclass(frozen=True, eq=False)
class BinnedSummary:
    g_centers: np.ndarray
    dg_centers: np.ndarray
    per_bin_mu: np.ndarray
    per_bin_sigma: np.ndarray
    per_bin_count: np.ndarray
    per_bin_cdf: np.ndarray  # shape (g_bins, dg_bins); rows of empty bins are all zero
    occupied: np.ndarray     # bins holding at least min_samples_per_bin samples


@dataclass(frozen=True)
class BinningModel:
    profile: Profile
    config: BinningConfig
    summary: BinnedSummary
    low_confidence: bool


def _bin_index(values: np.ndarray, lo: float, hi: float, n: int) -> np.ndarray:
    if hi <= lo:
        return np.zeros(values.size, dtype=np.intp)
    idx = np.floor((values - lo) / (hi - lo) * n).astype(np.intp)
    # the right edge belongs to the last bin
    return np.clip(idx, 0, n - 1)


def bin2d(d: DeviceDataset, cfg: BinningConfig) -> BinnedSummary:
    # canonical order makes the floating-point sums independent of input order
    order = np.lexsort((d.delta_g, d.g))
    g, dg = d.g[order], d.delta_g[order]
    g_lo, g_hi = float(g.min()), float(g.max())
    dg_lo, dg_hi = float(dg.min()), float(dg.max())
    gi = _bin_index(g, g_lo, g_hi, cfg.g_bins)
    di = _bin_index(dg, dg_lo, dg_hi, cfg.dg_bins)

    g_edges = np.linspace(g_lo, g_hi, cfg.g_bins + 1)
    dg_edges = np.linspace(dg_lo, dg_hi, cfg.dg_bins + 1)
    g_centers = 0.5 * (g_edges[:-1] + g_edges[1:])
    dg_centers = 0.5 * (dg_edges[:-1] + dg_edges[1:])

    hist = np.zeros((cfg.g_bins, cfg.dg_bins), dtype=np.int64)
    np.add.at(hist, (gi, di), 1)
    count = hist.sum(axis=1)

    # per-bin maximum-likelihood Gaussian parameters from the raw samples
    safe = np.maximum(count, 1)
    mu = np.bincount(gi, weights=dg, minlength=cfg.g_bins) / safe
    resid = dg - mu[gi]
    var = np.bincount(gi, weights=resid * resid, minlength=cfg.g_bins) / safe
    sigma = np.sqrt(var)

    cdf = np.zeros(hist.shape, dtype=np.float64)
    nz = count > 0
    cdf[nz] = np.cumsum(hist[nz], axis=1) / count[nz, None]
    cdf[nz, -1] = 1.0

    occupied = count >= cfg.min_samples_per_bin
    return BinnedSummary(g_centers, dg_centers, mu, sigma, count, cdf, occupied)


def fit_profiles(summary: BinnedSummary) -> Profile:
    """Gaussian (mu, sigma) per occupied G bin, linearly interpolated between bins.

    Unoccupied bins are dropped from the knot list rather than imputed.
    """
    occ = summary.occupied
    if np.count_nonzero(occ) < 2:
        raise ValueError("binning needs at least two occupied G bins")
    return Profile.from_values(summary.g_centers[occ], summary.per_bin_mu[occ],
                               summary.per_bin_sigma[occ])


def build_binning_model(d: DeviceDataset, cfg: BinningConfig, bounds: ConductanceBounds) -> BinningModel:
    summary = bin2d(d, cfg)
    profile = fit_profiles(summary).extended_to(bounds)
    occupied = int(np.count_nonzero(summary.occupied))
    low_conf = len(d) / occupied < MIN_CONFIDENT_SAMPLES_PER_BIN
    return BinningModel(profile, cfg, summary, low_conf)


def optimize_bins(d: DeviceDataset, bounds: ConductanceBounds, candidate_grid, rng: np.random.Generator,
                  return_scores: bool = False):
    """Pick the bin counts whose model best reproduces a held-out half of the data.

    The data is split 50/50; each candidate is fitted on the first half,
    an equal-size dataset is synthesized from it and scored with the 2D KS
    statistic against the second half. Ties go to fewer total bins.
    """
    from jumptable.metrics import ks2d
    from jumptable.synthetic import generate_synthetic_data

    candidates = [c if isinstance(c, BinningConfig) else BinningConfig(*c) for c in candidate_grid]
    if not candidates:
        raise ValueError("candidate grid must not be empty")
    if len(candidates) == 1 and not return_scores:
        return candidates[0]

    model_half, valid_half = d.split(rng)
    synth_seed = int(rng.integers(2**63))
    scores = []
    for cfg in candidates:
        try:
            model = build_binning_model(model_half, cfg, bounds)
        except ValueError:
            scores.append(np.inf)
            continue
        # same synthesis stream for every candidate keeps the comparison paired
        synth = generate_synthetic_data(len(model_half), bounds, model.profile,
                                        np.random.default_rng(synth_seed))
        scores.append(ks2d(synth, valid_half))

    best = min(range(len(candidates)), key=lambda i: (scores[i], candidates[i].total_bins, i))
    if return_scores:
        return candidates[best], dict(zip(candidates, scores))
    return candidates[best]
