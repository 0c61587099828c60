"""Target jump tables from analytic profiles and synthetic (G, dG) data generation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from jumptable.device import ConductanceBounds, DeviceDataset, JumpTablePair, Profile

# NeuroSim-style saturating device (Ag:Si defaults): non-linearity 2.4 (SET),
# -4.88 (RESET), 500 levels, bounds 3..38 nS. Frozen output of
# `neurosim_mean_endpoints()`; mean dG at (g_min, g_max) in nS.
ANALYTIC_SET_ENDPOINTS = (0.1843184355755158, 0.016720991228917348)
ANALYTIC_RESET_ENDPOINTS = (-0.0026022864158652334, -0.34254068854141556)
ANALYTIC_C2C = 0.035


def sigma_from_c2c(c2c: float, bounds: ConductanceBounds) -> float:
    """Constant per-pulse standard deviation for a cycle-to-cycle fraction of the range."""
    if c2c < 0:
        raise ValueError("c2c must be non-negative")
    return c2c * (bounds.g_max - bounds.g_min)


def c2c_from_sigma(sigma: float, bounds: ConductanceBounds) -> float:
    return sigma / (bounds.g_max - bounds.g_min)


def neurosim_trajectory(bounds: ConductanceBounds, nonlinearity: float, levels: int = 500) -> np.ndarray:
    """Deterministic saturating conductance trajectory over `levels` pulses.

    Positive non-linearity gives a potentiation curve starting at g_min,
    negative a depression curve starting at g_max. The curvature constant is
    levels/|nonlinearity| pulses.
    """
    if nonlinearity == 0:
        raise ValueError("non-linearity must be non-zero")
    a = levels / abs(nonlinearity)
    b = bounds.span / (1.0 - np.exp(-levels / a))
    p = np.arange(levels + 1, dtype=np.float64)
    rise = b * (1.0 - np.exp(-p / a))
    return bounds.g_min + rise if nonlinearity > 0 else bounds.g_max - rise


def neurosim_mean_endpoints(bounds: ConductanceBounds = ConductanceBounds(),
                            nl_set: float = 2.4, nl_reset: float = -4.88, levels: int = 500):
    """Least-squares line through noiseless (G, dG) pairs, evaluated at the bounds.

    Returns ((set_at_gmin, set_at_gmax), (reset_at_gmin, reset_at_gmax)).
    """
    out = []
    for nl in (nl_set, nl_reset):
        traj = neurosim_trajectory(bounds, nl, levels)
        slope, intercept = np.polyfit(traj[:-1], np.diff(traj), 1)
        out.append((intercept + slope * bounds.g_min, intercept + slope * bounds.g_max))
    return tuple(out)


@dataclass(frozen=True)
class TargetSpec:
    bounds: ConductanceBounds = field(default_factory=ConductanceBounds)
    c2c: float = ANALYTIC_C2C
    nonlinearity_k: float = 1.0
    set_mean_endpoints: tuple = ANALYTIC_SET_ENDPOINTS
    reset_mean_endpoints: tuple = ANALYTIC_RESET_ENDPOINTS

    def __post_init__(self):
        if self.c2c < 0:
            raise ValueError("c2c must be non-negative")
        if not self.nonlinearity_k > 0:
            raise ValueError("nonlinearity_k must be positive")
        if min(self.set_mean_endpoints) < 0:
            raise ValueError("SET mean endpoints must be >= 0")
        if max(self.reset_mean_endpoints) > 0:
            raise ValueError("RESET mean endpoints must be <= 0")

    @classmethod
    def from_sigma(cls, sigma: float, **kw) -> "TargetSpec":
        bounds = kw.get("bounds", ConductanceBounds())
        return cls(c2c=c2c_from_sigma(sigma, bounds), **kw)

    @property
    def sigma(self) -> float:
        return sigma_from_c2c(self.c2c, self.bounds)


def build_target_tables(spec: TargetSpec) -> JumpTablePair:
    sigma = spec.sigma
    k = spec.nonlinearity_k
    set_table = Profile.linear(spec.bounds, [k * v for v in spec.set_mean_endpoints], sigma)
    reset_table = Profile.linear(spec.bounds, [k * v for v in spec.reset_mean_endpoints], sigma)
    return JumpTablePair(set_table, reset_table, spec.bounds)


def generate_synthetic_data(n: int, bounds: ConductanceBounds, profile: Profile,
                            rng: np.random.Generator, voltage=None) -> DeviceDataset:
    """Draw n (G, dG) pairs: G uniform over the bounds, dG Gaussian from the profile.

    dG is clipped so that G + dG stays inside the bounds.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    g = rng.uniform(bounds.g_min, bounds.g_max, n)
    mu, sigma = profile.evaluate(g)
    dg = mu + sigma * rng.standard_normal(n)
    dg = bounds.clip_delta(g, dg)
    return DeviceDataset(g, dg, voltage)
