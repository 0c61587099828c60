"""Jump-table device model: conductance bounds, (mu, sigma) profiles and pulse sampling.

A jump table describes, for every conductance state G, a Gaussian distribution
of the conductance change produced by one programming pulse. Two tables are
needed per device, one for SET (potentiation) and one for RESET (depression).
All conductances are in nS.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

# Rational approximation of the standard normal quantile (Acklam),
# relative error below 1.15e-9 over the open unit interval.
_A = (-3.969683028665376e01, 2.209460984245205e02, -2.759285104469687e02,
      1.383577518672690e02, -3.066479806614716e01, 2.506628277459239e00)
_B = (-5.447609879822406e01, 1.615858368580409e02, -1.556989798598866e02,
      6.680131188771972e01, -1.328068155288572e01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e00,
      -2.549732539343734e00, 4.374664141464968e00, 2.938163982698783e00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e00,
      3.754408661907416e00)
_P_LOW = 0.02425


def norm_ppf(u):
    """Standard normal quantile function, vectorized.

    Accepts scalars or arrays with every entry strictly inside (0, 1).
    Returns a float for scalar input.
    """
    u_arr = np.asarray(u, dtype=np.float64)
    if np.any(~((u_arr > 0.0) & (u_arr < 1.0))):
        raise ValueError("quantile argument must lie in the open interval (0, 1)")
    scalar = u_arr.ndim == 0
    u_arr = np.atleast_1d(u_arr)
    out = np.empty_like(u_arr)

    lo = u_arr < _P_LOW
    hi = u_arr > 1.0 - _P_LOW
    mid = ~(lo | hi)

    q = u_arr[mid] - 0.5
    r = q * q
    num = (((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]) * q
    den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
    out[mid] = num / den

    for mask, sign, tail in ((lo, 1.0, u_arr[lo]), (hi, -1.0, 1.0 - u_arr[hi])):
        if not np.any(mask):
            continue
        q = np.sqrt(-2.0 * np.log(tail))
        num = ((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q + _C[4]) * q + _C[5]
        den = (((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0
        out[mask] = sign * num / den

    return float(out[0]) if scalar else out


def open_uniform(rng: np.random.Generator, size=None):
    """Uniform variates on the open interval (0, 1)."""
    u = rng.random(size)
    # Generator.random() is on [0, 1); only the zero endpoint needs moving.
    return np.where(u == 0.0, np.nextafter(0.0, 1.0), u) if size is not None else (
        u if u > 0.0 else float(np.nextafter(0.0, 1.0)))


class Direction(enum.Enum):
    SET = "set"
    RESET = "reset"

    @property
    def sign(self) -> int:
        return 1 if self is Direction.SET else -1


@dataclass(frozen=True)
class ConductanceBounds:
    g_min: float = 3.0
    g_max: float = 38.0

    def __post_init__(self):
        if not (math.isfinite(self.g_min) and math.isfinite(self.g_max)):
            raise ValueError("conductance bounds must be finite")
        if self.g_min <= 0:
            raise ValueError(f"g_min must be positive, got {self.g_min}")
        if not self.g_min < self.g_max:
            raise ValueError(f"need g_min < g_max, got {self.g_min} >= {self.g_max}")

    @property
    def span(self) -> float:
        return self.g_max - self.g_min

    def clip(self, g):
        return np.clip(g, self.g_min, self.g_max)

    def clip_delta(self, g, delta_g):
        """Conductance changes clipped so that g + delta_g stays inside the bounds."""
        g = np.asarray(g, dtype=np.float64)
        dg = self.clip(g + np.asarray(delta_g, dtype=np.float64)) - g
        # g + (bound - g) can miss the bound by one ulp.
        dg = np.where(g + dg > self.g_max, np.nextafter(dg, -np.inf), dg)
        dg = np.where(g + dg < self.g_min, np.nextafter(dg, np.inf), dg)
        return dg

    def contains(self, g) -> bool:
        g = np.asarray(g)
        return bool(np.all((g >= self.g_min) & (g <= self.g_max)))


def _frozen_array(values) -> np.ndarray:
    arr = np.array(values, dtype=np.float64)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Profile:
    """Mean and standard-deviation profiles on a shared knot axis.

    Between knots the profile is linearly interpolated; outside the knot
    range it holds the nearest endpoint value.
    """

    knots: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        knots, mu, sigma = (_frozen_array(v) for v in (self.knots, self.mu, self.sigma))
        if knots.ndim != 1 or knots.size < 2:
            raise ValueError("a profile needs at least two knots")
        if mu.shape != knots.shape or sigma.shape != knots.shape:
            raise ValueError("knots, mu and sigma must have equal length")
        if not np.all(np.isfinite(knots)) or not np.all(np.isfinite(mu)) or not np.all(np.isfinite(sigma)):
            raise ValueError("profile values must be finite")
        if np.any(np.diff(knots) <= 0):
            raise ValueError("knots must be strictly increasing")
        if np.any(sigma < 0):
            raise ValueError("sigma values must be non-negative")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)

    @classmethod
    def from_values(cls, knots, mu, sigma) -> "Profile":
        """Build a profile, clamping slightly negative fitted sigma values to zero."""
        return cls(knots, mu, np.maximum(np.asarray(sigma, dtype=np.float64), 0.0))

    @classmethod
    def linear(cls, bounds: ConductanceBounds, mu_endpoints, sigma: float) -> "Profile":
        """Two-knot profile with linear mean and constant sigma across the bounds."""
        return cls([bounds.g_min, bounds.g_max], list(mu_endpoints), [sigma, sigma])

    def evaluate(self, g):
        """Vectorized (mu, sigma) at conductance(s) g."""
        mu = np.interp(g, self.knots, self.mu)
        sigma = np.maximum(np.interp(g, self.knots, self.sigma), 0.0)
        return mu, sigma

    def scaled_mean(self, k: float) -> "Profile":
        return Profile(self.knots, k * self.mu, self.sigma)

    def extended_to(self, bounds: ConductanceBounds) -> "Profile":
        """Add endpoint knots so the profile covers the bounds (values held constant)."""
        knots, mu, sigma = list(self.knots), list(self.mu), list(self.sigma)
        if knots[0] > bounds.g_min:
            knots.insert(0, bounds.g_min)
            mu.insert(0, mu[0])
            sigma.insert(0, sigma[0])
        if knots[-1] < bounds.g_max:
            knots.append(bounds.g_max)
            mu.append(mu[-1])
            sigma.append(sigma[-1])
        return Profile(knots, mu, sigma)

    def __eq__(self, other):
        if not isinstance(other, Profile):
            return NotImplemented
        return (np.array_equal(self.knots, other.knots) and np.array_equal(self.mu, other.mu)
                and np.array_equal(self.sigma, other.sigma))

    def __hash__(self):
        return hash((self.knots.tobytes(), self.mu.tobytes(), self.sigma.tobytes()))


@dataclass(frozen=True)
class JumpTablePair:
    set_table: Profile
    reset_table: Profile
    bounds: ConductanceBounds = field(default_factory=ConductanceBounds)

    def __post_init__(self):
        for name, table in (("set", self.set_table), ("reset", self.reset_table)):
            if table.knots[0] > self.bounds.g_min or table.knots[-1] < self.bounds.g_max:
                raise ValueError(
                    f"{name} table knots [{table.knots[0]}, {table.knots[-1]}] do not span "
                    f"the bounds [{self.bounds.g_min}, {self.bounds.g_max}]"
                )

    def table(self, direction: Direction) -> Profile:
        return self.set_table if direction is Direction.SET else self.reset_table


@dataclass(frozen=True, eq=False)
class DeviceDataset:
    """(G, dG) measurements for one switching direction, optionally tagged with a pulse voltage."""

    g: np.ndarray
    delta_g: np.ndarray
    voltage: Optional[float] = None

    def __post_init__(self):
        g = _frozen_array(self.g)
        dg = _frozen_array(self.delta_g)
        if g.ndim != 1 or g.shape != dg.shape:
            raise ValueError("g and delta_g must be 1-D arrays of equal length")
        if g.size == 0:
            raise ValueError("a device dataset must not be empty")
        if not (np.all(np.isfinite(g)) and np.all(np.isfinite(dg))):
            raise ValueError("device dataset contains non-finite values")
        object.__setattr__(self, "g", g)
        object.__setattr__(self, "delta_g", dg)

    def __len__(self) -> int:
        return self.g.size

    def __eq__(self, other):
        if not isinstance(other, DeviceDataset):
            return NotImplemented
        return (np.array_equal(self.g, other.g) and np.array_equal(self.delta_g, other.delta_g)
                and self.voltage == other.voltage)

    @property
    def samples(self) -> np.ndarray:
        return np.column_stack([self.g, self.delta_g])

    def subset(self, idx) -> "DeviceDataset":
        return DeviceDataset(self.g[idx], self.delta_g[idx], self.voltage)

    def within(self, bounds: ConductanceBounds) -> bool:
        return bounds.contains(self.g) and bounds.contains(self.g + self.delta_g)

    def split(self, rng: np.random.Generator, fraction: float = 0.5):
        """Random non-overlapping (first, second) split; `fraction` goes to the first part."""
        if len(self) < 2:
            raise ValueError("need at least two samples to split")
        perm = rng.permutation(len(self))
        cut = min(max(int(round(fraction * len(self))), 1), len(self) - 1)
        return self.subset(np.sort(perm[:cut])), self.subset(np.sort(perm[cut:]))


def eval_profile(p: Profile, g: float) -> tuple[float, float]:
    if not math.isfinite(g):
        raise ValueError("conductance must be finite")
    mu, sigma = p.evaluate(g)
    return float(mu), float(sigma)


def sample_delta_g(p: Profile, g, u):
    """Inverse-CDF draw of the conductance change at state g for uniform variate u."""
    mu, sigma = p.evaluate(g)
    dg = mu + sigma * norm_ppf(u)
    return float(dg) if np.ndim(dg) == 0 else dg


def apply_pulse(table: JumpTablePair, direction: Direction, g, u):
    """One programming pulse; the result is clipped into the conductance bounds.

    Vectorizes over array-valued g and u.
    """
    bounds = table.bounds
    if not bounds.contains(g):
        raise ValueError(f"conductance outside bounds [{bounds.g_min}, {bounds.g_max}]")
    g_next = bounds.clip(np.asarray(g, dtype=np.float64) + sample_delta_g(table.table(direction), g, u))
    return float(g_next) if np.ndim(g_next) == 0 else g_next


def trajectory(table: JumpTablePair, direction: Direction, g_start: float, n_pulses: int,
               rng: np.random.Generator) -> list[float]:
    if n_pulses < 0:
        raise ValueError("n_pulses must be non-negative")
    out = [float(g_start)]
    g = float(g_start)
    for u in open_uniform(rng, n_pulses):
        g = apply_pulse(table, direction, g, u)
        out.append(g)
    return out
