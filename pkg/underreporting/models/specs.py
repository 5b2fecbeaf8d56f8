"""
Settings objects for corruption, selection policies and outcome noise.
"""

from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from underreporting.errors import UnderReportingError

MAX_SEED = 2 ** 64


@dataclass(frozen=True)
class UnderReportingConfig:
    """Under-reporting of one feature column, with one rate per group."""

    feature_index: int
    rate_g0: float
    rate_g1: float
    seed: int = 0

    def __post_init__(self):
        for name, rate in (("rate_g0", self.rate_g0), ("rate_g1", self.rate_g1)):
            if not 0.0 <= rate <= 1.0:
                raise UnderReportingError(f"{name}={rate} is not a probability in [0,1]", "validation_error")
        if self.feature_index < 0:
            raise UnderReportingError(f"Invalid feature index {self.feature_index}", "validation_error")
        if not 0 <= self.seed < MAX_SEED:
            raise UnderReportingError(f"Seed {self.seed} is not a 64-bit unsigned integer", "validation_error")

    def rate(self, g: int) -> float:
        """Under-reporting probability of group g."""
        return self.rate_g1 if g == 1 else self.rate_g0


def default_grid() -> Tuple[float, ...]:
    return tuple(round(c, 2) for c in np.arange(0.05, 0.951, 0.05))


@dataclass(frozen=True)
class SelectionPolicy:
    """Overall selection share C and the grid of shares used for curves."""

    C: float = 0.2
    grid: Tuple[float, ...] = field(default_factory=default_grid)

    def __post_init__(self):
        object.__setattr__(self, "grid", tuple(float(c) for c in self.grid))
        if not 0.0 < self.C < 1.0:
            raise UnderReportingError(f"Selection share C={self.C} must lie in (0,1)", "validation_error")
        grid = np.asarray(self.grid)
        if grid.size and (np.any(grid <= 0.0) or np.any(grid >= 1.0)):
            raise UnderReportingError("Grid shares must lie in (0,1)", "validation_error")
        if np.any(np.diff(grid) <= 0.0):
            raise UnderReportingError("Grid of selection shares must be strictly increasing", "validation_error")


@dataclass(frozen=True)
class NoiseSpec:
    """Target R^2 of the true linear model after adding Gaussian outcome noise."""

    target_r2: float
    seed: int = 0
    sigma_sq: Optional[float] = None

    def __post_init__(self):
        if not 0.0 < self.target_r2 <= 1.0:
            raise UnderReportingError(f"target_r2={self.target_r2} must lie in (0,1]", "validation_error")
        if self.sigma_sq is not None:
            if self.sigma_sq < 0.0:
                raise UnderReportingError("Noise variance must be non-negative", "validation_error")
            if (self.sigma_sq == 0.0) != (self.target_r2 == 1.0):
                raise UnderReportingError("Noise variance is zero exactly when target_r2 = 1", "validation_error")

    def derive_sigma_sq(self, fitted_variance: float) -> float:
        """sigma^2 = ((1 - R^2) / R^2) * Var(alpha + beta^T z)."""
        return (1.0 - self.target_r2) / self.target_r2 * fitted_variance
