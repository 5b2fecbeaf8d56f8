"""
Model for a jointly Gaussian population with group-dependent reporting rates.
"""

import logging
from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence

import numpy as np

from underreporting.errors import UnderReportingError
from underreporting.models.dataset import Dataset
from underreporting.models.linear_model import LinearModel

logger = logging.getLogger(__name__)

PD_TOLERANCE = 1e-10


def _readonly(values: Sequence[float]) -> np.ndarray:
    array = np.array(values, dtype=float, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class GaussianPopulation:
    """Z ~ N(mu, sigma), G ~ Bern(r), Y = alpha + beta^T Z.

    m0 and m1 hold the per-feature reporting rates of groups 0 and 1
    (1 - m is the under-reporting rate).
    """

    mu: np.ndarray
    sigma: np.ndarray
    alpha: float
    beta: np.ndarray
    r: float = 0.5
    m0: Optional[np.ndarray] = None
    m1: Optional[np.ndarray] = None

    def __post_init__(self):
        mu = _readonly(self.mu).reshape(-1)
        d = mu.size
        sigma = _readonly(self.sigma)
        beta = _readonly(self.beta).reshape(-1)
        m0 = _readonly(np.ones(d) if self.m0 is None else self.m0).reshape(-1)
        m1 = _readonly(np.ones(d) if self.m1 is None else self.m1).reshape(-1)
        for name, value in (("mu", mu), ("sigma", sigma), ("beta", beta), ("m0", m0), ("m1", m1)):
            object.__setattr__(self, name, value)
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "r", float(self.r))

        if sigma.shape != (d, d) or beta.size != d or m0.size != d or m1.size != d:
            raise UnderReportingError(
                f"Population dimensions disagree: mu {d}, sigma {sigma.shape}, beta {beta.size}, "
                f"m0 {m0.size}, m1 {m1.size}",
                "validation_error",
            )
        if not np.allclose(sigma, sigma.T, atol=PD_TOLERANCE, rtol=0.0):
            raise UnderReportingError("Covariance matrix is not symmetric", "validation_error")
        eigenvalues = np.linalg.eigvalsh(sigma)
        if eigenvalues.min() <= PD_TOLERANCE * max(1.0, eigenvalues.max()):
            raise UnderReportingError(
                f"Covariance matrix is not positive definite (smallest eigenvalue {eigenvalues.min():.3g})",
                "validation_error",
            )
        if not 0.0 <= self.r <= 1.0:
            raise UnderReportingError(f"Group prevalence r={self.r} outside [0,1]", "validation_error")
        for name, rates in (("m0", m0), ("m1", m1)):
            if np.any(rates <= 0.0) or np.any(rates > 1.0):
                raise UnderReportingError(f"Reporting rates {name} must lie in (0,1]", "validation_error")

    @property
    def d(self) -> int:
        return int(self.mu.size)

    @property
    def true_model(self) -> LinearModel:
        return LinearModel(alpha=self.alpha, beta=self.beta)

    def rates(self, g: int) -> np.ndarray:
        """Reporting-rate vector of group g."""
        return self.m1 if g == 1 else self.m0

    def blended_rate(self, feature: int) -> float:
        """E[xi] for a feature: r*m1 + (1-r)*m0."""
        return float(self.r * self.m1[feature] + (1.0 - self.r) * self.m0[feature])

    def sample(self, n: int, seed: Optional[int] = None) -> Dataset:
        """Draw n rows from the population.

        Args:
            n: Number of rows
            seed: Seed for numpy's default generator

        Returns:
            Dataset holding Z, the mask, X = Z*mask, G and Y = alpha + beta^T Z
        """
        rng = np.random.default_rng(seed)
        chol = np.linalg.cholesky(self.sigma)
        Z = self.mu + rng.standard_normal((n, self.d)) @ chol.T
        G = (rng.random(n) < self.r).astype(float)
        rates = np.where(G[:, None] == 1.0, self.m1[None, :], self.m0[None, :])
        mask = (rng.random((n, self.d)) < rates).astype(float)
        Y = self.alpha + Z @ self.beta
        return Dataset(
            X=Z * mask,
            G=G,
            feature_names=tuple(f"z{j + 1}" for j in range(self.d)),
            Y=Y,
            Z=Z,
            xi_mask=mask,
            provenance={"source": "gaussian_population", "seed": seed},
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "mu": self.mu.tolist(),
            "sigma": self.sigma.tolist(),
            "alpha": self.alpha,
            "beta": self.beta.tolist(),
            "r": self.r,
            "m0": self.m0.tolist(),
            "m1": self.m1.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "GaussianPopulation":
        """Build a population from a moments mapping (as read from JSON)."""
        try:
            return cls(
                mu=data["mu"],
                sigma=data["sigma"],
                alpha=data.get("alpha", 0.0),
                beta=data["beta"],
                r=data.get("r", 0.5),
                m0=data.get("m0"),
                m1=data.get("m1"),
            )
        except KeyError as e:
            raise UnderReportingError(f"Population definition is missing {e}", "config_error", e)
