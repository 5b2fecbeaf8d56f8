"""
Test utilities for the under-reporting audit tests.
"""

import json
import os
from typing import Optional, Sequence

import numpy as np

from underreporting.models import Dataset, GaussianPopulation, LinearModel
from underreporting.services.estimate import MomentSet

EXAMPLE_SIGMA = [[1.0, 0.5], [0.5, 1.0]]


def example_population(beta: Sequence[float] = (1.0, 1.0), m0: float = 0.5, m1: float = 0.5,
                       mu: Sequence[float] = (0.0, 0.0), r: float = 0.5) -> GaussianPopulation:
    """The two-feature example: unit variances, covariance 0.5, feature 1 under-reported."""
    return GaussianPopulation(
        mu=list(mu),
        sigma=EXAMPLE_SIGMA,
        alpha=0.0,
        beta=list(beta),
        r=r,
        m0=[m0, 1.0],
        m1=[m1, 1.0],
    )


def example_moments(beta: Sequence[float] = (1.0, 1.0), m: float = 0.5):
    """(MomentSet, true model) of the two-feature example."""
    return MomentSet([0.0, 0.0], EXAMPLE_SIGMA, m), LinearModel(0.0, list(beta))


def random_population(rng: np.random.Generator, d: int, orthogonal_tail: bool = True) -> GaussianPopulation:
    """Random Gaussian population; with orthogonal_tail features 2..d are uncorrelated."""
    mu = rng.normal(0.0, 2.0, d)
    if orthogonal_tail:
        variances = rng.uniform(0.2, 3.0, d)
        direction = rng.normal(size=d - 1)
        direction /= max(np.linalg.norm(direction), 1e-12)
        rho = direction * rng.uniform(0.0, 0.95)
        sigma = np.diag(variances)
        sigma[0, 1:] = rho * np.sqrt(variances[0] * variances[1:])
        sigma[1:, 0] = sigma[0, 1:]
    else:
        A = rng.normal(size=(d, d))
        sigma = A @ A.T + 0.5 * np.eye(d)
    beta = rng.normal(0.0, 1.0, d)
    beta[0] = rng.choice([-1.0, 1.0]) * rng.uniform(0.2, 2.0)
    rates0 = np.ones(d)
    rates1 = np.ones(d)
    rates0[0] = rng.uniform(0.05, 1.0)
    rates1[0] = rng.uniform(0.05, 1.0)
    return GaussianPopulation(mu, sigma, rng.normal(), beta, rng.uniform(0.1, 0.9), rates0, rates1)


def linear_dataset(n: int, seed: int = 0, beta: Sequence[float] = (1.0, -0.5, 0.25),
                   alpha: float = 0.5, mu: Optional[Sequence[float]] = None) -> Dataset:
    """Fully reported Gaussian features with a noiseless linear outcome and a Bernoulli(0.4) group."""
    rng = np.random.default_rng(seed)
    d = len(beta)
    mu = np.zeros(d) if mu is None else np.asarray(mu, dtype=float)
    X = mu + rng.standard_normal((n, d))
    G = (rng.random(n) < 0.4).astype(float)
    return Dataset(X=X, G=G, Y=alpha + X @ np.asarray(beta), feature_names=tuple(f"x{j + 1}" for j in range(d)))


def write_text(path: str, text: str) -> str:
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)
    return path


def write_json(path: str, payload) -> str:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f)
    return path


def write_labelled_csv(directory: str, n: int = 400, seed: int = 0) -> str:
    """CSV with three numeric features, a text group column and a binary label."""
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 3)) + np.array([2.0, 0.0, 1.0])
    group = np.where(rng.random(n) < 0.5, "A", "B")
    logits = -0.5 + X @ np.array([0.8, -0.6, 0.4])
    label = (rng.random(n) < 1.0 / (1.0 + np.exp(-logits))).astype(int)
    lines = ["priors,age,score,race,outcome"]
    lines += [f"{a!r},{b!r},{c!r},{g},{y}" for (a, b, c), g, y in zip(X.tolist(), group, label)]
    return write_text(os.path.join(directory, "data.csv"), "\n".join(lines) + "\n")


LABELLED_SCHEMA = {
    "features": ["priors", "age", "score"],
    "group": "race",
    "group_map": {"A": 0, "B": 1},
    "binary_label": "outcome",
}
