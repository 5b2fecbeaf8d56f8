"""
Model for a linear predictor y = alpha + beta^T x.
"""

from dataclasses import dataclass
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from underreporting.errors import UnderReportingError


@dataclass(frozen=True, eq=False)
class LinearModel:
    """Intercept and coefficient vector of a linear predictor."""

    alpha: float
    beta: np.ndarray
    feature_names: Tuple[str, ...] = ()

    def __post_init__(self):
        beta = np.array(self.beta, dtype=float, copy=True).reshape(-1)
        beta.setflags(write=False)
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "beta", beta)
        names = tuple(self.feature_names) or tuple(f"x{j + 1}" for j in range(beta.size))
        object.__setattr__(self, "feature_names", names)

    @property
    def d(self) -> int:
        return int(self.beta.size)

    def predict(self, X: np.ndarray) -> np.ndarray:
        """Apply the model to the rows of X.

        Args:
            X: n x d matrix (or a single length-d row)

        Returns:
            Predictions, one per row
        """
        X = np.asarray(X, dtype=float)
        if X.shape[-1] != self.d:
            raise UnderReportingError(
                f"Model has {self.d} coefficients but data has {X.shape[-1]} features",
                "validation_error",
            )
        return self.alpha + X @ self.beta

    def with_coefficients(self, alpha: Optional[float] = None, beta: Optional[Sequence[float]] = None) -> "LinearModel":
        return LinearModel(
            alpha=self.alpha if alpha is None else alpha,
            beta=self.beta if beta is None else beta,
            feature_names=self.feature_names,
        )

    def to_dict(self) -> Dict[str, Any]:
        return {
            "alpha": self.alpha,
            "beta": [float(b) for b in self.beta],
            "feature_names": list(self.feature_names),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "LinearModel":
        try:
            return cls(alpha=data["alpha"], beta=data["beta"], feature_names=tuple(data.get("feature_names", ())))
        except KeyError as e:
            raise UnderReportingError(f"Linear model definition is missing {e}", "config_error", e)
