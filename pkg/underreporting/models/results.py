"""
Result records produced by the fairness and mitigation services.
"""

from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional


@dataclass(frozen=True)
class ExcessSelectionResult:
    """Excess selection rate Delta(g, C) of both groups at one selection share."""

    C: float
    delta: Dict[int, float]
    rate_corrupted: Dict[int, float]
    rate_reference: Dict[int, float]
    threshold_corrupted: float
    threshold_reference: float
    tie_flag: bool = False

    def to_rows(self) -> List[Dict[str, Any]]:
        """Long-format rows, one per group."""
        return [
            {
                "C": self.C,
                "group": g,
                "rate_corrupted": self.rate_corrupted[g],
                "rate_reference": self.rate_reference[g],
                "delta": self.delta[g],
                "threshold_corrupted": self.threshold_corrupted,
                "threshold_reference": self.threshold_reference,
                "tie_flag": self.tie_flag,
            }
            for g in sorted(self.delta)
        ]


@dataclass(frozen=True)
class RateEstimate:
    """Estimated reporting rate m_hat with estimation diagnostics."""

    m_hat: float
    group: Optional[int]
    n_train: int
    n_eval: int
    clamped: bool = False
    raw_estimate: Optional[float] = None
    classifier_diagnostics: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)
