"""
Models for the under-reporting audit.
These models represent the data structures used throughout the package.
"""

from underreporting.models.dataset import Dataset, load_dataset, save_dataset, validate_dataset
from underreporting.models.linear_model import LinearModel
from underreporting.models.population import GaussianPopulation
from underreporting.models.results import ExcessSelectionResult, RateEstimate
from underreporting.models.specs import NoiseSpec, SelectionPolicy, UnderReportingConfig

__all__ = [
    "Dataset",
    "ExcessSelectionResult",
    "GaussianPopulation",
    "LinearModel",
    "NoiseSpec",
    "RateEstimate",
    "SelectionPolicy",
    "UnderReportingConfig",
    "load_dataset",
    "save_dataset",
    "validate_dataset",
]
