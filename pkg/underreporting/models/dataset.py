"""
Model for storing tabular data with latent, observed and masking matrices.
"""

import json
import logging
import os
from dataclasses import dataclass, field, replace
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from underreporting.errors import UnderReportingError

logger = logging.getLogger(__name__)

SIDECAR_FILE = "dataset.json"


def _frozen(values: Optional[Any], dtype) -> Optional[np.ndarray]:
    if values is None:
        return None
    array = np.array(values, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Dataset:
    """Rows of features, group labels and outcomes.

    Z holds latent (true) features and xi_mask the hidden reporting
    indicators; both are only present for synthetic or corrupted data and
    are stripped by estimation_view() before any estimator sees the data.
    Missing cells in X are the literal value 0.
    """

    X: np.ndarray
    G: np.ndarray
    feature_names: Tuple[str, ...] = ()
    continuous_flags: Tuple[bool, ...] = ()
    Y: Optional[np.ndarray] = None
    Z: Optional[np.ndarray] = None
    xi_mask: Optional[np.ndarray] = None
    row_ids: Optional[np.ndarray] = None
    provenance: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        X = _frozen(self.X, float)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "G", _frozen(self.G, float))
        object.__setattr__(self, "Y", _frozen(self.Y, float))
        object.__setattr__(self, "Z", _frozen(self.Z, float))
        object.__setattr__(self, "xi_mask", _frozen(self.xi_mask, float))
        n = X.shape[0] if X.ndim >= 1 else 0
        row_ids = self.row_ids if self.row_ids is not None else np.arange(n)
        object.__setattr__(self, "row_ids", _frozen(row_ids, np.int64))
        d = X.shape[1] if X.ndim == 2 else 0
        names = tuple(self.feature_names) or tuple(f"x{j + 1}" for j in range(d))
        flags = tuple(bool(f) for f in self.continuous_flags) or tuple(True for _ in range(d))
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "continuous_flags", flags)
        object.__setattr__(self, "provenance", dict(self.provenance))

    @property
    def n(self) -> int:
        """Number of rows."""
        return int(self.X.shape[0]) if self.X.ndim >= 1 else 0

    @property
    def d(self) -> int:
        """Number of features."""
        return int(self.X.shape[1]) if self.X.ndim == 2 else 0

    def with_changes(self, **changes) -> "Dataset":
        """Return a copy with the given fields replaced."""
        return replace(self, **changes)

    def estimation_view(self) -> "Dataset":
        """Return the data an estimator may see: Z and the mask are stripped."""
        return replace(self, Z=None, xi_mask=None)

    def take(self, indices: Sequence[int]) -> "Dataset":
        """Return the rows at the given positions, keeping every parallel array aligned."""
        idx = np.asarray(indices, dtype=np.int64)

        def pick(array):
            return None if array is None else array[idx]

        return replace(
            self,
            X=self.X[idx],
            G=self.G[idx],
            Y=pick(self.Y),
            Z=pick(self.Z),
            xi_mask=pick(self.xi_mask),
            row_ids=self.row_ids[idx],
        )

    def feature_index(self, name: str) -> int:
        """Get the column index of a feature by name."""
        try:
            return self.feature_names.index(name)
        except ValueError as e:
            raise UnderReportingError(f"Unknown feature: {name}", "validation_error", e)

    def group_rows(self, g: int) -> np.ndarray:
        """Positions of the rows in group g."""
        return np.flatnonzero(self.G == g)


def validate_dataset(data: Dataset) -> List[str]:
    """Check every Dataset invariant.

    Args:
        data: Dataset to check

    Returns:
        List of violations; empty iff every invariant holds
    """
    violations: List[str] = []
    if data.X.ndim != 2:
        return [f"shape: X must be a 2-d matrix, got {data.X.ndim} dimensions"]
    n, d = data.X.shape

    if len(data.feature_names) != d:
        violations.append(f"shape: {len(data.feature_names)} feature names for {d} columns")
    if len(data.continuous_flags) != d:
        violations.append(f"shape: {len(data.continuous_flags)} continuous flags for {d} columns")
    for name, array in (("Z", data.Z), ("xi_mask", data.xi_mask)):
        if array is not None and array.shape != (n, d):
            violations.append(f"shape: {name} has shape {array.shape}, expected {(n, d)}")
    for name, array in (("G", data.G), ("Y", data.Y), ("row_ids", data.row_ids)):
        if array is not None and array.shape != (n,):
            violations.append(f"shape: {name} has shape {array.shape}, expected {(n,)}")

    if data.G.shape == (n,):
        bad = np.flatnonzero(~np.isin(data.G, (0.0, 1.0)))
        if bad.size:
            violations.append(f"G domain: values outside {{0,1}} at rows {bad[:10].tolist()}")

    mask = data.xi_mask
    if mask is not None and mask.shape == (n, d):
        bad_cells = np.argwhere(~np.isin(mask, (0.0, 1.0)))
        if bad_cells.size:
            cells = [tuple(c) for c in bad_cells[:10].tolist()]
            violations.append(f"xi_mask domain: values outside {{0,1}} at cells {cells}")
        if data.Z is not None and data.Z.shape == (n, d):
            mismatch = np.argwhere(data.X != data.Z * mask)
            if mismatch.size:
                cells = [tuple(c) for c in mismatch[:10].tolist()]
                violations.append(f"X = Z*xi_mask: mismatch at cells {cells}")
    return violations


def _matrix_frame(matrix: np.ndarray, names: Sequence[str]) -> pd.DataFrame:
    return pd.DataFrame(np.asarray(matrix), columns=list(names))


def save_dataset(data: Dataset, directory: str, seed: Optional[int] = None) -> str:
    """Write a dataset bundle: CSV matrices plus a JSON metadata sidecar.

    Args:
        data: Dataset to save
        directory: Bundle directory, created if needed
        seed: Seed recorded in the sidecar

    Returns:
        The bundle directory
    """
    try:
        os.makedirs(directory, exist_ok=True)
        names = list(data.feature_names)
        _matrix_frame(data.X, names).to_csv(os.path.join(directory, "X.csv"), index=False, float_format="%.17g")
        if data.Z is not None:
            _matrix_frame(data.Z, names).to_csv(os.path.join(directory, "Z.csv"), index=False, float_format="%.17g")
        if data.xi_mask is not None:
            _matrix_frame(data.xi_mask, names).to_csv(
                os.path.join(directory, "mask.csv"), index=False, float_format="%.17g"
            )
        vectors = pd.DataFrame({"row_id": data.row_ids, "G": data.G})
        if data.Y is not None:
            vectors["Y"] = data.Y
        vectors.to_csv(os.path.join(directory, "vectors.csv"), index=False, float_format="%.17g")

        sidecar = {
            "feature_names": names,
            "continuous_flags": list(data.continuous_flags),
            "provenance": data.provenance,
            "seed": seed if seed is not None else data.provenance.get("seed"),
            "has_Z": data.Z is not None,
            "has_mask": data.xi_mask is not None,
            "has_Y": data.Y is not None,
        }
        with open(os.path.join(directory, SIDECAR_FILE), "w", encoding="utf-8") as f:
            json.dump(sidecar, f, indent=2, sort_keys=True, default=float)
    except OSError as e:
        raise UnderReportingError(f"Failed to save dataset to {directory}: {str(e)}", "file_error", e)
    logger.info(f"Dataset ({data.n} rows, {data.d} features) saved to {directory}")
    return directory


def load_dataset(directory: str) -> Dataset:
    """Read a dataset bundle written by save_dataset."""
    sidecar_path = os.path.join(directory, SIDECAR_FILE)
    if not os.path.exists(sidecar_path):
        raise UnderReportingError(f"No dataset bundle found in {directory}", "file_error")
    try:
        with open(sidecar_path, "r", encoding="utf-8") as f:
            sidecar = json.load(f)

        def read(name):
            return pd.read_csv(os.path.join(directory, name), float_precision="round_trip")

        X = read("X.csv").to_numpy(dtype=float)
        Z = read("Z.csv").to_numpy(dtype=float) if sidecar.get("has_Z") else None
        mask = read("mask.csv").to_numpy(dtype=float) if sidecar.get("has_mask") else None
        vectors = read("vectors.csv")
    except (OSError, ValueError, pd.errors.ParserError) as e:
        raise UnderReportingError(f"Failed to load dataset from {directory}: {str(e)}", "file_error", e)

    return Dataset(
        X=X,
        G=vectors["G"].to_numpy(dtype=float),
        feature_names=tuple(sidecar["feature_names"]),
        continuous_flags=tuple(sidecar["continuous_flags"]),
        Y=vectors["Y"].to_numpy(dtype=float) if sidecar.get("has_Y") else None,
        Z=Z,
        xi_mask=mask,
        row_ids=vectors["row_id"].to_numpy(dtype=np.int64),
        provenance=sidecar.get("provenance", {}),
    )
