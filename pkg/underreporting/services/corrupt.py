"""
Injection of group-dependent under-reporting and seeded train/test splits.
"""

import logging
import math
from typing import Tuple

import numpy as np

from underreporting.errors import UnderReportingError
from underreporting.models.dataset import Dataset
from underreporting.models.specs import UnderReportingConfig

logger = logging.getLogger(__name__)


def reporting_uniforms(seed: int, column: int, row_ids: np.ndarray) -> np.ndarray:
    """Uniform draws u(seed, row_id, column) from a Philox stream keyed by (seed, column).

    Each row id addresses a fixed position of the stream, so a row's draw
    does not depend on which other rows are present or on their order.
    """
    row_ids = np.asarray(row_ids, dtype=np.int64)
    if row_ids.size == 0:
        return np.empty(0)
    if row_ids.min() < 0:
        raise UnderReportingError("Row ids must be non-negative", "validation_error")
    bit_generator = np.random.Philox(key=np.array([seed, column], dtype=np.uint64))
    stream = np.random.Generator(bit_generator).random(int(row_ids.max()) + 1)
    return stream[row_ids]


def inject_underreporting(data: Dataset, cfg: UnderReportingConfig) -> Dataset:
    """Mask one feature column with a group-dependent probability.

    Args:
        data: Dataset to corrupt; X is promoted to Z when Z is absent
        cfg: Target column, per-group under-reporting rates and seed

    Returns:
        Dataset with the updated mask and X = Z * mask
    """
    column = cfg.feature_index
    if column >= data.d:
        raise UnderReportingError(f"Feature index {column} out of range for {data.d} features", "validation_error")
    if not data.continuous_flags[column]:
        raise UnderReportingError(
            f"Feature '{data.feature_names[column]}' is not continuous or a count; only numeric features can be under-reported",
            "validation_error",
        )

    Z = data.Z if data.Z is not None else data.X
    mask = np.array(data.xi_mask if data.xi_mask is not None else np.ones_like(Z), dtype=float)

    u = reporting_uniforms(cfg.seed, column, data.row_ids)
    rates = np.where(data.G == 1.0, cfg.rate_g1, cfg.rate_g0)
    dropped = u < rates
    mask[:, column] = np.where(dropped, 0.0, mask[:, column])

    provenance = dict(data.provenance)
    provenance["corruption"] = list(provenance.get("corruption", [])) + [
        {"feature": data.feature_names[column], "rate_g0": cfg.rate_g0, "rate_g1": cfg.rate_g1, "seed": cfg.seed}
    ]
    logger.debug(f"Masked {int(dropped.sum())} of {data.n} cells in column '{data.feature_names[column]}'")
    return data.with_changes(Z=Z, xi_mask=mask, X=Z * mask, provenance=provenance)


def split_train_test(data: Dataset, test_frac: float, seed: int) -> Tuple[Dataset, Dataset]:
    """Split rows with a seeded uniform permutation.

    Args:
        data: Dataset to split
        test_frac: Share of rows in the test part, in (0,1)
        seed: Permutation seed

    Returns:
        (train, test); train holds ceil(n * (1 - test_frac)) rows
    """
    n = data.n
    if n < 2:
        raise UnderReportingError(f"Cannot split {n} rows", "validation_error")
    if not 0.0 < test_frac < 1.0:
        raise UnderReportingError(f"test_frac={test_frac} must lie in (0,1)", "validation_error")
    # rounding first keeps e.g. 10 * 0.8 = 8.000000000000002 from becoming 9
    n_train = math.ceil(round(n * (1.0 - test_frac), 9))
    if n_train <= 0 or n_train >= n:
        raise UnderReportingError(f"test_frac={test_frac} leaves one side of the split empty (n={n})", "validation_error")

    order = np.random.default_rng(seed).permutation(n)
    return data.take(order[:n_train]), data.take(order[n_train:])
