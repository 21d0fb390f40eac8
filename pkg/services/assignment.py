import itertools
import logging
from typing import Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, field_validator
from scipy.optimize import linear_sum_assignment

from services.schema import Pairing

BRUTE_FORCE_MAX_N = 9


class PairingSizeError(ValueError):
    pass


class ProfitMatrix(BaseModel):
    """Square matrix of pair profits Pi[m][n]."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    entries: np.ndarray

    @field_validator("entries", mode="before")
    @classmethod
    def _square_finite(cls, value) -> np.ndarray:
        array = np.array(value, dtype=float)
        if array.ndim != 2 or array.shape[0] != array.shape[1] or array.shape[0] == 0:
            raise ValueError(f"profit matrix must be square and non-empty, got shape {array.shape}")
        if not np.all(np.isfinite(array)):
            raise ValueError("profit matrix entries must be finite")
        array.setflags(write=False)
        return array

    @property
    def size(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def of(cls, value) -> "ProfitMatrix":
        return value if isinstance(value, cls) else cls(entries=value)


def pairing_total(profit: np.ndarray, perm: Sequence[int]) -> float:
    """Sequential sum of Pi[m][perm[m]]; every solver reports totals this way."""
    total = 0.0
    for m, n in enumerate(perm):
        total += float(profit[m, n])
    return total


def hungarian_max(profit) -> Tuple[Pairing, float]:
    """Permutation maximizing sum_m Pi[m][perm[m]]."""
    matrix = ProfitMatrix.of(profit).entries
    rows, cols = linear_sum_assignment(matrix, maximize=True)
    perm = [int(n) for n in cols[np.argsort(rows)]]
    return Pairing(perm=perm), pairing_total(matrix, perm)


def brute_force_pairing(profit) -> Tuple[Pairing, float]:
    """Exact maximum by enumeration; ties go to the lexicographically smallest permutation."""
    matrix = ProfitMatrix.of(profit).entries
    n = matrix.shape[0]
    if n > BRUTE_FORCE_MAX_N:
        raise PairingSizeError(f"brute-force pairing is limited to N <= {BRUTE_FORCE_MAX_N}, got N={n}")
    best_perm, best_total = None, -np.inf
    for perm in itertools.permutations(range(n)):
        total = pairing_total(matrix, perm)
        if total > best_total:
            best_perm, best_total = perm, total
    logging.debug(f"Brute-force pairing over {n}! permutations: total={best_total}")
    return Pairing(perm=list(best_perm)), best_total
