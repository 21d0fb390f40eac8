"""Exhaustive reference solver for desk-sized instances."""
import itertools
import logging
import math
import os
from typing import Optional

from pydantic import BaseModel, Field

from services.dual_solver import build_report, score_solution
from services.rate_model import pair_gain_tensors
from services.schema import AllocationReport, AssignmentSolution, ChannelRealization, Pairing


class OracleLimitError(ValueError):
    def __init__(self, count: int, message: str):
        self.count = count
        super().__init__(message)


class OracleLimits(BaseModel):
    max_N: int = Field(default=4, ge=1, description="Largest number of subcarriers accepted")
    max_K: int = Field(default=3, ge=1, description="Largest number of users accepted")
    max_enumeration: int = Field(default=10_000_000, ge=1, description="Cap on N! K^N 2^N")

    @classmethod
    def from_env(cls, **overrides) -> "OracleLimits":
        values = {}
        if os.environ.get("ORACLE_MAX_N"):
            values["max_N"] = int(os.environ["ORACLE_MAX_N"])
        if os.environ.get("ORACLE_MAX_K"):
            values["max_K"] = int(os.environ["ORACLE_MAX_K"])
        values.update(overrides)
        return cls(**values)


def enumeration_count(num_subcarriers: int, num_users: int) -> int:
    return math.factorial(num_subcarriers) * num_users ** num_subcarriers * 2 ** num_subcarriers


def oracle_solve(ch: ChannelRealization, total_power: float, limits: Optional[OracleLimits] = None) -> AllocationReport:
    """Best configuration over all pairings, user maps and feasible mode vectors.

    Each configuration gets its exact water-filled powers. Ties keep the first
    configuration in enumeration order.
    """
    limits = limits or OracleLimits()
    count = enumeration_count(ch.N, ch.K)
    if ch.N > limits.max_N or ch.K > limits.max_K or count > limits.max_enumeration:
        logging.warning(f"Oracle refused N={ch.N}, K={ch.K}: {count} configurations")
        raise OracleLimitError(
            count,
            f"instance N={ch.N}, K={ch.K} needs {count} configurations; "
            f"limits are N<={limits.max_N}, K<={limits.max_K}, count<={limits.max_enumeration}",
        )
    _, feasible, _, _ = pair_gain_tensors(ch)
    best = None
    evaluated = 0
    for perm in itertools.permutations(range(ch.N)):
        pairing = Pairing(perm=list(perm))
        for users in itertools.product(range(ch.K), repeat=ch.N):
            for modes in itertools.product((False, True), repeat=ch.N):
                if any(relaying and not feasible[k, m, n]
                       for m, (n, k, relaying) in enumerate(zip(perm, users, modes))):
                    continue
                solution = AssignmentSolution(pairing=pairing, user_of_pair=list(users), mode_of_pair=list(modes))
                scored = score_solution(ch, solution, total_power, "improved")
                evaluated += 1
                if best is None or scored.rate > best.rate:
                    best = scored
    logging.debug(f"Oracle evaluated {evaluated} of {count} configurations, best rate {best.rate:.6g}")
    return build_report("oracle", ch, total_power, best)
