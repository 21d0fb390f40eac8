"""Comparison schemes. Each one is a restriction of the joint problem."""
import logging
from enum import Enum

import numpy as np

from services.dual_solver import ScoredSolution, best_of, build_report, equal_power_solution, run_dual, solve
from services.rate_model import pair_rates
from services.schema import AllocationReport, ChannelRealization, SolverConfig


class UnknownSchemeError(ValueError):
    pass


class BaselineKind(str, Enum):
    EP_NO_SP = "ep-no-sp"
    OPA_NO_SP = "opa-no-sp"
    EP_WITH_SP = "ep-sp"
    CONVENTIONAL_DF = "conventional-df"


PROPOSED = "proposed"
SCHEMES = (PROPOSED,) + tuple(kind.value for kind in BaselineKind)


def _equal_power(ch: ChannelRealization, cfg: SolverConfig, pairing_rule: str, scheme: str) -> AllocationReport:
    solution, powers = equal_power_solution(ch, cfg.total_power, pairing_rule)
    rates = pair_rates(ch, solution, powers)
    scored = ScoredSolution(solution=solution, powers=powers, rates=rates, rate=float(np.sum(rates)))
    return build_report(scheme, ch, cfg.total_power, scored)


def run_baseline(kind: BaselineKind, ch: ChannelRealization, cfg: SolverConfig) -> AllocationReport:
    kind = BaselineKind(kind)
    if kind is BaselineKind.EP_NO_SP:
        return _equal_power(ch, cfg, "identity", kind.value)
    if kind is BaselineKind.EP_WITH_SP:
        return _equal_power(ch, cfg, "hungarian", kind.value)
    if kind is BaselineKind.OPA_NO_SP:
        run = run_dual(ch, cfg, "improved", "identity")
        # the equal-power point is a feasible identity-pairing configuration too
        pool = run.candidates + [equal_power_solution(ch, cfg.total_power, "identity")[0]]
        return build_report(kind.value, ch, cfg.total_power, best_of(ch, pool, cfg.total_power), run)
    run = run_dual(ch, cfg, "conventional", "hungarian")
    return build_report(kind.value, ch, cfg.total_power, run.best, run)


def run_scheme(name: str, ch: ChannelRealization, cfg: SolverConfig) -> AllocationReport:
    """Dispatch by scheme name as used on the command line."""
    if name == PROPOSED:
        return solve(ch, cfg)
    try:
        kind = BaselineKind(name)
    except ValueError:
        logging.error(f"Unknown scheme requested: {name}")
        raise UnknownSchemeError(f"unknown scheme '{name}', expected one of {', '.join(SCHEMES)}")
    return run_baseline(kind, ch, cfg)
