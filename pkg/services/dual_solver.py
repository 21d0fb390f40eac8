"""Lagrangian dual solver for joint pairing, user assignment, mode selection and power.

The Lagrangian is measured in nats, so for a price lambda the water level is
1/(2 lambda) and each channel's optimal power is [1/(2 lambda) - 1/gain]^+.
Reported rates and dual values are converted to bits.
"""
import logging
import math
from typing import Dict, List, Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from services.assignment import hungarian_max, pairing_total
from services.rate_model import (
    PairGains,
    RelayInfeasibleError,
    best_rates_at_equal_power,
    pair_gain_tensors,
    pair_rates,
    relay_split,
)
from services.schema import (
    AllocationReport,
    AssignmentSolution,
    ChannelRealization,
    IdleModel,
    Pairing,
    PowerAllocation,
    SolverConfig,
)

LN2 = math.log(2.0)

PairingRule = Literal["hungarian", "identity"]


def waterfill_power(gain: float, lam: float) -> float:
    if lam <= 0:
        raise ValueError(f"lambda must be > 0, got {lam}")
    if gain <= 0:
        return 0.0
    return max(0.0, 1.0 / (2.0 * lam) - 1.0 / gain)


def _contribution(gains, lam: float) -> np.ndarray:
    """max over S >= 0 of 1/2 ln(1 + g S) - lam S, elementwise."""
    gains = np.asarray(gains, dtype=float)
    level = 1.0 / (2.0 * lam)
    active = gains * level > 1.0
    with np.errstate(divide="ignore", invalid="ignore"):
        value = 0.5 * np.log(gains * level) - lam * (level - 1.0 / gains)
    return np.where(active, value, 0.0)


def rate_contributions(g: PairGains, lam: float, idle_model: IdleModel = "improved") -> Tuple[float, float]:
    """(R_R, R_I): the pair's best Lagrangian contribution in each mode, in nats.

    R_R is -inf when relaying is infeasible for the pair.
    """
    if lam <= 0:
        raise ValueError(f"lambda must be > 0, got {lam}")
    split = relay_split(g)
    r_relay = float(_contribution(split.effective_gain, lam)) if split.feasible else -math.inf
    r_idle = float(_contribution(g.g_sd1, lam))
    if idle_model == "improved":
        r_idle += float(_contribution(g.g_sd2, lam))
    return r_relay, r_idle


def select_mode(r_relay: float, r_idle: float) -> bool:
    return r_relay > r_idle


def select_user(ch: ChannelRealization, m: int, n: int, lam: float,
                idle_model: IdleModel = "improved") -> Tuple[int, float, bool]:
    best = (0, -math.inf, False)
    for k in range(ch.K):
        r_relay, r_idle = rate_contributions(PairGains.of(ch, k, m, n), lam, idle_model)
        mode = select_mode(r_relay, r_idle)
        profit = r_relay if mode else r_idle
        if profit > best[1]:
            best = (k, profit, mode)
    return best


class _Tensors:
    def __init__(self, ch: ChannelRealization):
        self.effective, self.feasible, self.g_sd1, self.g_sd2 = pair_gain_tensors(ch)


class _Inner(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    solution: AssignmentSolution
    powers: PowerAllocation
    g_nats: float
    active_channels: int


def _inner_solve(ch: ChannelRealization, tensors: _Tensors, lam: float, total_power: float,
                 idle_model: IdleModel, pairing_rule: PairingRule) -> _Inner:
    r_relay = np.where(tensors.feasible, _contribution(tensors.effective, lam), -np.inf)
    r_idle = _contribution(tensors.g_sd1, lam)
    if idle_model == "improved":
        r_idle = r_idle + _contribution(tensors.g_sd2, lam)
    modes = r_relay > r_idle
    per_user = np.where(modes, r_relay, r_idle)
    users = np.argmax(per_user, axis=0)
    profit = np.take_along_axis(per_user, users[None], axis=0)[0]
    chosen_modes = np.take_along_axis(modes, users[None], axis=0)[0]

    if pairing_rule == "hungarian":
        pairing, total = hungarian_max(profit)
    else:
        pairing = Pairing.identity(ch.N)
        total = pairing_total(profit, pairing.perm)

    relay_power = np.zeros(ch.N)
    direct_first = np.zeros(ch.N)
    direct_second = np.zeros(ch.N)
    user_of_pair, mode_of_pair = [], []
    for m, n in enumerate(pairing.perm):
        k = int(users[m, n])
        relaying = bool(chosen_modes[m, n])
        user_of_pair.append(k)
        mode_of_pair.append(relaying)
        if relaying:
            relay_power[m] = waterfill_power(tensors.effective[k, m, n], lam)
        else:
            direct_first[m] = waterfill_power(tensors.g_sd1[k, m, n], lam)
            if idle_model == "improved":
                direct_second[m] = waterfill_power(tensors.g_sd2[k, m, n], lam)

    powers = PowerAllocation(
        relay_power=relay_power.tolist(),
        direct_first=direct_first.tolist(),
        direct_second=direct_second.tolist(),
    )
    solution = AssignmentSolution(pairing=pairing, user_of_pair=user_of_pair, mode_of_pair=mode_of_pair)
    active = int(np.count_nonzero(relay_power) + np.count_nonzero(direct_first) + np.count_nonzero(direct_second))
    return _Inner(solution=solution, powers=powers, g_nats=total + lam * total_power, active_channels=active)


def dual_inner_solve(ch: ChannelRealization, lam: float, total_power: float,
                     idle_model: IdleModel = "improved",
                     pairing_rule: PairingRule = "hungarian") -> Tuple[AssignmentSolution, PowerAllocation, float]:
    """Maximize the Lagrangian at price `lam`; returns (solution, powers, g(lam) in nats)."""
    if lam <= 0:
        raise ValueError(f"lambda must be > 0, got {lam}")
    inner = _inner_solve(ch, _Tensors(ch), lam, total_power, idle_model, pairing_rule)
    return inner.solution, inner.powers, inner.g_nats


def waterfill_budget(gains: Sequence[float], budget: float) -> Tuple[np.ndarray, float]:
    """Exact water-filling of `budget` over parallel channels.

    Bisects lambda on a log scale, then recomputes the water level in closed
    form on the active set found. Returns (powers, lambda); lambda is inf when
    no channel can carry power.
    """
    gains = np.asarray(gains, dtype=float)
    powers = np.zeros(gains.shape)
    positive = gains > 0
    if budget <= 0 or not np.any(positive):
        return powers, math.inf
    inverse = 1.0 / gains[positive]

    def consumed(level: float) -> float:
        return float(np.sum(np.maximum(0.0, level - inverse)))

    lam_hi = 1.0 / (2.0 * inverse.min())
    lam_lo = 1.0 / (2.0 * (inverse.min() + budget))
    while lam_hi / lam_lo > 1.0 + 1e-12:
        lam_mid = math.sqrt(lam_lo * lam_hi)
        if consumed(1.0 / (2.0 * lam_mid)) > budget:
            lam_lo = lam_mid
        else:
            lam_hi = lam_mid
    level = 1.0 / (lam_lo + lam_hi)
    active = inverse < level
    if not np.any(active):
        active = inverse <= inverse.min()
    for _ in range(inverse.size):
        level = (budget + float(np.sum(inverse[active]))) / int(np.count_nonzero(active))
        refined = inverse < level
        if np.array_equal(refined, active):
            break
        active = refined
    powers[positive] = np.where(active, level - inverse, 0.0)
    return powers, 1.0 / (2.0 * level)


def _restore(ch: ChannelRealization, sol: AssignmentSolution, total_power: float,
             idle_model: IdleModel) -> Tuple[PowerAllocation, float]:
    if len(sol.pairing.perm) != ch.N:
        raise ValueError(f"solution has {len(sol.pairing.perm)} pairs, realization has N={ch.N}")
    gains: List[float] = []
    slots: List[Tuple[str, int]] = []
    for m, n in enumerate(sol.pairing.perm):
        k = sol.user_of_pair[m]
        if k >= ch.K:
            raise ValueError(f"pair {m} assigned to user {k}, realization has K={ch.K}")
        g = PairGains.of(ch, k, m, n)
        if sol.mode_of_pair[m]:
            split = relay_split(g)
            if not split.feasible:
                raise RelayInfeasibleError(f"pair {m} relays for user {k} but g_sr <= g_sd1")
            gains.append(split.effective_gain)
            slots.append(("relay_power", m))
        else:
            gains.append(g.g_sd1)
            slots.append(("direct_first", m))
            if idle_model == "improved":
                gains.append(g.g_sd2)
                slots.append(("direct_second", m))
    powers, lam = waterfill_budget(gains, total_power)
    allocation = {"relay_power": [0.0] * ch.N, "direct_first": [0.0] * ch.N, "direct_second": [0.0] * ch.N}
    for (name, m), p in zip(slots, powers):
        allocation[name][m] = float(p)
    return PowerAllocation(**allocation), lam


def restore_feasibility(ch: ChannelRealization, sol: AssignmentSolution, cfg: SolverConfig,
                        idle_model: IdleModel = "improved") -> PowerAllocation:
    """Freeze the discrete solution and water-fill exactly P_t over its channels."""
    return _restore(ch, sol, cfg.total_power, idle_model)[0]


class ScoredSolution(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    solution: AssignmentSolution
    powers: PowerAllocation
    rates: np.ndarray
    rate: float


def score_solution(ch: ChannelRealization, sol: AssignmentSolution, total_power: float,
                   idle_model: IdleModel = "improved") -> ScoredSolution:
    powers, _ = _restore(ch, sol, total_power, idle_model)
    rates = pair_rates(ch, sol, powers, idle_model)
    return ScoredSolution(solution=sol, powers=powers, rates=rates, rate=float(np.sum(rates)))


def best_of(ch: ChannelRealization, candidates: Sequence[AssignmentSolution], total_power: float,
            idle_model: IdleModel = "improved") -> ScoredSolution:
    best: Optional[ScoredSolution] = None
    seen = set()
    for sol in candidates:
        if sol.key() in seen:
            continue
        seen.add(sol.key())
        scored = score_solution(ch, sol, total_power, idle_model)
        if best is None or scored.rate > best.rate:
            best = scored
    if best is None:
        raise ValueError("no candidate solutions to choose from")
    return best


def equal_power_solution(ch: ChannelRealization, total_power: float,
                         pairing_rule: PairingRule = "hungarian") -> Tuple[AssignmentSolution, PowerAllocation]:
    """Every pair gets P_t/N; (user, mode) per pair maximizes its rate at that power."""
    pair_power = total_power / ch.N
    rates, users, modes = best_rates_at_equal_power(ch, pair_power)
    if pairing_rule == "hungarian":
        pairing, _ = hungarian_max(rates)
    else:
        pairing = Pairing.identity(ch.N)
    user_of_pair = [int(users[m, n]) for m, n in enumerate(pairing.perm)]
    mode_of_pair = [bool(modes[m, n]) for m, n in enumerate(pairing.perm)]
    powers = PowerAllocation(
        relay_power=[pair_power if relaying else 0.0 for relaying in mode_of_pair],
        direct_first=[0.0 if relaying else pair_power / 2 for relaying in mode_of_pair],
        direct_second=[0.0 if relaying else pair_power / 2 for relaying in mode_of_pair],
    )
    solution = AssignmentSolution(pairing=pairing, user_of_pair=user_of_pair, mode_of_pair=mode_of_pair)
    return solution, powers


class TraceRow(BaseModel):
    iteration: int
    lambda_: float = Field(serialization_alias="lambda")
    consumed_power: float
    g_lambda: float
    restored_rate: float
    relative_change: float


class DualRun(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    candidates: List[AssignmentSolution]
    best: ScoredSolution
    iterations: int
    lambda_final: float
    converged: bool
    best_dual_nats: float
    trace: List[TraceRow]


def _usable_gains(tensors: _Tensors, idle_model: IdleModel) -> np.ndarray:
    """(K, N, N) best single-channel gain of every (k, m, n) entry; 0 where nothing is usable."""
    best = np.where(tensors.feasible, tensors.effective, 0.0)
    best = np.maximum(best, tensors.g_sd1)
    if idle_model == "improved":
        best = np.maximum(best, tensors.g_sd2)
    return best


def initial_price(ch: ChannelRealization, total_power: float, idle_model: IdleModel = "improved") -> float:
    """Water-filling price over the strongest usable channel of every first-phase subcarrier.

    Falls back to N/(2 P_t) when no channel has a positive gain.
    """
    strongest = _usable_gains(_Tensors(ch), idle_model).max(axis=(0, 2))
    _, lam = waterfill_budget(strongest, total_power)
    return lam if math.isfinite(lam) else ch.N / (2.0 * total_power)


def run_dual(ch: ChannelRealization, cfg: SolverConfig, idle_model: IdleModel = "improved",
             pairing_rule: PairingRule = "hungarian") -> DualRun:
    """Subgradient iteration on lambda, scoring every visited discrete solution.

    Under the curvature rule the damped step is taken on the water level
    1/(2 lambda), scaled by the number of active channels. An iterate where no
    channel carries power jumps to the price at which the strongest usable
    channel alone takes the whole budget.
    """
    tensors = _Tensors(ch)
    budget = cfg.total_power
    usable = _usable_gains(tensors, idle_model)
    if pairing_rule == "identity":
        usable = usable[:, np.arange(ch.N), np.arange(ch.N)]
    strongest = float(usable.max())
    lam = cfg.lambda_init if cfg.lambda_init is not None else initial_price(ch, budget, idle_model)
    lam_lo, lam_hi = 0.0, math.inf
    scored: Dict[tuple, ScoredSolution] = {}
    best_dual = math.inf
    trace: List[TraceRow] = []
    converged = False
    iteration = 0
    lam_evaluated = lam

    for iteration in range(1, cfg.max_iter + 1):
        inner = _inner_solve(ch, tensors, lam, budget, idle_model, pairing_rule)
        consumed = inner.powers.total()
        residual = budget - consumed
        best_dual = min(best_dual, inner.g_nats)
        key = inner.solution.key()
        if key not in scored:
            scored[key] = score_solution(ch, inner.solution, budget, idle_model)

        if residual > 0:
            lam_hi = min(lam_hi, lam)
        elif residual < 0:
            lam_lo = max(lam_lo, lam)
        step = cfg.a0 / math.sqrt(iteration)
        if cfg.step_rule == "diminishing":
            nxt = lam - step * residual
        elif strongest <= 0:
            # no channel can ever carry power
            nxt = lam
        else:
            if inner.active_channels == 0:
                level = 1.0 / strongest + budget
            else:
                level = 1.0 / (2.0 * lam) + step * residual / inner.active_channels
            nxt = 1.0 / (2.0 * level) if level > 0 else -math.inf
            if not lam_lo < nxt < lam_hi:
                if lam_lo > 0 and lam_hi < math.inf:
                    nxt = math.sqrt(lam_lo * lam_hi)
                elif lam_hi < math.inf:
                    nxt = lam_hi / 10.0
                else:
                    nxt = lam_lo * 10.0
        nxt = max(nxt, cfg.lambda_floor)
        change = abs(nxt - lam) / abs(nxt)

        trace.append(TraceRow(
            iteration=iteration,
            lambda_=lam,
            consumed_power=consumed,
            g_lambda=inner.g_nats / LN2,
            restored_rate=scored[key].rate,
            relative_change=change,
        ))
        logging.debug(f"iter {iteration}: lambda={lam:.6g} consumed={consumed:.6g} change={change:.3g}")

        lam_evaluated = lam
        lam = nxt
        if residual == 0 or cfg.epsilon >= 1.0 or change < cfg.epsilon:
            converged = True
            break

    if not converged:
        logging.warning(f"Dual iteration did not converge in {cfg.max_iter} iterations (N={ch.N}, seed={ch.seed})")

    best = max(scored.values(), key=lambda s: s.rate)
    return DualRun(
        candidates=[s.solution for s in scored.values()],
        best=best,
        iterations=iteration,
        lambda_final=lam_evaluated,
        converged=converged,
        best_dual_nats=best_dual,
        trace=trace,
    )


def build_report(scheme: str, ch: ChannelRealization, total_power: float, chosen: ScoredSolution,
                 run: Optional[DualRun] = None) -> AllocationReport:
    consumed = chosen.powers.total()
    return AllocationReport(
        scheme=scheme,
        solution=chosen.solution,
        powers=chosen.powers,
        primal_rate=chosen.rate,
        per_pair_rates=[float(r) for r in chosen.rates],
        dual_value=run.best_dual_nats / LN2 if run is not None else None,
        iterations=run.iterations if run is not None else 0,
        lambda_final=run.lambda_final if run is not None else None,
        converged=run.converged if run is not None else True,
        total_power=total_power,
        consumed_power=consumed,
        power_residual=consumed - total_power,
    )


def solve(ch: ChannelRealization, cfg: SolverConfig) -> AllocationReport:
    """Joint pairing, assignment, mode and power allocation for the improved DF link."""
    main = run_dual(ch, cfg, "improved", "hungarian")
    pool = list(main.candidates)
    if cfg.pool_restricted_runs:
        pool += run_dual(ch, cfg, "conventional", "hungarian").candidates
        pool += run_dual(ch, cfg, "improved", "identity").candidates
        pool += [equal_power_solution(ch, cfg.total_power, rule)[0] for rule in ("identity", "hungarian")]
    chosen = best_of(ch, pool, cfg.total_power, "improved")
    return build_report("proposed", ch, cfg.total_power, chosen, main)


def convergence_trace(ch: ChannelRealization, cfg: SolverConfig) -> List[TraceRow]:
    """Per-iteration telemetry of the main dual trajectory of `solve`."""
    return run_dual(ch, cfg, "improved", "hungarian").trace
