"""Per-pair rate algebra of the two-phase DF link.

A subcarrier pair (m, n) serving user k either relays (the source sends on m,
the relay forwards on n) or stays idle (the source sends a fresh symbol to the
user on both m and n). Rates are in bits/s/Hz and carry the 1/2 factor of the
two-phase period.
"""
import math
from typing import Tuple

import numpy as np
from pydantic import BaseModel, Field

from services.schema import AssignmentSolution, ChannelRealization, IdleModel, PowerAllocation


class RelayInfeasibleError(ValueError):
    pass


class AllocationMismatchError(ValueError):
    pass


class PairGains(BaseModel):
    g_sd1: float = Field(ge=0, allow_inf_nan=False, description="Source to user, first-phase subcarrier m")
    g_sr: float = Field(ge=0, allow_inf_nan=False, description="Source to relay, subcarrier m")
    g_rd: float = Field(ge=0, allow_inf_nan=False, description="Relay to user, second-phase subcarrier n")
    g_sd2: float = Field(ge=0, allow_inf_nan=False, description="Source to user, second-phase subcarrier n")

    @classmethod
    def of(cls, ch: ChannelRealization, k: int, m: int, n: int) -> "PairGains":
        return cls(
            g_sd1=float(ch.gamma_SD1[k, m]),
            g_sr=float(ch.gamma_SR[m]),
            g_rd=float(ch.gamma_RD[k, n]),
            g_sd2=float(ch.gamma_SD2[k, n]),
        )


class RelaySplit(BaseModel):
    effective_gain: float
    source_fraction: float
    relay_fraction: float
    feasible: bool


def effective_gains(g_sd1, g_sr, g_rd) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized relay split; arguments broadcast against each other.

    Returns (effective_gain, source_fraction, relay_fraction, feasible).
    Where g_sr < g_sd1 everything is zero; at g_sr == g_sd1 the split is the
    boundary one (all power at the source) but flagged infeasible.
    """
    g_sd1, g_sr, g_rd = np.broadcast_arrays(
        np.asarray(g_sd1, dtype=float), np.asarray(g_sr, dtype=float), np.asarray(g_rd, dtype=float)
    )
    excess = g_sr - g_sd1
    denominator = g_rd + excess
    defined = (excess >= 0) & (denominator > 0)
    safe = np.where(defined, denominator, 1.0)
    effective = np.where(defined, g_sr * g_rd / safe, 0.0)
    source_fraction = np.where(defined, g_rd / safe, 0.0)
    relay_fraction = np.where(defined, excess / safe, 0.0)
    return effective, source_fraction, relay_fraction, excess > 0


def relay_split(g: PairGains) -> RelaySplit:
    effective, source_fraction, relay_fraction, feasible = effective_gains(g.g_sd1, g.g_sr, g.g_rd)
    return RelaySplit(
        effective_gain=float(effective),
        source_fraction=float(source_fraction),
        relay_fraction=float(relay_fraction),
        feasible=bool(feasible),
    )


def relaying_branch_rates(g: PairGains, p_source: float, p_relay: float) -> Tuple[float, float]:
    """The two arguments of the relaying-mode min, at arbitrary powers."""
    source_relay = 0.5 * math.log2(1.0 + p_source * g.g_sr)
    destination = 0.5 * math.log2(1.0 + p_source * g.g_sd1 + p_relay * g.g_rd)
    return source_relay, destination


def rate_relaying_unbalanced(g: PairGains, p_source: float, p_relay: float) -> float:
    return min(relaying_branch_rates(g, p_source, p_relay))


def rate_relaying(g: PairGains, pooled_power: float) -> float:
    if pooled_power < 0:
        raise ValueError(f"pooled power must be >= 0, got {pooled_power}")
    split = relay_split(g)
    if not split.feasible:
        raise RelayInfeasibleError(f"relaying is unavailable when g_sr ({g.g_sr}) <= g_sd1 ({g.g_sd1})")
    return 0.5 * math.log2(1.0 + split.effective_gain * pooled_power)


def rate_idle(g: PairGains, p_first: float, p_second: float) -> float:
    if p_first < 0 or p_second < 0:
        raise ValueError("powers must be >= 0")
    return 0.5 * math.log2(1.0 + g.g_sd1 * p_first) + 0.5 * math.log2(1.0 + g.g_sd2 * p_second)


def pair_rates(ch: ChannelRealization, sol: AssignmentSolution, pw: PowerAllocation,
               idle_model: IdleModel = "improved") -> np.ndarray:
    """Rate of every selected pair (m, perm[m]), validated against the solution."""
    n = ch.N
    perm = sol.pairing.perm
    if len(perm) != n:
        raise AllocationMismatchError(f"solution has {len(perm)} pairs, realization has N={n}")
    if len(pw.relay_power) != n:
        raise AllocationMismatchError(f"power allocation has {len(pw.relay_power)} pairs, expected {n}")
    rates = np.zeros(n)
    for m in range(n):
        k = sol.user_of_pair[m]
        if k >= ch.K:
            raise AllocationMismatchError(f"pair {m} assigned to user {k}, realization has K={ch.K}")
        g = PairGains.of(ch, k, m, perm[m])
        if sol.mode_of_pair[m]:
            if pw.direct_first[m] > 0 or pw.direct_second[m] > 0:
                raise AllocationMismatchError(f"pair {m} relays but has idle-mode power assigned")
            rates[m] = rate_relaying(g, pw.relay_power[m])
        else:
            if pw.relay_power[m] > 0:
                raise AllocationMismatchError(f"pair {m} is idle but has relaying power assigned")
            if idle_model == "conventional" and pw.direct_second[m] > 0:
                raise AllocationMismatchError(f"pair {m} has second-phase power under conventional DF")
            rates[m] = rate_idle(g, pw.direct_first[m], pw.direct_second[m])
    return rates


def sum_rate(ch: ChannelRealization, sol: AssignmentSolution, pw: PowerAllocation,
             idle_model: IdleModel = "improved") -> float:
    return float(np.sum(pair_rates(ch, sol, pw, idle_model)))


def pair_gain_tensors(ch: ChannelRealization) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """(effective, feasible, g_sd1, g_sd2) broadcast to shape (K, N, N) indexed [k, m, n]."""
    g_sd1 = np.broadcast_to(ch.gamma_SD1[:, :, None], (ch.K, ch.N, ch.N))
    g_sd2 = np.broadcast_to(ch.gamma_SD2[:, None, :], (ch.K, ch.N, ch.N))
    effective, _, _, feasible = effective_gains(
        ch.gamma_SD1[:, :, None], ch.gamma_SR[None, :, None], ch.gamma_RD[:, None, :]
    )
    return effective, feasible, g_sd1, g_sd2


def best_rates_at_equal_power(ch: ChannelRealization, pair_power: float,
                              idle_model: IdleModel = "improved") -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Best (user, mode) for every pair (m, n) when the pair gets `pair_power`.

    Idle pairs split the pair power equally over the two phases (all of it on
    the first phase under conventional DF). Ties go to idle, then to the
    smallest user index.
    """
    effective, feasible, g_sd1, g_sd2 = pair_gain_tensors(ch)
    relaying = np.where(feasible, 0.5 * np.log2(1.0 + effective * pair_power), -np.inf)
    if idle_model == "improved":
        idle = 0.5 * np.log2(1.0 + g_sd1 * pair_power / 2) + 0.5 * np.log2(1.0 + g_sd2 * pair_power / 2)
    else:
        idle = 0.5 * np.log2(1.0 + g_sd1 * pair_power)
    modes = relaying > idle
    per_user = np.where(modes, relaying, idle)
    users = np.argmax(per_user, axis=0)
    rates = np.take_along_axis(per_user, users[None], axis=0)[0]
    chosen_modes = np.take_along_axis(modes, users[None], axis=0)[0]
    return rates, users, chosen_modes
