import math
import os
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationInfo, field_validator, model_validator


class SystemGeometry(BaseModel):
    """Source, relay and users laid out as a line plus a semicircle around the relay."""
    source_relay_distance: float = Field(default=10.0, gt=0, description="Source to relay distance d_SR")
    relay_user_radius: float = Field(default=5.0, gt=0, description="Radius d_RD of the user semicircle")
    num_users: int = Field(default=4, ge=1, description="Number of users K")
    user_angles: Optional[List[float]] = Field(
        default=None,
        description="User angles in radians on the right semicircle; equally spaced when omitted",
    )
    path_loss_exponent: float = Field(default=3.0, gt=0, description="Mean gain falls off as d^(-alpha)")

    @model_validator(mode="after")
    def _check_angles(self) -> "SystemGeometry":
        if self.user_angles is None:
            return self
        if len(self.user_angles) != self.num_users:
            raise ValueError(f"user_angles has {len(self.user_angles)} entries, expected {self.num_users}")
        for angle in self.user_angles:
            if not -math.pi / 2 <= angle <= math.pi / 2:
                raise ValueError(f"user angle {angle} outside [-pi/2, pi/2]")
        return self


class NoiseModel(BaseModel):
    relay_noise_power: float = Field(default=1.0, gt=0, description="sigma_r^2")
    user_noise_powers: Optional[List[float]] = Field(
        default=None, description="sigma_k^2 per user; all equal to the relay noise when omitted"
    )

    @field_validator("user_noise_powers")
    @classmethod
    def _positive(cls, value: Optional[List[float]]) -> Optional[List[float]]:
        if value is not None and any(v <= 0 for v in value):
            raise ValueError("noise powers must be > 0")
        return value

    def user_noise(self, num_users: int) -> np.ndarray:
        if self.user_noise_powers is None:
            return np.full(num_users, self.relay_noise_power)
        if len(self.user_noise_powers) != num_users:
            raise ValueError(f"user_noise_powers has {len(self.user_noise_powers)} entries, expected {num_users}")
        return np.asarray(self.user_noise_powers, dtype=float)


class ChannelRealization(BaseModel):
    """Normalized gains of one two-phase period. Arrays are read-only after validation."""
    model_config = ConfigDict(arbitrary_types_allowed=True, frozen=True)

    N: int = Field(ge=1, description="Number of subcarriers")
    K: int = Field(ge=1, description="Number of users")
    seed: int = Field(default=0, description="Seed the realization was drawn from")
    gamma_SR: np.ndarray = Field(description="Source to relay gain per first-phase subcarrier, shape (N,)")
    gamma_SD1: np.ndarray = Field(description="Source to user gain, first phase, shape (K, N)")
    gamma_SD2: np.ndarray = Field(description="Source to user gain, second phase, shape (K, N)")
    gamma_RD: np.ndarray = Field(description="Relay to user gain, second phase, shape (K, N)")

    @field_validator("gamma_SR", "gamma_SD1", "gamma_SD2", "gamma_RD", mode="before")
    @classmethod
    def _gain_array(cls, value, info: ValidationInfo) -> np.ndarray:
        if "N" not in info.data or "K" not in info.data:
            raise ValueError("shape error: N and K must be valid before gains")
        n, k = info.data["N"], info.data["K"]
        expected = (n,) if info.field_name == "gamma_SR" else (k, n)
        try:
            array = np.array(value, dtype=float)
        except (TypeError, ValueError):
            raise ValueError(f"shape error: expected a numeric array of shape {expected}")
        if array.shape != expected:
            raise ValueError(f"shape error: expected {expected}, got {array.shape}")
        if not np.all(np.isfinite(array)):
            raise ValueError("invariant violation: gain not finite")
        if np.any(array < 0):
            raise ValueError("invariant violation: gain < 0")
        array.setflags(write=False)
        return array

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ChannelRealization):
            return NotImplemented
        return (
            (self.N, self.K, self.seed) == (other.N, other.K, other.seed)
            and all(
                np.array_equal(getattr(self, name), getattr(other, name))
                for name in ("gamma_SR", "gamma_SD1", "gamma_SD2", "gamma_RD")
            )
        )

    __hash__ = None


class Pairing(BaseModel):
    """perm[m] = n means first-phase subcarrier m is paired with second-phase subcarrier n."""
    perm: List[int]

    @field_validator("perm")
    @classmethod
    def _is_permutation(cls, value: List[int]) -> List[int]:
        if sorted(value) != list(range(len(value))):
            raise ValueError(f"pairing {value} is not a permutation of 0..{len(value) - 1}")
        return value

    @classmethod
    def identity(cls, n: int) -> "Pairing":
        return cls(perm=list(range(n)))


class AssignmentSolution(BaseModel):
    pairing: Pairing
    user_of_pair: List[int] = Field(description="User served by pair (m, perm[m])")
    mode_of_pair: List[bool] = Field(description="True when the pair works in relaying mode")

    @model_validator(mode="after")
    def _lengths(self) -> "AssignmentSolution":
        n = len(self.pairing.perm)
        if len(self.user_of_pair) != n or len(self.mode_of_pair) != n:
            raise ValueError("user_of_pair and mode_of_pair must have one entry per pair")
        if any(k < 0 for k in self.user_of_pair):
            raise ValueError("user indices must be >= 0")
        return self

    def key(self) -> tuple:
        return (tuple(self.pairing.perm), tuple(self.user_of_pair), tuple(self.mode_of_pair))


class PowerAllocation(BaseModel):
    """Powers per first-phase subcarrier m, i.e. per pair (m, perm[m])."""
    relay_power: List[float] = Field(description="Pooled relaying-mode power S^{k,mn}")
    direct_first: List[float] = Field(description="Idle-mode first-phase direct power S^m")
    direct_second: List[float] = Field(description="Idle-mode second-phase direct power S^n")

    @model_validator(mode="after")
    def _nonnegative(self) -> "PowerAllocation":
        if not len(self.relay_power) == len(self.direct_first) == len(self.direct_second):
            raise ValueError("power arrays must have equal length")
        for name in ("relay_power", "direct_first", "direct_second"):
            if any(p < 0 or not math.isfinite(p) for p in getattr(self, name)):
                raise ValueError(f"{name} must be finite and >= 0")
        return self

    @classmethod
    def zeros(cls, n: int) -> "PowerAllocation":
        return cls(relay_power=[0.0] * n, direct_first=[0.0] * n, direct_second=[0.0] * n)

    def total(self) -> float:
        return float(np.sum(self.relay_power) + np.sum(self.direct_first) + np.sum(self.direct_second))


IdleModel = Literal["improved", "conventional"]


class SolverConfig(BaseModel):
    """Dual iteration settings. Defaults follow the documented design decisions."""
    total_power: float = Field(default=10.0, gt=0, description="Total power budget P_t")
    lambda_init: Optional[float] = Field(
        default=None, gt=0, description="Initial price; water-filling price of the strongest channels when omitted"
    )
    step_rule: Literal["curvature", "diminishing"] = Field(default="curvature")
    step_scale: Optional[float] = Field(
        default=None, gt=0, description="a0 in a(i) = a0/sqrt(i); 1.0 for curvature, 0.01 for diminishing when omitted"
    )
    epsilon: float = Field(default=1e-4, gt=0, le=1, description="Relative price change that stops the iteration")
    max_iter: int = Field(default=2000, ge=1)
    lambda_floor: float = Field(default=1e-12, gt=0)
    pool_restricted_runs: bool = Field(
        default=False, description="Also pool the conventional, identity-pairing and equal-power candidates"
    )

    @property
    def a0(self) -> float:
        if self.step_scale is not None:
            return self.step_scale
        return 1.0 if self.step_rule == "curvature" else 0.01

    @classmethod
    def from_env(cls, **overrides) -> "SolverConfig":
        values = {}
        env_map = {
            "step_scale": ("SOLVER_STEP_SCALE", float),
            "step_rule": ("SOLVER_STEP_RULE", str),
            "epsilon": ("SOLVER_EPSILON", float),
            "max_iter": ("SOLVER_MAX_ITER", int),
            "lambda_floor": ("SOLVER_LAMBDA_FLOOR", float),
            "pool_restricted_runs": ("SOLVER_POOL_RESTRICTED_RUNS", lambda s: s.strip().lower() in ("1", "true", "yes")),
        }
        for field_name, (env_key, cast) in env_map.items():
            raw = os.environ.get(env_key)
            if raw:
                values[field_name] = cast(raw)
        values.update(overrides)
        return cls(**values)


class AllocationReport(BaseModel):
    scheme: str = "proposed"
    solution: AssignmentSolution
    powers: PowerAllocation
    primal_rate: float = Field(description="Sum rate of the reported feasible solution, bits/s/Hz")
    per_pair_rates: List[float] = Field(default_factory=list, description="Rate of pair (m, perm[m]) in bits/s/Hz")
    dual_value: Optional[float] = Field(default=None, description="Best dual value seen, bits/s/Hz")
    iterations: int = 0
    lambda_final: Optional[float] = None
    converged: bool = True
    total_power: float
    consumed_power: float
    power_residual: float = Field(description="consumed_power - total_power")
