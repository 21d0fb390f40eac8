"""Monte Carlo experiments, convergence traces and oracle certification."""
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, Field, field_validator, model_validator

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from services.baselines import SCHEMES, UnknownSchemeError, run_scheme
from services.channel import (
    generate_realization,
    save_realization,
    snr_to_total_power,
    total_power_to_snr,
    trial_seed,
)
from services.dual_solver import TraceRow, convergence_trace, solve
from services.oracle import OracleLimitError, OracleLimits, enumeration_count, oracle_solve
from services.schema import NoiseModel, SolverConfig, SystemGeometry

__all__ = [
    "CSV_COLUMNS",
    "CertificationInstance",
    "CertificationReport",
    "ExperimentSpec",
    "ImprovementRow",
    "ResultRow",
    "TraceRow",
    "certify",
    "convergence_trace",
    "improvement_rows",
    "load_experiment_spec",
    "run_experiment",
    "write_improvement_csv",
    "write_results_csv",
]

CSV_COLUMNS = ["scheme", "N", "snr_dB", "P_t", "mean_rate", "stderr_rate", "mean_iterations", "trials"]
SNR_DEFINITION = "P_t = N * sigma_r^2 * 10^(snr_dB/10)"
ORACLE = "oracle"
EXPERIMENT_SCHEMES = SCHEMES + (ORACLE,)


class ExperimentSpec(BaseModel):
    geometry: SystemGeometry = Field(default_factory=SystemGeometry)
    noise: NoiseModel = Field(default_factory=NoiseModel)
    N_values: List[int] = Field(description="Numbers of subcarriers to sweep")
    snr_dB_values: Optional[List[float]] = Field(default=None, description="SNR points, mapped to P_t per N")
    P_t_values: Optional[List[float]] = Field(default=None, description="Total power points, used as given")
    schemes: List[str] = Field(default_factory=lambda: ["proposed"])
    trials: int = Field(default=2000, ge=1)
    root_seed: int = 0
    solver: SolverConfig = Field(default_factory=SolverConfig)

    @field_validator("N_values")
    @classmethod
    def _positive_sizes(cls, value: List[int]) -> List[int]:
        if not value or any(n < 1 for n in value):
            raise ValueError("N_values must be a non-empty list of positive integers")
        return value

    @field_validator("schemes")
    @classmethod
    def _known_schemes(cls, value: List[str]) -> List[str]:
        if not value:
            raise ValueError("at least one scheme is required")
        for name in value:
            if name not in EXPERIMENT_SCHEMES:
                raise UnknownSchemeError(f"unknown scheme '{name}', expected one of {', '.join(EXPERIMENT_SCHEMES)}")
        return value

    @model_validator(mode="after")
    def _one_power_axis(self) -> "ExperimentSpec":
        if (self.snr_dB_values is None) == (self.P_t_values is None):
            raise ValueError("give exactly one of snr_dB_values and P_t_values")
        points = self.snr_dB_values if self.snr_dB_values is not None else self.P_t_values
        if not points:
            raise ValueError("the power axis must have at least one point")
        if self.P_t_values is not None and any(p <= 0 for p in self.P_t_values):
            raise ValueError("P_t_values must be > 0")
        return self

    def power_points(self, num_subcarriers: int) -> List[Tuple[float, float]]:
        """(snr_dB, P_t) for every point of the power axis at this N."""
        sigma = self.noise.relay_noise_power
        if self.snr_dB_values is not None:
            return [(snr, snr_to_total_power(snr, num_subcarriers, sigma)) for snr in self.snr_dB_values]
        return [(total_power_to_snr(p, num_subcarriers, sigma), p) for p in self.P_t_values]


class ResultRow(BaseModel):
    scheme: str
    N: int
    snr_dB: float
    P_t: float
    mean_rate: float
    stderr_rate: float = Field(ge=0)
    mean_iterations: float
    trials: int


def _run_trial(spec: ExperimentSpec, num_subcarriers: int, trial: int) -> Dict[Tuple[str, int], Tuple[float, int]]:
    """Rates and iteration counts of every scheme at every power point for one realization."""
    seed = trial_seed(spec.root_seed, trial)
    ch = generate_realization(spec.geometry, spec.noise, num_subcarriers, seed)
    results = {}
    for index, (_, total_power) in enumerate(spec.power_points(num_subcarriers)):
        cfg = spec.solver.model_copy(update={"total_power": total_power})
        for scheme in spec.schemes:
            if scheme == ORACLE:
                report = oracle_solve(ch, total_power, OracleLimits.from_env())
            else:
                report = run_scheme(scheme, ch, cfg)
            results[(scheme, index)] = (report.primal_rate, report.iterations)
    return results


def _run_trial_star(args) -> Dict[Tuple[str, int], Tuple[float, int]]:
    return _run_trial(*args)


def run_experiment(spec: ExperimentSpec, threads: int = 1) -> List[ResultRow]:
    """Average every (scheme, N, power point) cell over the seeded trials.

    Trial t draws the same realization for every scheme and power point, so
    schemes are compared on paired samples.
    """
    if ORACLE in spec.schemes:
        limits = OracleLimits.from_env()
        for n in spec.N_values:
            count = enumeration_count(n, spec.geometry.num_users)
            if n > limits.max_N or spec.geometry.num_users > limits.max_K or count > limits.max_enumeration:
                raise OracleLimitError(count, f"oracle requested for N={n}, K={spec.geometry.num_users}: {count} configurations")

    rows: List[ResultRow] = []
    for n in spec.N_values:
        logging.info(f"Running N={n}: {spec.trials} trials, schemes {', '.join(spec.schemes)}")
        jobs = [(spec, n, t) for t in range(spec.trials)]
        if threads > 1:
            with ProcessPoolExecutor(max_workers=threads) as pool:
                outcomes = list(pool.map(_run_trial_star, jobs, chunksize=max(1, len(jobs) // (4 * threads))))
        else:
            outcomes = [_run_trial_star(job) for job in jobs]

        for index, (snr, total_power) in enumerate(spec.power_points(n)):
            for scheme in spec.schemes:
                rates = np.array([o[(scheme, index)][0] for o in outcomes])
                iterations = np.array([o[(scheme, index)][1] for o in outcomes], dtype=float)
                stderr = float(np.std(rates, ddof=1) / math.sqrt(len(rates))) if len(rates) > 1 else 0.0
                rows.append(ResultRow(
                    scheme=scheme, N=n, snr_dB=snr, P_t=total_power,
                    mean_rate=float(np.mean(rates)), stderr_rate=stderr,
                    mean_iterations=float(np.mean(iterations)), trials=len(rates),
                ))
    rows.sort(key=lambda r: (r.scheme, r.N, r.snr_dB))
    return rows


class ImprovementRow(BaseModel):
    N: int
    snr_dB: float
    P_t: float
    scheme: str
    reference: str
    mean_gain: float = Field(description="Difference of the mean rates, bits/s/Hz")
    improvement_pct: float = Field(description="100 * mean_gain / mean rate of the reference")


IMPROVEMENT_COLUMNS = list(ImprovementRow.model_fields)


def improvement_rows(rows: List[ResultRow], scheme: str = "proposed",
                     reference: str = "conventional-df") -> List[ImprovementRow]:
    """Gain of `scheme` over `reference` in every (N, power point) cell both were run on."""
    baseline = {(r.N, r.snr_dB): r for r in rows if r.scheme == reference}
    table = []
    for row in rows:
        if row.scheme != scheme or (row.N, row.snr_dB) not in baseline:
            continue
        ref = baseline[(row.N, row.snr_dB)]
        gain = row.mean_rate - ref.mean_rate
        table.append(ImprovementRow(
            N=row.N, snr_dB=row.snr_dB, P_t=row.P_t, scheme=scheme, reference=reference,
            mean_gain=gain,
            improvement_pct=100.0 * gain / ref.mean_rate if ref.mean_rate > 0 else 0.0,
        ))
    table.sort(key=lambda r: (r.N, r.snr_dB))
    return table


def write_improvement_csv(rows: List[ImprovementRow], path: str) -> None:
    pd.DataFrame([row.model_dump() for row in rows], columns=IMPROVEMENT_COLUMNS).to_csv(path, index=False)
    logging.info(f"Wrote {len(rows)} improvement rows to {path}")


def experiment_header(spec: ExperimentSpec) -> Dict[str, str]:
    return {
        "snr_definition": SNR_DEFINITION,
        "relay_noise_power": str(spec.noise.relay_noise_power),
        "root_seed": str(spec.root_seed),
        "trials": str(spec.trials),
        "num_users": str(spec.geometry.num_users),
    }


def write_results_csv(rows: List[ResultRow], path: str, header_lines: Optional[Dict[str, str]] = None) -> None:
    df = pd.DataFrame([row.model_dump() for row in rows], columns=CSV_COLUMNS)
    with open(path, "w", encoding="utf-8", newline="") as f:
        for key, value in (header_lines or {}).items():
            f.write(f"# {key}: {value}\n")
        df.to_csv(f, index=False)
    logging.info(f"Wrote {len(rows)} result rows to {path}")


def read_results_csv(path: str) -> pd.DataFrame:
    return pd.read_csv(path, comment="#")


def load_experiment_spec(path: str) -> ExperimentSpec:
    """Read an experiment spec from a .toml or .json file."""
    if path.endswith(".toml"):
        with open(path, "rb") as f:
            data = tomllib.load(f)
    else:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    return ExperimentSpec(**data)


class CertificationInstance(BaseModel):
    seed: int
    oracle_rate: float
    solver_rate: float
    dual_value: float
    ratio: float
    budget_error: float

    def dual_bound_holds(self, tolerance: float) -> bool:
        """Dual value bounds the oracle rate from above, up to `tolerance` relative."""
        return self.dual_value >= self.oracle_rate * (1.0 - tolerance)


class CertificationReport(BaseModel):
    instances: List[CertificationInstance]
    ratio_threshold: float
    quantile: float
    fraction_within: float
    dual_bound_ok: bool
    budget_ok: bool
    passed: bool


def _certify_one(job) -> CertificationInstance:
    geometry, noise, num_subcarriers, seed, cfg, limits = job
    ch = generate_realization(geometry, noise, num_subcarriers, seed)
    exact = oracle_solve(ch, cfg.total_power, limits)
    report = solve(ch, cfg)
    return CertificationInstance(
        seed=seed,
        oracle_rate=exact.primal_rate,
        solver_rate=report.primal_rate,
        dual_value=report.dual_value,
        ratio=report.primal_rate / exact.primal_rate if exact.primal_rate > 0 else 1.0,
        budget_error=abs(report.power_residual) / cfg.total_power,
    )


def certify(trials: int, num_subcarriers: int, num_users: int, total_power: float, root_seed: int = 0,
            ratio: float = 0.98, quantile: float = 0.95, dual_tolerance: float = 1e-4,
            cfg: Optional[SolverConfig] = None, geometry: Optional[SystemGeometry] = None,
            noise: Optional[NoiseModel] = None, limits: Optional[OracleLimits] = None,
            dump_dir: Optional[str] = None, threads: int = 1) -> CertificationReport:
    """Compare the dual solver against the exhaustive oracle on seeded instances.

    Passes when at least `quantile` of the instances reach `ratio` of the
    oracle rate, every dual value bounds the oracle rate from above within
    `dual_tolerance` relative, and every restored allocation spends the budget
    exactly.
    """
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    geometry = geometry or SystemGeometry(num_users=num_users)
    if geometry.num_users != num_users:
        geometry = geometry.model_copy(update={"num_users": num_users, "user_angles": None})
    noise = noise or NoiseModel()
    cfg = (cfg or SolverConfig()).model_copy(update={"total_power": total_power})
    limits = limits or OracleLimits.from_env()

    jobs = [(geometry, noise, num_subcarriers, trial_seed(root_seed, t), cfg, limits) for t in range(trials)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            instances = list(pool.map(_certify_one, jobs, chunksize=max(1, trials // (4 * threads))))
    else:
        instances = [_certify_one(job) for job in jobs]

    if dump_dir is not None:
        for instance in instances:
            if instance.ratio < ratio:
                os.makedirs(dump_dir, exist_ok=True)
                ch = generate_realization(geometry, noise, num_subcarriers, instance.seed)
                save_realization(ch, os.path.join(dump_dir, f"channel_{instance.seed}.json"))

    fraction = sum(1 for i in instances if i.ratio >= ratio) / len(instances)
    dual_ok = all(i.dual_bound_holds(dual_tolerance) for i in instances)
    budget_ok = all(i.budget_error <= 1e-9 for i in instances)
    passed = fraction >= quantile and dual_ok and budget_ok
    logging.info(
        f"Certification N={num_subcarriers} K={num_users}: {fraction:.1%} within {ratio:.0%} of the oracle, "
        f"dual bound {'ok' if dual_ok else 'violated'}, budget {'ok' if budget_ok else 'violated'}"
    )
    return CertificationReport(
        instances=instances,
        ratio_threshold=ratio,
        quantile=quantile,
        fraction_within=fraction,
        dual_bound_ok=dual_ok,
        budget_ok=budget_ok,
        passed=passed,
    )
