import json
import logging
import math
from typing import List, Tuple

import numpy as np
from pydantic import ValidationError

from services.schema import ChannelRealization, NoiseModel, SystemGeometry

_MASK64 = (1 << 64) - 1
_GAIN_FIELDS = ("gamma_SR", "gamma_SD1", "gamma_SD2", "gamma_RD")


class RealizationFormatError(ValueError):
    """Malformed channel dump; `field` names the offending JSON key."""

    def __init__(self, field: str, message: str):
        self.field = field
        self.message = message
        super().__init__(f"{field}: {message}")


def default_user_angles(num_users: int) -> List[float]:
    """Equally spaced midpoints over [-pi/2, pi/2]."""
    return [-math.pi / 2 + (k + 0.5) * math.pi / num_users for k in range(num_users)]


def user_distances(geometry: SystemGeometry) -> Tuple[np.ndarray, np.ndarray]:
    """Return (relay-to-user, source-to-user) distances.

    The source sits at distance d_SR on the far side of the relay, so a user at
    angle theta sees d_SD^2 = d_SR^2 + d_RD^2 + 2 d_SR d_RD cos(theta).
    """
    angles = np.asarray(geometry.user_angles or default_user_angles(geometry.num_users))
    d_sr = geometry.source_relay_distance
    d_rd = geometry.relay_user_radius
    relay = np.full(geometry.num_users, d_rd)
    source = np.sqrt(d_sr ** 2 + d_rd ** 2 + 2.0 * d_sr * d_rd * np.cos(angles))
    return relay, source


def splitmix64(value: int) -> int:
    z = (value + 0x9E3779B97F4A7C15) & _MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def trial_seed(root_seed: int, trial: int) -> int:
    """Seed for Monte Carlo trial `trial` under `root_seed`."""
    return splitmix64((root_seed + trial) & _MASK64)


def snr_to_total_power(snr_db: float, num_subcarriers: int, noise_power: float = 1.0) -> float:
    return num_subcarriers * noise_power * 10.0 ** (snr_db / 10.0)


def total_power_to_snr(total_power: float, num_subcarriers: int, noise_power: float = 1.0) -> float:
    return 10.0 * math.log10(total_power / (num_subcarriers * noise_power))


def _rayleigh_gains(rng: np.random.Generator, mean_gain: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    # |h|^2 with h ~ CN(0, mean_gain)
    scale = np.sqrt(mean_gain / 2.0)
    h = scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))
    return np.abs(h) ** 2


def generate_realization(geometry: SystemGeometry, noise: NoiseModel, num_subcarriers: int,
                         seed: int) -> ChannelRealization:
    """Draw one i.i.d. Rayleigh realization of all normalized gains."""
    if num_subcarriers < 1:
        raise ValueError(f"number of subcarriers must be >= 1, got {num_subcarriers}")
    k = geometry.num_users
    n = num_subcarriers
    alpha = geometry.path_loss_exponent
    d_rd, d_sd = user_distances(geometry)
    if np.any(d_sd <= 0):
        raise ValueError("source-to-user distance must be > 0")

    sigma_k = noise.user_noise(k)[:, None]
    sigma_r = noise.relay_noise_power
    rng = np.random.default_rng(seed & _MASK64)

    # draw order is part of the determinism contract
    gamma_sr = _rayleigh_gains(rng, geometry.source_relay_distance ** -alpha, (n,)) / sigma_r
    gamma_sd1 = _rayleigh_gains(rng, (d_sd ** -alpha)[:, None], (k, n)) / sigma_k
    gamma_rd = _rayleigh_gains(rng, (d_rd ** -alpha)[:, None], (k, n)) / sigma_k
    gamma_sd2 = _rayleigh_gains(rng, (d_sd ** -alpha)[:, None], (k, n)) / sigma_k

    return ChannelRealization(
        N=n, K=k, seed=seed,
        gamma_SR=gamma_sr, gamma_SD1=gamma_sd1, gamma_SD2=gamma_sd2, gamma_RD=gamma_rd,
    )


def _format_number(x: float) -> str:
    return format(float(x), ".17g")


def _format_array(array: np.ndarray) -> str:
    if array.ndim == 1:
        return "[" + ", ".join(_format_number(x) for x in array) + "]"
    return "[" + ", ".join(_format_array(row) for row in array) + "]"


def dumps_realization(realization: ChannelRealization) -> str:
    parts = [
        f'"N": {realization.N}',
        f'"K": {realization.K}',
        f'"seed": {realization.seed}',
    ]
    for name in _GAIN_FIELDS:
        parts.append(f'"{name}": {_format_array(getattr(realization, name))}')
    return "{\n  " + ",\n  ".join(parts) + "\n}\n"


def loads_realization(text: str) -> ChannelRealization:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise RealizationFormatError("<document>", f"invalid JSON: {e}")
    if not isinstance(data, dict):
        raise RealizationFormatError("<document>", "expected a JSON object")
    for name in ("N", "K") + _GAIN_FIELDS:
        if name not in data:
            raise RealizationFormatError(name, "missing field")
    try:
        return ChannelRealization(**data)
    except ValidationError as e:
        error = e.errors()[0]
        field = ".".join(str(part) for part in error["loc"]) or "<document>"
        cause = error.get("ctx", {}).get("error")
        raise RealizationFormatError(field, str(cause) if cause is not None else error["msg"])


def save_realization(realization: ChannelRealization, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(dumps_realization(realization))
    logging.debug(f"Saved channel realization seed={realization.seed} to {path}")


def load_realization(path: str) -> ChannelRealization:
    with open(path, "r", encoding="utf-8") as f:
        return loads_realization(f.read())
