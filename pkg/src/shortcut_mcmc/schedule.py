"""Variance-preserving noise schedule on a discrete grid t = 0..T.

The schedule is parameterized by a linear ramp in ``gamma = log(sigma^2 / alpha^2)``
so that ``sigma_t^2 = sigmoid(gamma_t)`` and ``alpha_t^2 = sigmoid(-gamma_t)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class ScheduleConfig:
    T: int = 200
    gamma_min: float = -13.3
    gamma_max: float = 5.0

    def validate(self) -> None:
        if not isinstance(self.T, (int, np.integer)) or self.T < 2:
            raise ConfigError(f"T must be an integer >= 2, got {self.T!r}")
        if not np.isfinite(self.gamma_min) or not np.isfinite(self.gamma_max):
            raise ConfigError("gamma endpoints must be finite")
        if self.gamma_min >= self.gamma_max:
            raise ConfigError(
                f"gamma_min ({self.gamma_min}) must be < gamma_max ({self.gamma_max})")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # Branch on sign so neither side overflows.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """Precomputed (alpha_t, sigma_t) pairs, indexed t = 0..T."""

    config: ScheduleConfig
    alpha: np.ndarray
    sigma: np.ndarray
    gamma: np.ndarray = field(repr=False)

    @property
    def T(self) -> int:
        return int(self.config.T)

    @property
    def alpha2(self) -> np.ndarray:
        return self.alpha**2

    @property
    def sigma2(self) -> np.ndarray:
        return self.sigma**2

    @property
    def snr(self) -> np.ndarray:
        return np.exp(-self.gamma)

    def _check_step(self, t) -> None:
        if np.any(np.asarray(t) < 0) or np.any(np.asarray(t) > self.T):
            raise ValueError(f"step index out of range [0, {self.T}]: {t!r}")


def build_schedule(config: ScheduleConfig | None = None) -> NoiseSchedule:
    config = config or ScheduleConfig()
    config.validate()
    steps = np.arange(config.T + 1, dtype=np.float64)
    gamma = config.gamma_min + (config.gamma_max - config.gamma_min) * steps / config.T
    sigma = np.sqrt(_sigmoid(gamma))
    alpha = np.sqrt(_sigmoid(-gamma))
    for arr in (gamma, sigma, alpha):
        arr.setflags(write=False)
    return NoiseSchedule(config=config, alpha=alpha, sigma=sigma, gamma=gamma)


def transition_coeffs(sch: NoiseSchedule, s, t):
    """Return ``(alpha_{t|s}, sigma^2_{t|s})`` for the jump from step s to step t.

    Scalar steps give floats; array steps broadcast and give arrays.
    """
    sch._check_step(s)
    sch._check_step(t)
    if np.any(np.asarray(s) > np.asarray(t)):
        raise ValueError(f"transition requires s <= t, got s={s}, t={t}")
    alpha_ts = sch.alpha[t] / sch.alpha[s]
    # sigma_t^2 - alpha_{t|s}^2 sigma_s^2 == -sigma_t^2 * expm1(gamma_s - gamma_t),
    # which avoids cancellation when s and t are close.
    sigma2_ts = np.maximum(-sch.sigma[t] ** 2 * np.expm1(sch.gamma[s] - sch.gamma[t]), 0.0)
    if np.ndim(alpha_ts) == 0:
        return float(alpha_ts), float(sigma2_ts)
    return alpha_ts, sigma2_ts


def posterior_variance(sch: NoiseSchedule, s: int, t: int) -> float:
    if s >= t:
        raise ValueError(f"posterior variance requires s < t, got s={s}, t={t}")
    _, sigma2_ts = transition_coeffs(sch, s, t)
    return float(sigma2_ts * sch.sigma[s] ** 2 / sch.sigma[t] ** 2)


def posterior_coeffs(sch: NoiseSchedule, s: int, t: int) -> tuple[float, float]:
    """Weights ``(c_xt, c_x0)`` of the forward posterior mean c_xt * x_t + c_x0 * x_0."""
    if s >= t:
        raise ValueError(f"posterior mean requires s < t, got s={s}, t={t}")
    alpha_ts, sigma2_ts = transition_coeffs(sch, s, t)
    sigma2_t = sch.sigma[t] ** 2
    c_xt = alpha_ts * sch.sigma[s] ** 2 / sigma2_t
    c_x0 = sch.alpha[s] * sigma2_ts / sigma2_t
    return float(c_xt), float(c_x0)
