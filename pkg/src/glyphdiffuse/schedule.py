"""Linear variance schedule, closed-form forward marginal and reverse step.

Timesteps are 1-based at every public boundary: ``t`` ranges over
``1..T``.  Arrays are stored 0-based internally (``beta[t - 1]``).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ValidationError
from .tensor import Tensor, add, mul


@dataclass(frozen=True)
class Schedule:
    T: int
    beta: np.ndarray
    alpha: np.ndarray
    alpha_bar: np.ndarray
    beta_start: float
    beta_end: float
    family: str = "linear"

    def check_t(self, t) -> np.ndarray:
        arr = np.asarray(t, dtype=np.int64)
        if arr.size == 0 or arr.min() < 1 or arr.max() > self.T:
            raise ValidationError(f"timestep {t!r} outside [1, {self.T}]")
        return arr

    def beta_at(self, t) -> np.ndarray:
        return self.beta[self.check_t(t) - 1]

    def alpha_at(self, t) -> np.ndarray:
        return self.alpha[self.check_t(t) - 1]

    def alpha_bar_at(self, t) -> np.ndarray:
        return self.alpha_bar[self.check_t(t) - 1]

    def to_dict(self) -> dict:
        return {"T": self.T, "beta_start": self.beta_start, "beta_end": self.beta_end,
                "family": self.family}

    @classmethod
    def from_dict(cls, d: dict) -> "Schedule":
        if d.get("family", "linear") != "linear":
            raise ValidationError(f"unsupported schedule family {d['family']!r}")
        return linear_schedule(int(d["T"]), float(d["beta_start"]), float(d["beta_end"]))


def linear_schedule(T: int, beta_start: float = 1e-4, beta_end: float = 0.02) -> Schedule:
    if T < 1:
        raise ValidationError(f"T must be >= 1, got {T}")
    if not 0.0 < beta_start <= beta_end < 1.0:
        raise ValidationError(
            f"need 0 < beta_start <= beta_end < 1, got beta_start={beta_start}, beta_end={beta_end}")
    if T == 1:
        beta = np.array([beta_start], dtype=np.float64)
    else:
        beta = np.linspace(beta_start, beta_end, T, dtype=np.float64)
        beta[0], beta[-1] = beta_start, beta_end
    alpha = 1.0 - beta
    alpha_bar = np.cumprod(alpha)
    for arr in (beta, alpha, alpha_bar):
        arr.setflags(write=False)
    return Schedule(T, beta, alpha, alpha_bar, float(beta_start), float(beta_end))


def _per_item(coef: np.ndarray, like: Tensor) -> np.ndarray:
    # scalar t -> scalar; one t per batch item -> (B, 1, 1, ...)
    if coef.ndim == 0:
        return coef.astype(like.dtype)
    if coef.shape[0] != like.shape[0]:
        raise DimensionError(f"{coef.shape[0]} timesteps for a batch of {like.shape[0]}")
    return coef.reshape((-1,) + (1,) * (like.ndim - 1)).astype(like.dtype)


def q_sample(x0, t, eps, schedule: Schedule) -> Tensor:
    """Draw from q(x_t | x_0): sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.

    ``t`` is a single timestep or one per leading-axis item.
    """
    x0 = x0 if isinstance(x0, Tensor) else Tensor(x0)
    eps = eps if isinstance(eps, Tensor) else Tensor(eps)
    if x0.shape != eps.shape:
        raise DimensionError(f"q_sample: x0 {x0.shape} and eps {eps.shape} differ")
    ab = schedule.alpha_bar_at(t)
    return add(mul(x0, _per_item(np.sqrt(ab), x0)), mul(eps, _per_item(np.sqrt(1.0 - ab), x0)))


def posterior_mean(x_t: np.ndarray, eps_hat: np.ndarray, t: int, schedule: Schedule) -> np.ndarray:
    beta = schedule.beta_at(t)
    coef = beta / np.sqrt(1.0 - schedule.alpha_bar_at(t))
    return (x_t - coef * eps_hat) / np.sqrt(schedule.alpha_at(t))


def posterior_step(x_t, eps_hat, t: int, noise, schedule: Schedule) -> Tensor:
    """One ancestral step x_t -> x_{t-1} with sigma_t^2 = beta_t.

    The final step (t = 1) returns the mean and ignores ``noise``.
    """
    t = int(schedule.check_t(t))
    xt = np.asarray(x_t.data if isinstance(x_t, Tensor) else x_t)
    eh = np.asarray(eps_hat.data if isinstance(eps_hat, Tensor) else eps_hat)
    nz = np.asarray(noise.data if isinstance(noise, Tensor) else noise)
    if not xt.shape == eh.shape == nz.shape:
        raise DimensionError(f"posterior_step: shapes {xt.shape}, {eh.shape}, {nz.shape} differ")
    mu = posterior_mean(xt, eh, t, schedule)
    if t > 1:
        mu = mu + np.sqrt(schedule.beta_at(t)) * nz
    return Tensor(mu.astype(xt.dtype))
