"""Moving-average smoothing of the optimizer state across an utterance stream."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .cma import CmaState
from .errors import InvalidArgument

EMA_MODES = ("t_ema", "reset", "continuous")


@dataclass(frozen=True)
class EmaState:
    mean_ema: np.ndarray
    cov_ema: np.ndarray
    step_ema: float
    gamma: float
    initial: CmaState

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise InvalidArgument(f"gamma must lie in [0, 1), got {self.gamma}")
        if not self.step_ema > 0:
            raise InvalidArgument("step_ema must be positive")

    @classmethod
    def start(cls, initial: CmaState, gamma: float) -> "EmaState":
        return cls(initial.mean.copy(), initial.covariance.copy(), initial.step_size, gamma, initial)

    def to_dict(self) -> dict:
        return {
            "mean_ema": self.mean_ema.tolist(),
            "cov_ema": self.cov_ema.tolist(),
            "step_ema": self.step_ema,
            "gamma": self.gamma,
            "initial": self.initial.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EmaState":
        return cls(
            np.asarray(data["mean_ema"], dtype=float),
            np.asarray(data["cov_ema"], dtype=float),
            float(data["step_ema"]),
            float(data["gamma"]),
            CmaState.from_dict(data["initial"]),
        )


def ema_update(state: EmaState, finished: CmaState) -> EmaState:
    """Blend (mean, covariance, step size) with weight ``gamma`` on the old value."""
    if finished.dim != state.mean_ema.shape[0]:
        raise InvalidArgument(f"dimension mismatch: ema {state.mean_ema.shape[0]}, state {finished.dim}")
    g = state.gamma
    cov = g * state.cov_ema + (1 - g) * finished.covariance
    return replace(
        state,
        mean_ema=g * state.mean_ema + (1 - g) * finished.mean,
        cov_ema=0.5 * (cov + cov.T),
        step_ema=g * state.step_ema + (1 - g) * finished.step_size,
    )


def next_init(state: EmaState, mode: str, finished: CmaState) -> CmaState:
    """Initial optimizer state for the next utterance.

    ``state`` is expected to already include ``finished`` (see
    :func:`ema_update`); t_ema seeds from the blended moments with zeroed
    evolution paths.
    """
    if mode == "reset":
        return state.initial
    if mode == "continuous":
        return finished
    if mode != "t_ema":
        raise InvalidArgument(f"unknown ema mode {mode!r}")
    d = state.mean_ema.shape[0]
    return replace(
        finished,
        mean=state.mean_ema.copy(),
        covariance=state.cov_ema.copy(),
        step_size=float(state.step_ema),
        path_sigma=np.zeros(d),
        path_c=np.zeros(d),
        generation_count=0,
    )
