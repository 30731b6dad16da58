"""Weibull transition intensities of the illness-death model.

alpha(t) = shape * scale**shape * t**(shape - 1) * exp(lp)
A(t)     = (scale * t)**shape * exp(lp)

where ``lp`` is the covariate linear predictor gamma.w.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class HazardDomainError(ValueError):
    pass


@dataclass(frozen=True)
class TransitionParams:
    lambda1: float  # shape
    lambda2: float  # scale, 1/years
    gamma: np.ndarray = field(default_factory=lambda: np.zeros(0))
    w: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        if not (self.lambda1 > 0 and self.lambda2 > 0):
            raise ValueError("Weibull shape and scale must be positive")

    @property
    def lp(self) -> float:
        return float(np.dot(np.asarray(self.gamma, float), np.asarray(self.w, float)))


def log_hazard(t, shape, scale, lp=0.0):
    """Vectorised log intensity; t must be > 0 (or shape == 1)."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        tail = (np.asarray(shape) - 1.0) * np.log(t)
    if np.any(t == 0):
        tail = np.where(np.asarray(shape) == 1.0, 0.0, tail)
    return np.log(shape) + shape * np.log(scale) + tail + lp


def cumhaz(t, shape, scale, lp=0.0):
    """Vectorised cumulative intensity, 0 at t = 0."""
    t = np.asarray(t, dtype=float)
    return np.power(scale * t, shape) * np.exp(lp)


def inverse_cumhaz(v, shape, scale, lp=0.0):
    """Age t such that A(t) = v."""
    v = np.asarray(v, dtype=float)
    return np.power(v * np.exp(-lp), 1.0 / shape) / scale


def intensity(p: TransitionParams, t: float) -> float:
    if t <= 0:
        if p.lambda1 < 1:
            raise HazardDomainError("intensity is infinite at t=0 for shape < 1")
        if t < 0:
            raise HazardDomainError("intensity undefined for t < 0")
    return float(np.exp(log_hazard(t, p.lambda1, p.lambda2, p.lp)))


def cumulative(p: TransitionParams, t: float) -> float:
    if t < 0:
        raise HazardDomainError("cumulative intensity undefined for t < 0")
    return float(cumhaz(t, p.lambda1, p.lambda2, p.lp))


def intensity_12(p: TransitionParams, t: float, t_dem: float, markovian: bool) -> float:
    """Death intensity after dementia onset at ``t_dem``.

    Markovian: depends on age ``t``. Semi-markovian: on the duration t - t_dem.
    """
    if markovian:
        return intensity(p, t)
    if t < t_dem:
        raise HazardDomainError("semi-markovian intensity needs t >= t_dem")
    return intensity(p, t - t_dem)


def cumulative_12(p: TransitionParams, t: float, t_dem: float, markovian: bool) -> float:
    """Cumulative 1->2 intensity accrued between onset and ``t``."""
    if t < t_dem:
        raise HazardDomainError("need t >= t_dem")
    if markovian:
        return cumulative(p, t) - cumulative(p, t_dem)
    return cumulative(p, t - t_dem)
