"""Discrete bridge sampling: conditional interpolation and forward stepping.

All image math here is plain numpy; networks enter only through a callable
`net(x, t) -> x1_prediction` handed to `rollout`, which keeps the sampler
testable against closed-form oracles.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError


@dataclass
class BridgeSchedule:
    """Ordered time pool [t0..tT] in [0,1] with t0 = 0, plus variance sigma."""

    times: tuple = (0.0, 0.25, 0.5, 0.75, 1.0)
    sigma: float = 0.01

    def __post_init__(self):
        self.times = tuple(float(t) for t in self.times)
        if not self.times or self.times[0] != 0.0:
            raise ValidationError("schedule must start at t0 = 0")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValidationError("schedule times must be strictly increasing")
        if self.times[-1] > 1.0:
            raise ValidationError("schedule times must lie in [0, 1]")
        if self.sigma <= 0:
            raise ValidationError("sigma must be > 0")


def cfm_interpolate(x_tm, x_tn, t, t_m, t_n, sigma, rng):
    """Sample the conditional bridge state at time t given both endpoints.

    Mean is the linear interpolation w*x_tn + (1-w)*x_tm with
    w = (t - t_m)/(t_n - t_m); per-element variance is w*(1-w)*sigma*(t_n-t_m).
    Endpoints are exact (no noise added when the variance vanishes).
    """
    if t_m >= t_n:
        raise ValidationError("need t_m < t_n")
    if not t_m <= t <= t_n:
        raise ValidationError(f"t={t} outside [{t_m}, {t_n}]")
    w = (t - t_m) / (t_n - t_m)
    if w == 0.0:
        return np.array(x_tm, copy=True)
    if w == 1.0:
        return np.array(x_tn, copy=True)
    mean = w * np.asarray(x_tn, dtype=np.float64) + (1 - w) * np.asarray(x_tm, dtype=np.float64)
    var = w * (1 - w) * sigma * (t_n - t_m)
    if var > 0:
        mean = mean + rng.normal(0.0, np.sqrt(var), size=mean.shape)
    return mean


def diffusion_step(x_tj, x1_pred, t_j, t_next, sigma, rng):
    """One forward bridge step from t_j to t_next given the terminal prediction.

    w = (t_next - t_j)/(1 - t_j); noise variance alpha = w*(1-w)*(1-t_j)*sigma.
    At t_next = 1 the step is deterministic and returns x1_pred exactly.
    """
    if t_j >= 1.0:
        raise ValidationError("bridge already terminal at t_j = 1")
    if not t_j < t_next <= 1.0:
        raise ValidationError(f"need t_j < t_next <= 1, got {t_j} -> {t_next}")
    w = (t_next - t_j) / (1.0 - t_j)
    if w == 1.0:
        return np.array(x1_pred, copy=True)
    out = w * np.asarray(x1_pred, dtype=np.float64) + (1 - w) * np.asarray(x_tj, dtype=np.float64)
    alpha = w * (1 - w) * (1 - t_j) * sigma
    if alpha > 0:
        out = out + rng.normal(0.0, np.sqrt(alpha), size=out.shape)
    return out


def rollout(x0, t_i, net, schedule: BridgeSchedule, rng):
    """Generate x at pool time t_i by iterating predict + diffusion_step.

    `net` is any callable (x, t) -> x1 prediction operating on numpy arrays;
    no gradients are recorded. t_i = 0 returns x0 unchanged with zero net
    calls.
    """
    times = schedule.times
    if t_i not in times:
        raise ValidationError(f"t_i={t_i} not in schedule pool {times}")
    idx = times.index(t_i)
    x = np.array(x0, dtype=np.float64, copy=True)
    for j in range(idx):
        x1 = np.asarray(net(x, times[j]), dtype=np.float64)
        x = diffusion_step(x, x1, times[j], times[j + 1], schedule.sigma, rng)
    return x
