"""Measurement-trust gating from predicted-versus-actual pose displacement.

The next pose measurement is expected at the previous measurement advanced by
the current velocity estimate.  Per-axis displacements between the actual and
expected measurement pass through radial-basis kernels whose inverse responses
inflate the base measurement variance, so measurements far from the expected
motion carry little weight in the filter.  While the platform is externally
motion-constrained the x/y bandwidths shrink by ``alpha``, tightening the
gate; the z bandwidth never shrinks because height stays bound to the road
surface.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .geometry import Pose6DoF

# Largest dynamic variance ever returned; reached when a kernel underflows,
# which amounts to rejecting the measurement outright.
VARIANCE_CAP = 1e12

# exp() overflows beyond ~709; treat anything past this as an underflown kernel.
_EXP_LIMIT = 700.0


@dataclass(frozen=True)
class GateParams:
    """Kernel bandwidths (m), constraint shrink factor and base variance."""

    sigma_x: float = 2.6
    sigma_y: float = 2.6
    sigma_z: float = 2.1
    alpha: float = 2.0
    v_m: float = 0.005
    cap: float = VARIANCE_CAP

    def __post_init__(self):
        if min(self.sigma_x, self.sigma_y, self.sigma_z) <= 0.0:
            raise ValueError("kernel bandwidths must be positive")
        if self.alpha < 1.0:
            raise ValueError("constraint shrink factor must be >= 1")
        if self.v_m <= 0.0:
            raise ValueError("base measurement variance must be positive")


@dataclass(frozen=True)
class MeasurementPrediction:
    """Expected next measurement: previous one advanced by dt * velocity."""

    predicted: Pose6DoF
    previous: Pose6DoF
    velocity: np.ndarray
    dt: float


def predict_measurement(prev_meas: Pose6DoF, velocity, dt: float) -> MeasurementPrediction:
    """Advance the previous measurement by dt * velocity; attitude carries over."""
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    velocity = np.asarray(velocity, dtype=float)
    predicted = Pose6DoF(prev_meas.p + dt * velocity, prev_meas.q)
    return MeasurementPrediction(predicted, prev_meas, velocity, dt)


def rbf_kernel(d: float, sigma: float) -> float:
    """exp(-d^2 / (2 sigma^2)), in (0, 1]."""
    if sigma <= 0.0:
        raise ValueError("bandwidth must be positive")
    return math.exp(-(d * d) / (2.0 * sigma * sigma))


def dynamic_variance(actual: Pose6DoF, predicted: Pose6DoF,
                     params: GateParams, constrained: bool) -> float:
    """Inflated measurement variance from per-axis translation displacements.

    Returns v_m + sum over axes of (1/K - 1) with K the per-axis kernel
    response; capped at ``params.cap`` when any kernel underflows.
    """
    shrink = params.alpha if constrained else 1.0
    sigmas = (params.sigma_x / shrink, params.sigma_y / shrink, params.sigma_z)
    disp = actual.p - predicted.p
    total = params.v_m
    for d, sigma in zip(disp, sigmas):
        e = (d * d) / (2.0 * sigma * sigma)
        if e > _EXP_LIMIT:
            warnings.warn("dynamic variance capped: displacement far outside gate")
            return params.cap
        total += math.exp(e) - 1.0
    if total > params.cap:
        warnings.warn("dynamic variance capped: displacement far outside gate")
        return params.cap
    return total


class FixedVarianceGate:
    """Variance provider that always returns the base measurement variance."""

    def __init__(self, v_m: float):
        if v_m <= 0.0:
            raise ValueError("base measurement variance must be positive")
        self.v_m = v_m

    def __call__(self, meas: Pose6DoF, t: float, state) -> float:
        return self.v_m

    def observe(self, meas: Pose6DoF, t: float, velocity) -> None:
        pass

    def set_constrained(self, flag: bool) -> None:
        pass


class AdaptiveVarianceGate:
    """Stateful variance provider for the constraint-gated filter.

    Remembers the last measurement, its timestamp and the filter's posterior
    velocity at that frame; the caller flips ``set_constrained`` per frame from
    the lock-on detector.  The first measurement of a run has no prediction
    basis and gets the base variance.
    """

    def __init__(self, params: GateParams | None = None):
        self.params = params if params is not None else GateParams()
        self.constrained = False
        self.last_prediction: MeasurementPrediction | None = None
        self._prev: tuple[Pose6DoF, float, np.ndarray] | None = None

    def set_constrained(self, flag: bool) -> None:
        self.constrained = bool(flag)

    def observe(self, meas: Pose6DoF, t: float, velocity) -> None:
        """Record the raw measurement and posterior velocity at this frame."""
        self._prev = (meas, float(t), np.asarray(velocity, dtype=float).copy())

    def __call__(self, meas: Pose6DoF, t: float, state) -> float:
        if self._prev is None:
            return self.params.v_m
        prev_meas, prev_t, prev_v = self._prev
        dt = float(t) - prev_t
        if dt <= 0.0:
            return self.params.v_m
        pred = predict_measurement(prev_meas, prev_v, dt)
        self.last_prediction = pred
        return dynamic_variance(meas, pred.predicted, self.params, self.constrained)
