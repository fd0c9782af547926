"""Error-state Kalman filter for 6-DoF pose tracking.

The nominal state holds map-frame position ``p``, velocity ``v`` and the
body-to-map attitude quaternion ``q``.  A 9x9 covariance tracks the error
state in the order (dp, dv, dtheta), where dtheta is a body-frame rotation
vector composed on the right of the nominal quaternion:
``q_true = q * quat_from_rotvec(dtheta)``.

Prediction consumes one integrated IMU sample per camera frame over a step of
``d`` seconds::

    p <- p + d v + 0.5 d^2 R(q) a
    v <- v + d R(q) a
    q <- q * quat_from_rotvec(d w)

The state transition of the error state is assembled blockwise as

    [ I  I d        0      ]
    [ 0  I   -R skew(a) d  ]
    [ 0  0   R(d w)^T      ]

with process noise entering the velocity and attitude rows.  Measurements are
full 6-DoF poses with a scalar variance ``v_eff`` on all six rows; the
attitude innovation is the body-frame rotation vector taking the state
attitude onto the measured attitude.  After a correction the error estimate is
folded into the nominal state and the covariance passes through the reset
Jacobian blockdiag(I, I, I - 0.5 skew(dtheta)).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import geometry
from .gate import GateParams
from .geometry import Pose6DoF

DEFAULT_INIT_COV_DIAG = (0.25, 0.25, 0.25, 1.0, 1.0, 1.0, 0.01, 0.01, 0.01)


@dataclass(frozen=True)
class ImuSample:
    """Gravity-compensated body acceleration [m/s^2] and angular rate [rad/s]."""

    a: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        for name in ("a", "w"):
            v = np.asarray(getattr(self, name), dtype=float).copy()
            if v.shape != (3,) or not np.all(np.isfinite(v)):
                raise ValueError(f"IMU {name} must be a finite 3-vector")
            object.__setattr__(self, name, v)


@dataclass(frozen=True)
class FilterState:
    """Nominal state plus error covariance; treated as an immutable value."""

    p: np.ndarray
    v: np.ndarray
    q: np.ndarray
    C: np.ndarray
    t_last: float

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).copy())
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float).copy())
        object.__setattr__(self, "q", geometry.quat_normalize(self.q).copy())
        C = np.asarray(self.C, dtype=float).copy()
        if C.shape != (9, 9):
            raise ValueError("covariance must be 9x9")
        object.__setattr__(self, "C", C)

    @property
    def pose(self) -> Pose6DoF:
        return Pose6DoF(self.p, self.q)


@dataclass(frozen=True)
class FilterParams:
    """Filter tuning: base measurement variance, process variance, options."""

    v_m: float = 0.005
    v_p: float = 0.5
    use_joseph: bool = True
    init_cov_diag: tuple = DEFAULT_INIT_COV_DIAG
    gate: GateParams = field(default_factory=GateParams)

    def __post_init__(self):
        if self.v_m <= 0.0 or self.v_p <= 0.0:
            raise ValueError("variances must be positive")
        if len(self.init_cov_diag) != 9 or min(self.init_cov_diag) < 0.0:
            raise ValueError("initial covariance diagonal must be 9 non-negative values")


@dataclass(frozen=True)
class StepTrace:
    """Per-frame record of what one filter step did."""

    t: float
    dt: float
    prior: Pose6DoF
    predicted_measurement: Pose6DoF
    v_eff: Optional[float]
    posterior: Pose6DoF
    updated: bool
    rejected: bool


# Measurement rows observe position error and attitude error; velocity is not
# directly observed by a pose measurement.
_H = np.zeros((6, 9))
_H[0:3, 0:3] = np.eye(3)
_H[3:6, 6:9] = np.eye(3)

_FW = np.zeros((9, 6))
_FW[3:6, 0:3] = np.eye(3)
_FW[6:9, 3:6] = np.eye(3)


def measurement_jacobian() -> np.ndarray:
    """6x9 map from error state to pose-measurement space."""
    return _H.copy()


def process_noise_jacobian() -> np.ndarray:
    """9x6 map injecting process noise into velocity and attitude rows."""
    return _FW.copy()


def _symmetrize(C: np.ndarray) -> np.ndarray:
    return 0.5 * (C + C.T)


def initialize(first_meas: Pose6DoF, warmup: list[tuple[Pose6DoF, float]],
               params: FilterParams) -> FilterState:
    """Bootstrap the state from the first measured pose and a warmup window.

    Position and attitude come from ``first_meas``.  Speed is the mean of
    ``|dp| / dt`` over consecutive warmup poses; its direction is the forward
    (body x) axis of the first attitude mapped into the map frame.
    """
    if len(warmup) < 2:
        raise ValueError("warmup requires at least 2 measured poses")
    times = [t for _, t in warmup]
    if any(t1 - t0 <= 0.0 for t0, t1 in zip(times, times[1:])):
        raise ValueError("warmup timestamps must be strictly increasing")
    speeds = []
    for (pose0, t0), (pose1, t1) in zip(warmup, warmup[1:]):
        speeds.append(float(np.linalg.norm(pose1.p - pose0.p)) / (t1 - t0))
    heading = geometry.rotate_vector(first_meas.q, np.array([1.0, 0.0, 0.0]))
    velocity = float(np.mean(speeds)) * heading
    C = np.diag(params.init_cov_diag).astype(float)
    return FilterState(first_meas.p, velocity, first_meas.q, C, times[0])


def predict(state: FilterState, imu: ImuSample, delta: float) -> FilterState:
    """Advance the nominal state by one IMU step; covariance is untouched."""
    if delta <= 0.0:
        raise ValueError("time step must be positive")
    R = geometry.quat_to_rotmat(state.q)
    accel = R @ imu.a
    p = state.p + delta * state.v + 0.5 * delta * delta * accel
    v = state.v + delta * accel
    q = geometry.quat_multiply(state.q, geometry.quat_from_rotvec(delta * imu.w))
    return FilterState(p, v, q, state.C, state.t_last + delta)


def process_jacobian(state: FilterState, imu: ImuSample, delta: float) -> np.ndarray:
    """9x9 error-state transition for one prediction step."""
    if delta <= 0.0:
        raise ValueError("time step must be positive")
    R = geometry.quat_to_rotmat(state.q)
    F = np.eye(9)
    F[0:3, 3:6] = delta * np.eye(3)
    F[3:6, 6:9] = -R @ geometry.skew(imu.a) * delta
    F[6:9, 6:9] = geometry.quat_to_rotmat(geometry.quat_from_rotvec(delta * imu.w)).T
    return F


def propagate_covariance(state: FilterState, f_x: np.ndarray, delta: float,
                         params: FilterParams) -> FilterState:
    """C <- F C F^T + Fw Q Fw^T with Q = I6 * v_p * delta^2, re-symmetrized."""
    Q = np.eye(6) * (params.v_p * delta * delta)
    C = _symmetrize(f_x @ state.C @ f_x.T + _FW @ Q @ _FW.T)
    return FilterState(state.p, state.v, state.q, C, state.t_last)


def eskf_reset(state: FilterState, dtheta) -> FilterState:
    """Fold an applied attitude correction into the covariance."""
    J = np.eye(9)
    J[6:9, 6:9] = np.eye(3) - 0.5 * geometry.skew(dtheta)
    C = _symmetrize(J @ state.C @ J.T)
    return FilterState(state.p, state.v, state.q, C, state.t_last)


def _apply_update(state: FilterState, meas: Pose6DoF, v_eff: float,
                  params: FilterParams) -> tuple[FilterState, bool]:
    """Gain computation plus correction; returns (state, applied)."""
    if v_eff <= 0.0:
        raise ValueError("measurement variance must be positive")
    S = _H @ state.C @ _H.T + v_eff * np.eye(6)
    try:
        # G = C H^T S^-1, solved as S^T X = (C H^T)^T with S symmetric
        G = np.linalg.solve(S, _H @ state.C).T
    except np.linalg.LinAlgError:
        warnings.warn("pose update rejected: singular innovation covariance")
        return state, False
    if not np.all(np.isfinite(G)):
        warnings.warn("pose update rejected: non-finite gain")
        return state, False

    dq = geometry.quat_multiply(geometry.quat_conjugate(state.q), meas.q)
    innovation = np.concatenate([meas.p - state.p, geometry.quat_to_rotvec(dq)])
    dx = G @ innovation

    p = state.p + dx[0:3]
    v = state.v + dx[3:6]
    q = geometry.quat_multiply(state.q, geometry.quat_from_rotvec(dx[6:9]))

    A = np.eye(9) - G @ _H
    if params.use_joseph:
        C = A @ state.C @ A.T + v_eff * (G @ G.T)
    else:
        C = A @ state.C
    updated = FilterState(p, v, q, _symmetrize(C), state.t_last)
    return eskf_reset(updated, dx[6:9]), True


def update(state: FilterState, meas: Pose6DoF, v_eff: float,
           params: FilterParams | None = None) -> FilterState:
    """Correct the state with a 6-DoF pose measurement of variance v_eff.

    A numerically singular innovation covariance rejects the update and
    returns the state unchanged (with a warning).
    """
    if params is None:
        params = FilterParams()
    new_state, _ = _apply_update(state, meas, v_eff, params)
    return new_state


def step(state: FilterState, frame, params: FilterParams,
         gate: Callable[[Pose6DoF, float, FilterState], float],
         ) -> tuple[FilterState, StepTrace]:
    """One frame: predict, propagate covariance, then update if measured.

    ``frame`` needs attributes ``t``, ``imu`` and ``meas`` (a FrameRecord).
    ``gate`` maps (measurement, time, predicted state) to the effective
    measurement variance for this frame.
    """
    delta = float(frame.t) - state.t_last
    if delta <= 0.0:
        raise ValueError("frame timestamp must be after the filter time")
    f_x = process_jacobian(state, frame.imu, delta)
    pred = predict(state, frame.imu, delta)
    pred = propagate_covariance(pred, f_x, delta, params)

    prior = pred.pose
    if frame.meas is None:
        trace = StepTrace(float(frame.t), delta, prior, prior, None, prior,
                          updated=False, rejected=False)
        return pred, trace

    v_eff = float(gate(frame.meas, float(frame.t), pred))
    post, applied = _apply_update(pred, frame.meas, v_eff, params)
    trace = StepTrace(float(frame.t), delta, prior, prior, v_eff, post.pose,
                      updated=applied, rejected=not applied)
    return post, trace
