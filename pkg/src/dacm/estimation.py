"""Discrete Kalman filter over local ENU positions, plus telemetry sync for meD.

The filter state is a 3-vector of east/north/up metres relative to the first
observation. With the default matrices (identity transition, zero process
noise, zero control input) the filter reduces to a running average of the
observations.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import FilterDivergenceError, SingularMatrixError, TangentPlaneRangeError
from .geodesy import GeoPoint, destination_point, from_enu, ground_distance, to_enu

TANGENT_PLANE_LIMIT_M = 100_000.0
PSD_TOL = 1e-9

I3 = np.eye(3)
Z3 = np.zeros((3, 3))
TUNED_PROCESS_NOISE = np.diag([0.5, 0.5, 0.25])


@dataclass(frozen=True)
class NoiseConfig:
    ec_error: float = 10.0
    dop_hor: float = 1.5
    dop_ver: float = 2.0

    def __post_init__(self):
        if min(self.ec_error, self.dop_hor, self.dop_ver) <= 0:
            raise ValueError("noise parameters must be positive")

    @property
    def hor_error(self) -> float:
        return self.ec_error * self.dop_hor

    @property
    def ver_error(self) -> float:
        return self.ec_error * self.dop_ver


@dataclass(frozen=True)
class KalmanState:
    sve: np.ndarray
    cov: np.ndarray
    merror_cov: np.ndarray
    enu_origin: GeoPoint
    observation_mat: np.ndarray = field(default_factory=lambda: I3.copy())
    st_mat: np.ndarray = field(default_factory=lambda: I3.copy())
    perror_mat: np.ndarray = field(default_factory=lambda: Z3.copy())
    input_mat: np.ndarray = field(default_factory=lambda: Z3.copy())

    @property
    def position(self) -> GeoPoint:
        return from_enu(self.sve, self.enu_origin)


def _inv(m: np.ndarray, what: str) -> np.ndarray:
    if abs(np.linalg.det(m)) < 1e-12:
        raise SingularMatrixError(f"{what} is singular")
    return np.linalg.inv(m)


def _check_cov(cov: np.ndarray) -> np.ndarray:
    cov = 0.5 * (cov + cov.T)
    if np.linalg.eigvalsh(cov).min() < -PSD_TOL:
        raise FilterDivergenceError("covariance lost positive semi-definiteness")
    return cov


def dkf_init(
    first_obs: GeoPoint,
    noise: NoiseConfig,
    observation_mat: np.ndarray | None = None,
    st_mat: np.ndarray | None = None,
    perror_mat: np.ndarray | None = None,
) -> KalmanState:
    obs_mat = I3.copy() if observation_mat is None else np.asarray(observation_mat, dtype=float)
    obs_inv = _inv(obs_mat, "observation matrix")
    merror = np.diag([noise.hor_error, noise.hor_error, noise.ver_error])
    # the first observation is the ENU origin, so its local coordinates are zero
    sve = obs_inv @ np.zeros(3)
    cov = obs_inv @ merror @ _inv(obs_mat.T, "observation matrix transpose")
    return KalmanState(
        sve=sve,
        cov=_check_cov(cov),
        merror_cov=merror,
        enu_origin=first_obs,
        observation_mat=obs_mat,
        st_mat=I3.copy() if st_mat is None else np.asarray(st_mat, dtype=float),
        perror_mat=Z3.copy() if perror_mat is None else np.asarray(perror_mat, dtype=float),
    )


def dkf_predict(state: KalmanState, control: np.ndarray | None = None) -> KalmanState:
    """Time update. ``control`` is the input vector, applied through
    ``state.input_mat`` (zero by default, so a bare call leaves ``sve``
    unchanged)."""
    sve = state.st_mat @ state.sve
    if control is not None:
        sve = sve + state.input_mat @ np.asarray(control, dtype=float)
    cov = state.st_mat @ state.cov @ state.st_mat.T + state.perror_mat
    return replace(state, sve=sve, cov=_check_cov(cov))


def dkf_update(state: KalmanState, obs: GeoPoint) -> KalmanState:
    """Measurement update with an observed position."""
    if ground_distance(obs, state.enu_origin) > TANGENT_PLANE_LIMIT_M:
        raise TangentPlaneRangeError(
            f"observation {obs} is beyond {TANGENT_PLANE_LIMIT_M:.0f} m from the filter origin"
        )
    z = to_enu(obs, state.enu_origin)
    h = state.observation_mat
    innovation_cov = h @ state.cov @ h.T + state.merror_cov
    gain = state.cov @ h.T @ _inv(innovation_cov, "innovation covariance")
    sve = state.sve + gain @ (z - h @ state.sve)
    cov = state.cov - gain @ h @ state.cov
    return replace(state, sve=sve, cov=_check_cov(cov))


def sync_with_telemetry(
    estimate: GeoPoint,
    telemetry: GeoPoint,
    alpha: float,
    previous_offset: np.ndarray | None = None,
) -> tuple[np.ndarray, GeoPoint]:
    """Blend the filtered EC position of meD towards its own telemetry.

    Returns the smoothed ENU offset (metres, in the frame of ``estimate``) and
    the corrected position.
    """
    if not 0 < alpha <= 1:
        raise ValueError("alpha must be in (0, 1]")
    prev = np.zeros(3) if previous_offset is None else np.asarray(previous_offset, dtype=float)
    diff = to_enu(telemetry, estimate)
    offset = alpha * diff + (1 - alpha) * prev
    if alpha == 1:
        return offset, telemetry
    return offset, from_enu(offset, estimate)


@dataclass
class TrackFilter:
    """One flight's filter, driven by successive latency-compensated fixes.

    In ``tuned`` mode the time update carries the estimate forward by the
    flight's reported velocity (as a control input) and adds process noise,
    so that the filter tracks a moving target instead of averaging its
    history. ``static`` mode uses the default matrices unchanged.
    """

    noise: NoiseConfig
    mode: str = "tuned"
    reanchor_m: float = 50_000.0
    state: KalmanState | None = None
    last_time: float | None = None

    def __post_init__(self):
        if self.mode not in ("static", "tuned"):
            raise ValueError(f"unknown process noise mode {self.mode!r}")

    def _new_state(self, obs: GeoPoint) -> KalmanState:
        if self.mode == "static":
            return dkf_init(obs, self.noise)
        st = dkf_init(obs, self.noise, perror_mat=TUNED_PROCESS_NOISE)
        return replace(st, input_mat=I3.copy())

    def step(self, obs: GeoPoint, heading: float, speed: float, t: float) -> GeoPoint:
        """Fold in one observation taken at ``t``; return the corrected position."""
        if self.state is None or ground_distance(obs, self.state.enu_origin) > self.reanchor_m:
            self.state = self._new_state(obs)
            self.last_time = t
            return obs
        control = None
        if self.mode == "tuned" and self.last_time is not None and t > self.last_time:
            here = self.state.position
            ahead = destination_point(here, heading, speed * (t - self.last_time))
            control = to_enu(ahead, self.state.enu_origin) - self.state.sve
        self.state = dkf_update(dkf_predict(self.state, control), obs)
        self.last_time = t
        return self.state.position


@dataclass
class TelemetrySync:
    alpha: float = 0.3
    offset: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def correct(self, estimate: GeoPoint, telemetry: GeoPoint) -> GeoPoint:
        self.offset, corrected = sync_with_telemetry(estimate, telemetry, self.alpha, self.offset)
        return corrected
