"""Unscented Kalman filter that puts metric scale on monocular translations.

The state is the per-frame relative translation ``x = (tx, ty, tz)``. The
prediction step pushes sigma points through a transition that takes the
direction of the unscaled translation from the pose network; the update step
measures the metric translation from the classical RGB-D estimator directly
(``h`` is the identity).
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument
from .geometry import Pose

log = logging.getLogger(__name__)

N_STATE = 3


def _check_psd(name: str, m: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    m = np.array(m, dtype=np.float64)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        raise InvalidArgument(f"{name} must be a finite 3x3 matrix")
    scale = max(1.0, float(np.abs(m).max()))
    if np.abs(m - m.T).max() > tol * scale:
        raise InvalidArgument(f"{name} is not symmetric")
    if np.linalg.eigvalsh(m).min() < -tol * scale:
        raise InvalidArgument(f"{name} is not positive semi-definite")
    m.setflags(write=False)
    return m


# --------------------------------------------------------------------------
# State transitions
# --------------------------------------------------------------------------


class Transition:
    """Maps sigma points ``(2n+1, 3)`` and a control vector to predicted points."""

    #: whether a zero control vector carries no information (predict becomes P + Q)
    needs_direction = False

    def __call__(self, points: np.ndarray, control: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class DirectionTransition(Transition):
    """Keep the mean magnitude, take the direction from the control vector.

    Each sigma point is projected onto the current mean direction and that
    signed length is laid along the new direction. The map is linear, so the
    predicted mean has exactly the old mean's norm; spread perpendicular to
    the motion is not folded into the magnitude.
    """

    needs_direction = True

    def __call__(self, points, control):
        d = control / np.linalg.norm(control)
        m = points[0]  # the first sigma point is the mean
        nm = np.linalg.norm(m)
        if nm == 0.0:
            return np.linalg.norm(points, axis=1)[:, None] * d[None, :]
        return (points @ (m / nm))[:, None] * d[None, :]


class NormTransition(Transition):
    """Per-point magnitude with the control direction.

    Under an uncertain state the mean of ``||x||`` exceeds ``||mean||``, so
    repeated predictions inflate the magnitude by about
    ``tr(P_perp) / (2 ||x||)`` per step.
    """

    needs_direction = True

    def __call__(self, points, control):
        d = control / np.linalg.norm(control)
        return np.linalg.norm(points, axis=1)[:, None] * d[None, :]


class IdentityTransition(Transition):
    def __call__(self, points, control):
        return points.copy()


class LinearTransition(Transition):
    """``f(x, u) = A x + B u``."""

    def __init__(self, A, B=None):
        self.A = np.asarray(A, dtype=np.float64)
        self.B = None if B is None else np.asarray(B, dtype=np.float64)

    def __call__(self, points, control):
        out = points @ self.A.T
        if self.B is not None:
            out = out + self.B @ control
        return out


# --------------------------------------------------------------------------
# Parameters and state
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class UkfParams:
    alpha: float = 0.1
    beta: float = 2.0
    kappa: float = 0.0
    process_noise: np.ndarray = field(default_factory=lambda: np.eye(3) * (2e-5) ** 2)
    measurement_noise: np.ndarray = field(default_factory=lambda: np.eye(3) * (1e-4) ** 2)
    prior_cov: np.ndarray = field(default_factory=lambda: np.eye(3) * (1e-3) ** 2)
    measurement_mode: str = "vector"
    transition: Transition = field(default_factory=DirectionTransition)

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0):
            raise InvalidArgument(f"alpha must lie in (0, 1], got {self.alpha}")
        if N_STATE + self.lam <= 0.0:
            raise InvalidArgument("alpha/kappa give a non-positive sigma spread n + lambda")
        if self.measurement_mode not in ("vector", "scale"):
            raise InvalidArgument(f"unknown measurement_mode {self.measurement_mode!r}")
        object.__setattr__(self, "process_noise", _check_psd("process noise", self.process_noise))
        object.__setattr__(self, "measurement_noise", _check_psd("measurement noise", self.measurement_noise))
        object.__setattr__(self, "prior_cov", _check_psd("prior covariance", self.prior_cov))

    @classmethod
    def from_diag(cls, q_diag, r_diag, p0_diag=None, **kw) -> "UkfParams":
        def diag(v):
            v = np.broadcast_to(np.asarray(v, dtype=np.float64), (3,))
            return np.diag(v)

        if p0_diag is not None:
            kw["prior_cov"] = diag(p0_diag)
        return cls(process_noise=diag(q_diag), measurement_noise=diag(r_diag), **kw)

    @property
    def lam(self) -> float:
        return self.alpha**2 * (N_STATE + self.kappa) - N_STATE

    def weights(self) -> tuple[np.ndarray, np.ndarray]:
        n, lam = N_STATE, self.lam
        wm = np.full(2 * n + 1, 0.5 / (n + lam))
        wc = wm.copy()
        wm[0] = lam / (n + lam)
        wc[0] = wm[0] + (1.0 - self.alpha**2 + self.beta)
        return wm, wc


@dataclass(frozen=True, eq=False)
class UkfState:
    mean: np.ndarray
    cov: np.ndarray
    params: UkfParams

    def __post_init__(self):
        m = np.array(self.mean, dtype=np.float64).reshape(3)
        P = np.array(self.cov, dtype=np.float64).reshape(3, 3)
        m.setflags(write=False)
        P.setflags(write=False)
        object.__setattr__(self, "mean", m)
        object.__setattr__(self, "cov", P)


def _sqrt_psd(M: np.ndarray) -> np.ndarray:
    """Matrix ``S`` with ``S @ S.T == M`` for symmetric PSD ``M``."""
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(0.5 * (M + M.T))
        return V * np.sqrt(np.clip(w, 0.0, None))


def sigma_points(mean: np.ndarray, cov: np.ndarray, params: UkfParams) -> np.ndarray:
    """Scaled symmetric sigma set, shape ``(2n+1, n)``."""
    n = N_STATE
    S = _sqrt_psd((n + params.lam) * cov)
    pts = np.empty((2 * n + 1, n))
    pts[0] = mean
    pts[1 : n + 1] = mean + S.T
    pts[n + 1 :] = mean - S.T
    return pts


def _moments(points: np.ndarray, params: UkfParams) -> tuple[np.ndarray, np.ndarray]:
    wm, wc = params.weights()
    m = wm @ points
    d = points - m
    P = (d * wc[:, None]).T @ d
    return m, 0.5 * (P + P.T)


# --------------------------------------------------------------------------
# Filter steps
# --------------------------------------------------------------------------


def ukf_init(t0, params: UkfParams | None = None) -> UkfState:
    params = UkfParams() if params is None else params
    t0 = np.asarray(t0, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(t0)):
        raise InvalidArgument("initial translation must be finite")
    return UkfState(t0, params.prior_cov, params)


def ukf_predict(s: UkfState, t_unscaled) -> UkfState:
    p = s.params
    u = np.asarray(t_unscaled, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(u)):
        raise InvalidArgument("t_unscaled must be finite")
    if p.transition.needs_direction and not np.any(u):
        return UkfState(s.mean, s.cov + p.process_noise, p)
    pts = p.transition(sigma_points(s.mean, s.cov, p), u)
    m, P = _moments(pts, p)
    return UkfState(m, P + p.process_noise, p)


def ukf_update(s: UkfState, t_scaled) -> UkfState:
    p = s.params
    z = np.asarray(t_scaled, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(z)):
        raise InvalidArgument("t_scaled must be finite")
    if p.measurement_mode == "scale":
        n = np.linalg.norm(s.mean)
        if n > 0.0:
            z = np.linalg.norm(z) * s.mean / n

    pts = sigma_points(s.mean, s.cov, p)
    zpts = pts  # h is the identity
    wm, wc = p.weights()
    zbar = wm @ zpts
    dz = zpts - zbar
    dx = pts - wm @ pts
    S = (dz * wc[:, None]).T @ dz + p.measurement_noise
    S = 0.5 * (S + S.T)
    Pxz = (dx * wc[:, None]).T @ dz

    if np.linalg.cond(S) > 1e15:
        warnings.warn("innovation covariance is singular; regularising with 1e-12*I", RuntimeWarning, stacklevel=2)
        S = S + 1e-12 * np.eye(3)
    K = np.linalg.solve(S, Pxz.T).T

    mean = s.mean + K @ (z - zbar)
    # Joseph form; algebraically P - K S K^T for h = identity, but stays PSD
    I_K = np.eye(3) - K
    P = I_K @ s.cov @ I_K.T + K @ p.measurement_noise @ K.T
    return UkfState(mean, 0.5 * (P + P.T), p)


def ukf_reset(s: UkfState) -> UkfState:
    """Keep the mean, re-inflate the covariance to the prior."""
    return UkfState(s.mean, s.params.prior_cov, s.params)


def correct_motion(m: Pose, s: UkfState) -> Pose:
    """Unscaled relative motion with its translation replaced by the filter mean."""
    return Pose(m.rotation, s.mean, scaled=True)


class ScaleCorrector:
    """Per-sequence driver around the filter.

    Starts on the first frame with a metric measurement, runs predict-only
    frames when the classical estimator fails, and re-inflates the covariance
    after more than ``reset_after`` consecutive failures.
    """

    def __init__(self, params: UkfParams | None = None, reset_after: int = 5):
        self.params = UkfParams() if params is None else params
        self.reset_after = reset_after
        self.state: UkfState | None = None
        self.frames_predict_only = 0
        self.filter_resets = 0
        self._failures = 0

    def step(self, rel_unscaled: Pose, t_scaled=None) -> Pose:
        u = rel_unscaled.translation
        if self.state is None:
            if t_scaled is None:
                self.frames_predict_only += 1
                return Pose(rel_unscaled.rotation, np.zeros(3), scaled=True)
            t_scaled = np.asarray(t_scaled, dtype=np.float64)
            nu = np.linalg.norm(u)
            t0 = np.linalg.norm(t_scaled) * u / nu if nu > 0 else t_scaled
            self.state = ukf_init(t0, self.params)

        s = ukf_predict(self.state, u)
        if t_scaled is None:
            self.frames_predict_only += 1
            self._failures += 1
            if self._failures > self.reset_after:
                s = ukf_reset(s)
                self.filter_resets += 1
                self._failures = 0
                log.debug("scale filter reset after repeated estimator failures")
        else:
            self._failures = 0
            s = ukf_update(s, t_scaled)
        self.state = s
        return correct_motion(rel_unscaled, s)
