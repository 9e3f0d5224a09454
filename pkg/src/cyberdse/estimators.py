"""Cubature Kalman filter and its Huber-robust variant for generator states.

The numerical core (``forecast``, ``measurement_update``, ``rckf_update``)
is written against generic transition/measurement callables that map a
``(n, 2n)`` block of cubature points column-wise, so it can be checked
against a plain Kalman filter on linear systems. :func:`run_filter` wires it
to the generator model, governor and exciter.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .dynamics import (ControlInput, ExciterParams, GeneratorParams, GovernorParams,
                       exciter_init, exciter_step, governor_init, governor_step, rk4,
                       state_derivative)
from .measurement import MeasurementStream, NoiseModel, measure, noise_covariance

log = logging.getLogger(__name__)

JITTER_LADDER = (1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6)


class CovarianceError(np.linalg.LinAlgError):
    pass


class FilterDivergence(RuntimeError):
    def __init__(self, message, step=None, point=None):
        super().__init__(message)
        self.step = step
        self.point = point


def sqrt_factor(P, repairs: Optional[list] = None) -> np.ndarray:
    """Lower-triangular ``S`` with ``S @ S.T == P``.

    ``P`` is symmetrised first. If Cholesky fails, diagonal jitter is added
    in decade steps from 1e-12 to 1e-6; each repair is logged and, when a
    list is passed as ``repairs``, appended to it.
    """
    P = np.asarray(P, dtype=float)
    P = 0.5 * (P + P.T)
    try:
        return np.linalg.cholesky(P)
    except np.linalg.LinAlgError:
        pass
    eye = np.eye(P.shape[0])
    for j in JITTER_LADDER:
        try:
            S = np.linalg.cholesky(P + j * eye)
        except np.linalg.LinAlgError:
            continue
        log.warning("covariance repaired with diagonal jitter %.0e", j)
        if repairs is not None:
            repairs.append(j)
        return S
    eig = np.linalg.eigvalsh(P)
    raise CovarianceError(f"covariance not positive definite after jitter; eigenvalues {eig}")


@dataclass
class CubatureSet:
    points: np.ndarray       # (n, 2n), one point per column
    weights: np.ndarray      # (2n,), all 1/(2n)

    @property
    def mean(self) -> np.ndarray:
        return self.points @ self.weights

    def covariance(self) -> np.ndarray:
        d = self.points - self.mean[:, None]
        return (d * self.weights) @ d.T


def _directions(n: int) -> np.ndarray:
    root = np.sqrt(n)
    return np.hstack([root * np.eye(n), -root * np.eye(n)])


_XI = {}


def _points(x, S):
    n = x.shape[0]
    xi = _XI.get(n)
    if xi is None:
        xi = _XI[n] = _directions(n)
    return S @ xi + x[:, None]


def cubature_points(x_hat, S) -> CubatureSet:
    """Third-degree spherical-radial points ``x_hat + S (+-sqrt(n) e_j)``."""
    x = np.asarray(x_hat, dtype=float)
    n = x.shape[0]
    return CubatureSet(points=_points(x, np.asarray(S, dtype=float)),
                       weights=np.full(2 * n, 1.0 / (2 * n)))


def forecast(x_hat, P, Q, transition: Callable[[np.ndarray], np.ndarray],
             repairs: Optional[list] = None):
    """Propagate the cubature points through ``transition``; returns ``(x_pred, P_pred)``."""
    x = np.asarray(x_hat, dtype=float)
    S = sqrt_factor(P, repairs)
    X = transition(_points(x, S))
    if not np.all(np.isfinite(X)):
        bad = int(np.argmax(~np.all(np.isfinite(X), axis=0)))
        raise FilterDivergence(f"cubature point {bad} diverged during forecast", point=bad)
    m = X.shape[1]
    x_pred = X.sum(axis=1) / m
    P_pred = X @ X.T / m - np.outer(x_pred, x_pred) + Q
    return x_pred, 0.5 * (P_pred + P_pred.T)


@dataclass
class UpdateResult:
    x: np.ndarray
    P: np.ndarray
    innovation: np.ndarray
    z_pred: np.ndarray
    P_zz: np.ndarray          # with the covariance actually used
    r_std: np.ndarray         # innovation / sqrt(diag of pre-correction P_zz)
    R_used: np.ndarray
    asymmetry: float = 0.0    # max |P - P^T| before symmetrising


class _Moments:
    __slots__ = ("x_pred", "z_hat", "Pzz0", "Pxz", "innovation")


def _moments(x_pred, P_pred, z, h, repairs):
    S = sqrt_factor(P_pred, repairs)
    X = _points(x_pred, S)
    Z = h(X)
    m = X.shape[1]
    mom = _Moments()
    mom.x_pred = x_pred
    mom.z_hat = Z.sum(axis=1) / m
    mom.Pzz0 = Z @ Z.T / m - np.outer(mom.z_hat, mom.z_hat)
    mom.Pxz = X @ Z.T / m - np.outer(x_pred, mom.z_hat)
    mom.innovation = np.asarray(z, dtype=float) - mom.z_hat
    return mom


def _finish(mom, P_pred, R_eff, r_std):
    Pzz = mom.Pzz0 + R_eff
    try:
        W = np.linalg.solve(Pzz.T, mom.Pxz.T).T
    except np.linalg.LinAlgError:
        raise CovarianceError("innovation covariance is singular") from None
    x = mom.x_pred + W @ mom.innovation
    P = P_pred - W @ Pzz @ W.T
    asym = float(np.max(np.abs(P - P.T)))
    P = 0.5 * (P + P.T)
    return UpdateResult(x=x, P=P, innovation=mom.innovation, z_pred=mom.z_hat, P_zz=Pzz,
                        r_std=r_std, R_used=R_eff, asymmetry=asym)


def _standardised(mom, R):
    return mom.innovation / np.sqrt(np.diag(mom.Pzz0 + R))


def measurement_update(x_pred, P_pred, z, R, h: Callable[[np.ndarray], np.ndarray],
                       repairs: Optional[list] = None) -> UpdateResult:
    """Cubature filtering stage with measurement covariance ``R``."""
    x_pred = np.asarray(x_pred, dtype=float)
    mom = _moments(x_pred, P_pred, z, h, repairs)
    return _finish(mom, P_pred, R, _standardised(mom, R))


@dataclass
class HuberWeighting:
    C: float
    P_bar: np.ndarray         # equivalence weight matrix (diagonal)
    R_bar: np.ndarray         # corrected covariance, inverse of P_bar
    r_std: np.ndarray         # standardised residuals
    triggered: np.ndarray     # channels outside the quadratic band


def huber_weights(r, P_zz_pre, R, C: float = 1.5) -> HuberWeighting:
    """Huber equivalence weights for a diagonal ``R``.

    Channels with ``|r'| <= C`` keep weight ``1/R_mm``; beyond the band the
    weight is ``C / (R_mm |r'|)`` so the corrected variance grows linearly
    with the standardised residual. Off-diagonal weights are zero.
    """
    r = np.asarray(r, dtype=float)
    s2 = np.diag(np.asarray(P_zz_pre, dtype=float))
    if np.any(s2 <= 0):
        raise ValueError("innovation variance must be positive on every channel")
    r_std = r / np.sqrt(s2)
    a = np.abs(r_std)
    hit = a > C
    Rd = np.diag(np.asarray(R, dtype=float)).copy()
    Rbar_d = np.where(hit, Rd * a / C, Rd)
    return HuberWeighting(C=C, P_bar=np.diag(1.0 / Rbar_d), R_bar=np.diag(Rbar_d),
                          r_std=r_std, triggered=hit)


def rckf_update(x_pred, P_pred, z, R, h: Callable[[np.ndarray], np.ndarray], C: float = 1.5,
                repairs: Optional[list] = None) -> UpdateResult:
    """Filtering stage with the Huber-corrected measurement covariance.

    Reduces to :func:`measurement_update` bit for bit when no standardised
    residual leaves the band.
    """
    x_pred = np.asarray(x_pred, dtype=float)
    mom = _moments(x_pred, P_pred, z, h, repairs)
    hw = huber_weights(mom.innovation, mom.Pzz0 + R, R, C)
    R_eff = hw.R_bar if hw.triggered.any() else R
    return _finish(mom, P_pred, R_eff, hw.r_std)


# ---------------------------------------------------------------------------
# attack identification


@dataclass
class IdentificationState:
    D_J: Optional[float] = None
    safety_factor: float = 1.0

    @property
    def threshold(self) -> float:
        if self.D_J is None:
            raise RuntimeError("identification threshold not calibrated")
        return self.D_J * self.safety_factor


def calibrate_dj(gaps, safety_factor: float = 1.0) -> IdentificationState:
    """Threshold from an attack-free run.

    ``gaps`` is either a sequence of forecast-to-estimate distances or a
    sequence of ``(x_post, x_pred)`` pairs.
    """
    g = [float(v) if np.ndim(v) == 0 else float(np.linalg.norm(np.subtract(v[0], v[1])))
         for v in gaps]
    if not g:
        raise ValueError("calibration run is empty")
    D_J = max(g)
    if not D_J > 0:
        raise ValueError("calibration run has no forecast-to-estimate movement")
    return IdentificationState(D_J=D_J, safety_factor=safety_factor)


def identify_attack(x_post, x_pred, ident: IdentificationState) -> bool:
    """True when the estimate moved further from the forecast than ever seen in normal operation."""
    return bool(np.linalg.norm(np.subtract(x_post, x_pred)) > ident.threshold)


# ---------------------------------------------------------------------------
# generator filter


@dataclass(frozen=True)
class FilterConfig:
    q_diag: tuple = (1e-8, 1e-8, 1e-8, 1e-8)
    p0_diag: tuple = (1e-4, 1e-4, 1e-4, 1e-4)
    C: float = 1.5
    warmup_s: float = 0.5
    terminal_hold: str = "zoh"

    def __post_init__(self):
        if len(self.q_diag) != 4 or len(self.p0_diag) != 4:
            raise ValueError("q_diag and p0_diag need four entries")
        if min(self.q_diag) < 0 or min(self.p0_diag) <= 0:
            raise ValueError("Q must be non-negative and P0 positive")
        if not self.C > 0:
            raise ValueError("Huber constant C must be positive")
        if self.terminal_hold not in ("zoh", "linear"):
            raise ValueError(f"unknown terminal_hold {self.terminal_hold!r}")

    @property
    def Q(self) -> np.ndarray:
        return np.diag(np.asarray(self.q_diag, dtype=float))

    @property
    def P0(self) -> np.ndarray:
        return np.diag(np.asarray(self.p0_diag, dtype=float))


@dataclass
class FilterState:
    x_hat: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    k: int = 0


@dataclass
class FilterTrajectory:
    method: str
    t: np.ndarray
    x_pred: np.ndarray
    x_post: np.ndarray
    P_diag: np.ndarray
    innovation: np.ndarray
    r_std: np.ndarray
    R_diag: np.ndarray
    t_forecast: np.ndarray
    t_update: np.ndarray
    min_eig: np.ndarray = None
    max_asym: np.ndarray = None
    repairs: list = field(default_factory=list)
    flags: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.t)

    @property
    def gaps(self) -> np.ndarray:
        return np.linalg.norm(self.x_post - self.x_pred, axis=1)

    def flag_with(self, ident: IdentificationState) -> np.ndarray:
        self.flags = self.gaps > ident.threshold
        return self.flags


def generator_transition(control: ControlInput, params: GeneratorParams, dt: float):
    """Discrete state map: one RK4 step with the control held over the step."""
    def f(X):
        return rk4(lambda Y: state_derivative(Y, control, params), X, dt)
    return f


def interpolated_transition(T_m: float, E_f: float, U0: float, U1: float, phi0: float,
                            phi1: float, params: GeneratorParams, dt: float):
    """RK4 step with the terminal phasor moving linearly between two samples."""
    dphi = float(np.angle(np.exp(1j * (phi1 - phi0))))
    dU = U1 - U0
    u0 = (T_m, E_f, U0, phi0)
    um = (T_m, E_f, U0 + 0.5 * dU, phi0 + 0.5 * dphi)
    u1 = (T_m, E_f, U1, phi0 + dphi)

    def f(X):
        k1 = state_derivative(X, u0, params)
        k2 = state_derivative(X + 0.5 * dt * k1, um, params)
        k3 = state_derivative(X + 0.5 * dt * k2, um, params)
        k4 = state_derivative(X + dt * k3, u1, params)
        return X + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return f


def generator_measurement(U: float, phi: float, params: GeneratorParams):
    def h(X):
        return measure(X, (U, phi), params)
    return h


METHODS = ("ckf", "rckf")


def run_filter(stream: MeasurementStream, method: str, params: GeneratorParams,
               noise: NoiseModel, x0, control0: ControlInput,
               config: Optional[FilterConfig] = None,
               governor: Optional[GovernorParams] = None,
               exciter: Optional[ExciterParams] = None,
               check_health: bool = True) -> FilterTrajectory:
    """Run CKF or RCKF over a measurement stream.

    Sample 0 carries the initial guess ``x0``; every later sample goes
    through forecast then update. ``T_m`` comes from the governor driven by
    the estimated speed, ``E_f`` from the exciter driven by the measured
    terminal voltage; both start settled at ``control0``.
    """
    if method not in METHODS:
        raise ValueError(f"unknown filter {method!r}; choose from {METHODS}")
    config = config or FilterConfig()
    governor = governor or GovernorParams()
    exciter = exciter or ExciterParams()
    robust = method == "rckf"
    linear = config.terminal_hold == "linear"
    n = len(stream)
    dt = stream.dt
    Q = config.Q
    x = np.asarray(x0, dtype=float).copy()
    P = config.P0.copy()

    out = dict(x_pred=np.empty((n, 4)), x_post=np.empty((n, 4)), P_diag=np.empty((n, 4)),
               innovation=np.full((n, 3), np.nan), r_std=np.full((n, 3), np.nan),
               R_diag=np.full((n, 3), np.nan), t_forecast=np.full(n, np.nan),
               t_update=np.full(n, np.nan), min_eig=np.full(n, np.nan),
               max_asym=np.full(n, np.nan))
    out["x_pred"][0] = x
    out["x_post"][0] = x
    out["P_diag"][0] = np.diag(P)
    repairs: list = []

    gov = governor_init(control0.T_m, governor)
    exc = exciter_init(control0.E_f, control0.U, exciter)
    T_m, E_f = control0.T_m, control0.E_f
    perf = time.perf_counter

    for k in range(1, n):
        u = ControlInput(T_m, E_f, stream.U[k - 1], stream.phi[k - 1])
        t0 = perf()
        try:
            if linear:
                fmap = interpolated_transition(T_m, E_f, stream.U[k - 1], stream.U[k],
                                               stream.phi[k - 1], stream.phi[k], params, dt)
            else:
                fmap = generator_transition(u, params, dt)
            x_pred, P_pred = forecast(x, P, Q, fmap, repairs)
        except FilterDivergence as exc_:
            raise FilterDivergence(f"{method}: {exc_} at sample {k}", step=k,
                                   point=exc_.point) from None
        t1 = perf()
        terminal = (stream.U[k], stream.phi[k])
        R = noise_covariance(terminal, x_pred, params, noise)
        h = generator_measurement(stream.U[k], stream.phi[k], params)
        if robust:
            res = rckf_update(x_pred, P_pred, stream.z[k], R, h, config.C, repairs)
        else:
            res = measurement_update(x_pred, P_pred, stream.z[k], R, h, repairs)
        t2 = perf()
        x, P = res.x, res.P
        if not np.all(np.isfinite(x)):
            raise FilterDivergence(f"{method}: non-finite estimate at sample {k}", step=k)

        out["x_pred"][k] = x_pred
        out["x_post"][k] = x
        out["P_diag"][k] = np.diag(P)
        out["innovation"][k] = res.innovation
        out["r_std"][k] = res.r_std
        out["R_diag"][k] = np.diag(res.R_used)
        out["t_forecast"][k] = t1 - t0
        out["t_update"][k] = t2 - t1
        if check_health:
            out["min_eig"][k] = np.linalg.eigvalsh(P)[0]
            out["max_asym"][k] = res.asymmetry

        T_m, gov = governor_step(x[1], gov, governor, dt)
        E_f, exc = exciter_step(stream.U[k], exc, exciter, dt)

    return FilterTrajectory(method=method, t=stream.t.copy(), repairs=repairs, **out)


TRAJECTORY_COLUMNS = (
    ["t"] + [f"pred_{s}" for s in ("delta", "omega", "Eqp", "Edp")]
    + [f"post_{s}" for s in ("delta", "omega", "Eqp", "Edp")]
    + [f"P_{s}" for s in ("delta", "omega", "Eqp", "Edp")]
    + [f"innov_{s}" for s in ("delta", "omega", "Pe")]
    + [f"R_{s}" for s in ("delta", "omega", "Pe")]
    + ["flag"])


def write_trajectory(path, traj: FilterTrajectory) -> Path:
    """Per-sample CSV export; the flag column is empty until flags are set."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJECTORY_COLUMNS)
        for k in range(len(traj)):
            vals = np.concatenate([[traj.t[k]], traj.x_pred[k], traj.x_post[k], traj.P_diag[k],
                                   traj.innovation[k], traj.R_diag[k]])
            flag = "" if traj.flags is None else str(int(traj.flags[k]))
            w.writerow([repr(float(v)) for v in vals] + [flag])
    return path


def read_trajectory(path, method: str = "") -> FilterTrajectory:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != TRAJECTORY_COLUMNS:
        raise ValueError(f"{path}: not a filter trajectory file")
    body = rows[1:]
    data = np.array([[float(v) for v in r[:-1]] for r in body]).reshape(len(body), -1)
    flags = None
    if body and all(r[-1] != "" for r in body):
        flags = np.array([r[-1] == "1" for r in body])
    n = len(body)
    return FilterTrajectory(method=method, t=data[:, 0], x_pred=data[:, 1:5], x_post=data[:, 5:9],
                            P_diag=data[:, 9:13], innovation=data[:, 13:16], r_std=np.full((n, 3), np.nan),
                            R_diag=data[:, 16:19], t_forecast=np.full(n, np.nan),
                            t_update=np.full(n, np.nan), flags=flags)
