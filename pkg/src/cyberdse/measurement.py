"""PMU measurement model, filter noise covariance and noisy stream synthesis."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from .dynamics import GeneratorParams, TruthTrajectory

DEG = math.pi / 180.0


def measure(state, terminal, params: GeneratorParams) -> np.ndarray:
    """Noiseless ``z = [delta_z, omega_z, Pe_z]``; batched over columns of ``state``."""
    x = np.asarray(state, dtype=float)
    U, phi = terminal
    a = x[0] - phi
    Pe = (0.5 * U * U * np.sin(2.0 * a) * (1.0 / params.X_qp - 1.0 / params.X_dp)
          + U * np.sin(a) * x[2] / params.X_dp
          + U * np.cos(a) * x[3] / params.X_qp)
    return np.array([x[0], x[1], Pe])


def pe_terminal_partials(state, terminal, params: GeneratorParams):
    """``(dPe/dU, dPe/dphi)`` of the electrical-power channel."""
    x = np.asarray(state, dtype=float)
    U, phi = terminal
    a = x[0] - phi
    k = 1.0 / params.X_qp - 1.0 / params.X_dp
    dU = (U * np.sin(2.0 * a) * k + np.sin(a) * x[2] / params.X_dp
          + np.cos(a) * x[3] / params.X_qp)
    dphi = -pe_state_partials(x, terminal, params)[0]
    return dU, dphi


def pe_state_partials(state, terminal, params: GeneratorParams):
    """``(dPe/ddelta, dPe/dEqp, dPe/dEdp)``; Pe does not depend on omega."""
    x = np.asarray(state, dtype=float)
    U, phi = terminal
    a = x[0] - phi
    k = 1.0 / params.X_qp - 1.0 / params.X_dp
    L1 = (U * U * np.cos(2.0 * a) * k + U * np.cos(a) * x[2] / params.X_dp
          - U * np.sin(a) * x[3] / params.X_qp)
    L2 = U * np.sin(a) / params.X_dp
    L3 = U * np.cos(a) / params.X_qp
    return L1, L2, L3


@dataclass(frozen=True)
class NoiseModel:
    """Two sets of standard deviations.

    ``sigma_*`` drive the synthetic PMU noise. The filter's covariance uses
    ``sigma_delta_R``/``sigma_omega_R`` (default: same as the simulated
    values) and propagates ``sigma_U_R``/``sigma_phi_R`` into the power
    channel. ``sigma_U`` and ``sigma_U_R`` are fractions of U; angles are
    in radians.
    """

    sigma_delta: float = 2.0 * DEG
    sigma_omega: float = 1e-3
    sigma_U: float = 1e-3
    sigma_phi: float = 0.1 * DEG
    sigma_Pe: float = 0.0
    sigma_U_R: float = 2e-3
    sigma_phi_R: float = 0.2 * DEG
    sigma_delta_R: Optional[float] = None
    sigma_omega_R: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        for name in ("sigma_delta", "sigma_omega", "sigma_U", "sigma_phi", "sigma_Pe",
                     "sigma_U_R", "sigma_phi_R", "sigma_delta_R", "sigma_omega_R"):
            v = getattr(self, name)
            if v is not None and not v >= 0:
                raise ValueError(f"{name} must be non-negative, got {v}")

    @property
    def filter_sigma_delta(self) -> float:
        return self.sigma_delta if self.sigma_delta_R is None else self.sigma_delta_R

    @property
    def filter_sigma_omega(self) -> float:
        return self.sigma_omega if self.sigma_omega_R is None else self.sigma_omega_R

    def scaled(self, factor: float) -> "NoiseModel":
        """Scale the simulated noise only; the filter's assumed noise is pinned."""
        return replace(self, sigma_delta=self.sigma_delta * factor,
                       sigma_omega=self.sigma_omega * factor,
                       sigma_U=self.sigma_U * factor, sigma_phi=self.sigma_phi * factor,
                       sigma_Pe=self.sigma_Pe * factor,
                       sigma_delta_R=self.filter_sigma_delta,
                       sigma_omega_R=self.filter_sigma_omega)


def pe_variance(state, terminal, params: GeneratorParams, sigma_U_frac: float,
                sigma_phi: float) -> float:
    dU, dphi = pe_terminal_partials(state, terminal, params)
    sU = sigma_U_frac * terminal[0]
    return float(dU * dU * sU * sU + dphi * dphi * sigma_phi * sigma_phi)


def noise_covariance(terminal, state, params: GeneratorParams, model: NoiseModel) -> np.ndarray:
    """Diagonal measurement covariance at the current operating point."""
    var_pe = pe_variance(state, terminal, params, model.sigma_U_R, model.sigma_phi_R)
    return np.diag([model.filter_sigma_delta ** 2, model.filter_sigma_omega ** 2, var_pe])


class MeasurementSample(NamedTuple):
    t: float
    delta_z: float
    omega_z: float
    Pe_z: float
    U_meas: float
    phi_meas: float
    valid: tuple = (True, True, True)


@dataclass
class MeasurementStream:
    t: np.ndarray            # (N,)
    z: np.ndarray            # (N, 3)
    U: np.ndarray            # (N,)
    phi: np.ndarray          # (N,)
    valid: np.ndarray = None  # (N, 3) bool
    dt: float = field(default=0.0)

    def __post_init__(self):
        if self.valid is None:
            self.valid = np.ones(self.z.shape, dtype=bool)
        if not self.dt and len(self.t) > 1:
            self.dt = float(self.t[1] - self.t[0])

    def __len__(self):
        return len(self.t)

    def __getitem__(self, k: int) -> MeasurementSample:
        return MeasurementSample(float(self.t[k]), *map(float, self.z[k]), float(self.U[k]),
                                 float(self.phi[k]), tuple(bool(v) for v in self.valid[k]))

    def copy(self) -> "MeasurementStream":
        return MeasurementStream(self.t.copy(), self.z.copy(), self.U.copy(), self.phi.copy(),
                                 self.valid.copy(), self.dt)

    def window(self, t_start: float, t_end: float, tol: float = 1e-9) -> np.ndarray:
        """Boolean mask of samples with ``t_start <= t <= t_end`` (grid endpoints included)."""
        return (self.t >= t_start - tol) & (self.t <= t_end + tol)


def sample_stream(truth: TruthTrajectory, model: NoiseModel, rate: float,
                  params: GeneratorParams, rng: Optional[np.random.Generator] = None
                  ) -> MeasurementStream:
    """Draw a noisy PMU stream from a truth trajectory.

    The power channel is computed from the true state and true terminal
    phasor; the filter later evaluates it with the *measured* phasor, which
    is where its propagated variance comes from.
    """
    stride = 1.0 / (rate * truth.dt)
    if not rate > 0 or abs(stride - round(stride)) > 1e-9 or round(stride) < 1:
        raise ValueError(f"sample rate {rate} Hz incompatible with truth step {truth.dt} s")
    idx = np.arange(0, len(truth.t), int(round(stride)))
    rng = rng if rng is not None else np.random.default_rng(model.seed)
    x = truth.x[idx].T
    U, phi = truth.U[idx], truth.phi[idx]
    n = len(idx)
    z = measure(x, (U, phi), params).T.copy()
    e = rng.standard_normal((n, 5))
    z[:, 0] += model.sigma_delta * e[:, 0]
    z[:, 1] += model.sigma_omega * e[:, 1]
    z[:, 2] += model.sigma_Pe * e[:, 2]
    U_meas = U * (1.0 + model.sigma_U * e[:, 3])
    phi_meas = phi + model.sigma_phi * e[:, 4]
    return MeasurementStream(t=truth.t[idx].copy(), z=z, U=U_meas, phi=phi_meas,
                             dt=float(truth.dt * round(stride)))


STREAM_COLUMNS = ("t", "delta_z", "omega_z", "Pe_z", "U_meas", "phi_meas")
FLAG_COLUMNS = ("valid_delta", "valid_omega", "valid_Pe")


def write_stream(path, stream: MeasurementStream, flags: bool = True) -> Path:
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STREAM_COLUMNS + (FLAG_COLUMNS if flags else ()))
        for k in range(len(stream)):
            row = [repr(float(stream.t[k]))] + [repr(float(v)) for v in stream.z[k]]
            row += [repr(float(stream.U[k])), repr(float(stream.phi[k]))]
            if flags:
                row += [str(int(v)) for v in stream.valid[k]]
            w.writerow(row)
    return path


def read_stream(path) -> MeasurementStream:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if len(rows) < 2:
        raise ValueError(f"{path}: no measurement rows")
    header = rows[0]
    missing = [c for c in STREAM_COLUMNS if c not in header]
    if missing:
        raise ValueError(f"{path}: missing column(s) {', '.join(missing)}")
    cols = [header.index(c) for c in STREAM_COLUMNS]
    data = np.array([[float(r[j]) for j in cols] for r in rows[1:]])
    if all(c in header for c in FLAG_COLUMNS):
        fcols = [header.index(c) for c in FLAG_COLUMNS]
        valid = np.array([[r[j].strip() not in ("0", "False", "false") for j in fcols]
                          for r in rows[1:]])
    else:
        valid = None
    return MeasurementStream(t=data[:, 0], z=data[:, 1:4].copy(), U=data[:, 4].copy(),
                             phi=data[:, 5].copy(), valid=valid)
