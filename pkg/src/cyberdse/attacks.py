"""False-data injection against the linearised measurement model and
Bernoulli packet-loss (DoS) channels."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dynamics import GeneratorParams
from .measurement import MeasurementStream, measure, pe_state_partials


@dataclass
class JacobianH:
    """Measurement Jacobian at ``point`` plus the value of ``h`` there.

    ``residual`` uses the affine model ``h(x) ~ h0 + H (x - point)``; the
    constant part is what the plain ``z = H x`` form folds into its noise.
    """

    H: np.ndarray
    point: np.ndarray
    terminal: tuple
    h0: np.ndarray

    @property
    def L1(self) -> float:
        return float(self.H[2, 0])

    @property
    def L2(self) -> float:
        return float(self.H[2, 2])

    @property
    def L3(self) -> float:
        return float(self.H[2, 3])

    def residual(self, z, x) -> np.ndarray:
        return np.asarray(z, dtype=float) - self.h0 - self.H @ (np.asarray(x, dtype=float) - self.point)


def jacobian_h(point, terminal, params: GeneratorParams) -> JacobianH:
    x = np.asarray(point, dtype=float)
    L1, L2, L3 = pe_state_partials(x, terminal, params)
    H = np.array([[1.0, 0.0, 0.0, 0.0],
                  [0.0, 1.0, 0.0, 0.0],
                  [L1, 0.0, L2, L3]])
    return JacobianH(H=H, point=x.copy(), terminal=tuple(terminal), h0=measure(x, terminal, params))


def _matrix(H) -> np.ndarray:
    return H.H if isinstance(H, JacobianH) else np.asarray(H, dtype=float)


def build_fdi(c, H) -> np.ndarray:
    """Attack vector ``a = H c``; leaves the linearised residual untouched."""
    return _matrix(H) @ np.asarray(c, dtype=float)


def residual_norm(z, x_hat, H) -> float:
    if isinstance(H, JacobianH):
        return float(np.linalg.norm(H.residual(z, x_hat)))
    return float(np.linalg.norm(np.asarray(z, dtype=float) - _matrix(H) @ np.asarray(x_hat, dtype=float)))


def stealth_check(z_a, x_hat_a, H, B_j: float) -> bool:
    """Passes bad-data detection iff the residual norm is at most ``B_j``."""
    return residual_norm(z_a, x_hat_a, H) <= B_j


@dataclass(frozen=True)
class FdiConfig:
    sigma_c: float
    t_start: float = 4.0
    t_end: float = 12.0
    B_j: float = 2.1
    seed: int = 0
    relinearize: bool = True

    def __post_init__(self):
        if self.sigma_c < 0:
            raise ValueError("sigma_c must be non-negative")
        if not self.t_start < self.t_end:
            raise ValueError("attack window needs t_start < t_end")
        if not self.B_j > 0:
            raise ValueError("detection threshold B_j must be positive")


def draw_attack_vector(config: FdiConfig, rng: np.random.Generator, n: int = 4) -> np.ndarray:
    """State-error vector with i.i.d. N(0, sigma_c^2) components."""
    return config.sigma_c * rng.standard_normal(n)


@dataclass
class AttackLog:
    kind: str
    t: np.ndarray                 # windowed sample times
    index: np.ndarray             # their indices in the stream
    attacked: np.ndarray          # bool: stream was modified at this sample
    a: np.ndarray                 # (M, 3) injected vector (zeros for DoS)
    mask: np.ndarray              # (M, d+1) transmission states (ones for FDI)
    residual_before: np.ndarray
    residual_after: np.ndarray
    stealth_pass: np.ndarray      # bool; always True for DoS

    def __len__(self):
        return len(self.t)

    @property
    def skipped(self) -> int:
        return int(np.sum(~self.stealth_pass))


@dataclass
class Feedback:
    """What the attacker knows about the estimator at one sample."""
    x_hat: np.ndarray
    H: JacobianH


def apply_fdi(stream: MeasurementStream, config: FdiConfig,
              feedback: Sequence[Optional[Feedback]],
              rng: Optional[np.random.Generator] = None):
    """Inject ``z_a = z + H c`` on every windowed sample that passes detection.

    ``feedback[k]`` provides the forecast ``x_hat`` and the Jacobian at it.
    A draw that fails the stealth check is not injected.
    """
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    out = stream.copy()
    idx = np.flatnonzero(stream.window(config.t_start, config.t_end))
    if len(idx) and (idx[-1] >= len(feedback)):
        raise ValueError(f"no estimator feedback for sample {idx[-1]}")
    m = len(idx)
    log = AttackLog(kind="fdi", t=stream.t[idx].copy(), index=idx, attacked=np.zeros(m, bool),
                    a=np.zeros((m, 3)), mask=np.ones((m, 1), int),
                    residual_before=np.zeros(m), residual_after=np.zeros(m),
                    stealth_pass=np.zeros(m, bool))
    frozen_H = None
    for j, k in enumerate(idx):
        fb = feedback[k]
        if fb is None:
            raise ValueError(f"no estimator feedback for sample {k} (t={stream.t[k]:.3f} s)")
        H = fb.H
        if not config.relinearize:
            frozen_H = frozen_H or H
            H = frozen_H
        c = draw_attack_vector(config, rng)
        a = build_fdi(c, H)
        z = stream.z[k]
        z_a = z + a
        before = residual_norm(z, fb.x_hat, H)
        after = residual_norm(z_a, fb.x_hat + c, H)
        ok = after <= config.B_j
        log.residual_before[j] = before
        log.residual_after[j] = after
        log.stealth_pass[j] = ok
        if ok:
            out.z[k] = z_a
            log.a[j] = a
            log.attacked[j] = bool(np.any(a != 0))
    return out, log


@dataclass(frozen=True)
class DosConfig:
    """Bernoulli packet loss; ``rho`` is the probability a packet is lost."""

    rho: float
    d: int = 1
    t_start: float = 4.0
    t_end: float = 12.0
    semantics: str = "zeroed"
    seed: int = 0
    limit_consecutive: bool = False

    def __post_init__(self):
        if not 0 < self.rho <= 1:
            raise ValueError(f"rho must lie in (0, 1], got {self.rho}")
        if self.d < 1:
            raise ValueError("d must be at least 1")
        if not self.t_start < self.t_end:
            raise ValueError("attack window needs t_start < t_end")
        if self.semantics not in ("zeroed", "hold-last"):
            raise ValueError(f"unknown loss semantics {self.semantics!r}")


def draw_dos_mask(config: DosConfig, rng: np.random.Generator) -> np.ndarray:
    """Transmission states for ``z_k, z_{k-1}, ..., z_{k-d}``; 0 marks a lost packet."""
    return (rng.random(config.d + 1) >= config.rho).astype(int)


def apply_dos(stream: MeasurementStream, config: DosConfig,
              rng: Optional[np.random.Generator] = None):
    """Drop windowed packets. Lost ``z`` vectors are zeroed (or replaced by
    the last delivered one) and flagged invalid; the terminal phasor used as
    filter input is left alone."""
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    out = stream.copy()
    idx = np.flatnonzero(stream.window(config.t_start, config.t_end))
    m = len(idx)
    log = AttackLog(kind="dos", t=stream.t[idx].copy(), index=idx, attacked=np.zeros(m, bool),
                    a=np.zeros((m, 3)), mask=np.ones((m, config.d + 1), int),
                    residual_before=np.full(m, np.nan), residual_after=np.full(m, np.nan),
                    stealth_pass=np.ones(m, bool))
    last_good = stream.z[idx[0] - 1].copy() if m and idx[0] > 0 else None
    run = 0
    for j, k in enumerate(idx):
        mu = draw_dos_mask(config, rng)
        if config.limit_consecutive and run >= config.d:
            mu[0] = 1
        log.mask[j] = mu
        if mu[0] == 0:
            run += 1
            log.attacked[j] = True
            out.valid[k] = False
            if config.semantics == "zeroed" or last_good is None:
                out.z[k] = 0.0
            else:
                out.z[k] = last_good
        else:
            run = 0
            last_good = stream.z[k].copy()
    return out, log


def write_attack_log(path, log: AttackLog) -> Path:
    path = Path(path)
    d1 = log.mask.shape[1]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "index", "attacked", "a_delta", "a_omega", "a_Pe"]
                   + [f"mu_{i}" for i in range(d1)]
                   + ["residual_before", "residual_after", "stealth_pass"])
        for j in range(len(log)):
            w.writerow([repr(float(log.t[j])), int(log.index[j]), int(log.attacked[j])]
                       + [repr(float(v)) for v in log.a[j]]
                       + [int(v) for v in log.mask[j]]
                       + [repr(float(log.residual_before[j])), repr(float(log.residual_after[j])),
                          int(log.stealth_pass[j])])
    return path
