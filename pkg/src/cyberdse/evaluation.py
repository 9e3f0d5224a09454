"""Accuracy indices and per-step timing for completed filter runs."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

STATE_NAMES = ("delta", "omega", "Eqp", "Edp")
MEASURED = ("delta", "omega")


class WindowMismatch(ValueError):
    """Two reports being compared were computed over different samples."""


def _arrays(*args):
    out = [np.asarray(a, dtype=float).ravel() for a in args]
    n = len(out[0])
    if any(len(a) != n for a in out):
        raise ValueError("index inputs must have equal length")
    return out


def tau1(estimates, measurements, return_excluded: bool = False):
    """RMS of the estimate's relative deviation from the measurement.

    Samples with a zero measurement are dropped; ``return_excluded`` also
    returns how many.
    """
    x_hat, x_z = _arrays(estimates, measurements)
    keep = x_z != 0
    excluded = int(len(x_z) - keep.sum())
    if not keep.any():
        raise ValueError("every measurement is zero; tau1 is undefined")
    rel = (x_hat[keep] - x_z[keep]) / x_z[keep]
    val = float(np.sqrt(np.mean(rel * rel)))
    return (val, excluded) if return_excluded else val


def tau2(estimates, measurements, truth) -> float:
    """Estimate error about truth relative to the measurement error about truth."""
    x_hat, x_z, x_t = _arrays(estimates, measurements, truth)
    den = np.sum((x_z - x_t) ** 2)
    if not den > 0:
        raise ValueError("measurements coincide with truth; tau2 is undefined")
    return float(np.sqrt(np.sum((x_hat - x_t) ** 2) / den))


def tau3(estimates, truth) -> float:
    """Root-mean-square error against truth."""
    x_hat, x_t = _arrays(estimates, truth)
    if len(x_hat) == 0:
        raise ValueError("tau3 needs at least one sample")
    return float(np.sqrt(np.mean((x_hat - x_t) ** 2)))


@dataclass
class IndexReport:
    method: str
    window: tuple             # (t_start, t_end) actually covered
    N: int
    indices: dict             # variable -> {"tau1", "tau2", "tau3"}
    excluded: dict = field(default_factory=dict)   # tau1 zero-measurement drops
    sample_index: Optional[np.ndarray] = field(default=None, repr=False)

    def __getitem__(self, var: str) -> dict:
        return self.indices[var]

    def to_dict(self) -> dict:
        return {"method": self.method, "window_s": list(self.window), "N": self.N,
                "indices": self.indices, "tau1_excluded": self.excluded}


def truth_at(truth, t) -> np.ndarray:
    """Truth states on the sample instants ``t`` (must lie on the truth grid)."""
    t = np.asarray(t, dtype=float)
    k = np.rint((t - truth.t[0]) / truth.dt).astype(int)
    if k.min() < 0 or k.max() >= len(truth.t) or np.max(np.abs(truth.t[k] - t)) > 1e-9:
        raise ValueError("sample instants are not on the truth grid")
    return truth.x[k]


def index_report(trajectory, measurements, truth_states, window=None) -> IndexReport:
    """Indices of one filter run.

    ``measurements`` is the (N, 3) stream the filter consumed and
    ``truth_states`` the (N, 4) truth on the same instants. ``window``
    restricts to ``t_start <= t <= t_end``; sample 0 (the initial guess)
    is always left out.
    """
    t = trajectory.t
    mask = np.ones(len(t), dtype=bool)
    mask[0] = False
    if window is not None:
        mask &= (t >= window[0] - 1e-9) & (t <= window[1] + 1e-9)
    idx = np.flatnonzero(mask)
    if len(idx) == 0:
        raise ValueError(f"no samples inside window {window}")
    x_hat = trajectory.x_post[idx]
    z = np.asarray(measurements, dtype=float)[idx]
    x_t = np.asarray(truth_states, dtype=float)[idx]
    indices, excluded = {}, {}
    for j, name in enumerate(STATE_NAMES):
        entry = {"tau3": tau3(x_hat[:, j], x_t[:, j])}
        if name in MEASURED:
            # undefined indices (all-zero or noiseless measurements) are reported as None
            try:
                entry["tau1"], excluded[name] = tau1(x_hat[:, j], z[:, j], return_excluded=True)
            except ValueError:
                entry["tau1"], excluded[name] = None, len(idx)
            try:
                entry["tau2"] = tau2(x_hat[:, j], z[:, j], x_t[:, j])
            except ValueError:
                entry["tau2"] = None
        indices[name] = entry
    return IndexReport(method=trajectory.method, window=(float(t[idx[0]]), float(t[idx[-1]])),
                       N=len(idx), indices=indices, excluded=excluded, sample_index=idx)


def check_same_window(*reports: IndexReport) -> None:
    ref = reports[0]
    for r in reports[1:]:
        same = r.N == ref.N and r.window == ref.window
        if same and ref.sample_index is not None and r.sample_index is not None:
            same = np.array_equal(ref.sample_index, r.sample_index)
        if not same:
            raise WindowMismatch(f"{ref.method} covers {ref.window} (N={ref.N}) but "
                                 f"{r.method} covers {r.window} (N={r.N})")


def compare(a: IndexReport, b: IndexReport) -> dict:
    """Ratio ``a / b`` of every index; refuses reports over different samples."""
    check_same_window(a, b)
    out = {}
    for var, ia in a.indices.items():
        out[var] = {}
        for k, va in ia.items():
            vb = b.indices[var][k]
            out[var][k] = None if va is None or vb is None else (va / vb if vb else float("inf"))
    return out


@dataclass
class TimingReport:
    method: str
    steps: int
    forecast_mean_ms: float
    forecast_max_ms: float
    update_mean_ms: float
    update_max_ms: float
    step_mean_ms: float
    step_max_ms: float

    def to_dict(self) -> dict:
        return asdict(self)


def timing_profile(trajectory, warmup: int = 10) -> TimingReport:
    """Wall-clock statistics per filter step, first ``warmup`` steps dropped."""
    f = trajectory.t_forecast
    u = trajectory.t_update
    done = np.isfinite(f) & np.isfinite(u)
    f, u = f[done][warmup:], u[done][warmup:]
    if len(f) == 0:
        raise ValueError("no timed steps left after warm-up")
    s = f + u
    ms = 1e3
    return TimingReport(method=trajectory.method, steps=int(done.sum()),
                        forecast_mean_ms=float(f.mean() * ms), forecast_max_ms=float(f.max() * ms),
                        update_mean_ms=float(u.mean() * ms), update_max_ms=float(u.max() * ms),
                        step_mean_ms=float(s.mean() * ms), step_max_ms=float(s.max() * ms))


def metrics_document(scenario: str, reports: dict) -> dict:
    """Nest reports as scenario -> window -> filter -> variable -> index.

    ``reports`` maps a window label (e.g. ``"attack"``, ``"full"``) to a list
    of :class:`IndexReport`; reports under one label must share samples.
    """
    doc = {}
    for label, group in reports.items():
        check_same_window(*group)
        doc[label] = {r.method: {"window_s": list(r.window), "N": r.N, **r.indices,
                                 "tau1_excluded": r.excluded} for r in group}
    return {scenario: doc}


def write_json(path, doc) -> Path:
    path = Path(path)
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path
