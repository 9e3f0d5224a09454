"""Two-axis synchronous generator with governor and exciter loops.

State vector ``x = [delta, omega, Eqp, Edp]``; control vector
``u = [T_m, E_f, U, phi]``. Functions accept a single state of shape ``(4,)``
or a batch of states stacked column-wise, shape ``(4, N)``, so the filters can
push all cubature points through one call.

Truth trajectories come either from a single-machine-infinite-bus (SMIB)
network or from an externally supplied terminal-voltage trace.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np


class DivergenceError(RuntimeError):
    """Integration produced a non-finite state."""

    def __init__(self, message: str, step: Optional[int] = None, time: Optional[float] = None):
        super().__init__(message)
        self.step = step
        self.time = time


class InfeasibleOperatingPoint(ValueError):
    pass


class TraceError(ValueError):
    """Malformed terminal-voltage trace."""

    def __init__(self, message: str, row: Optional[int] = None):
        super().__init__(message if row is None else f"row {row}: {message}")
        self.row = row


class GeneratorState(NamedTuple):
    delta: float
    omega: float
    Eqp: float
    Edp: float


class ControlInput(NamedTuple):
    T_m: float
    E_f: float
    U: float
    phi: float


class StatorSolution(NamedTuple):
    i_d: np.ndarray
    i_q: np.ndarray
    v_d: np.ndarray
    v_q: np.ndarray
    P_e: np.ndarray
    T_e: np.ndarray


@dataclass(frozen=True)
class GeneratorParams:
    """Fourth-order machine constants, per unit on machine base.

    ``omega_b`` scales the rotor-angle equation, ``d(delta)/dt = omega_b*(omega-1)``.
    The default of 1.0 is the plain ``omega - 1`` form with time in seconds;
    set it to the electrical base (2*pi*f) to get physically scaled swings.
    """

    T_j: float = 8.4
    D: float = 10.0
    T_d0p: float = 10.2
    T_q0p: float = 1.5
    X_d: float = 1.0
    X_dp: float = 0.31
    X_q: float = 0.69
    X_qp: float = 0.4167
    omega_b: float = 1.0

    def __post_init__(self):
        for name in ("T_j", "T_d0p", "T_q0p", "omega_b"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.X_d > self.X_dp > 0:
            raise ValueError(f"need X_d > X_dp > 0, got X_d={self.X_d}, X_dp={self.X_dp}")
        if not self.X_q > self.X_qp > 0:
            raise ValueError(f"need X_q > X_qp > 0, got X_q={self.X_q}, X_qp={self.X_qp}")
        if self.D < 0:
            raise ValueError(f"D must be non-negative, got {self.D}")


@dataclass(frozen=True)
class GovernorParams:
    """Droop governor: servo lag, turbine lead-lag, reheater lead-lag.

    Transfer chain from the clamped power order to ``T_m``::

        1/(1 + s T_s) -> (1 + s T_3)/(1 + s T_c) -> (1 + s T_4)/(1 + s T_5)

    The reheater stage is bypassed when ``T_5 == 0``.
    """

    omega_ref: float = 1.0
    r_inv: float = 25.0
    T_max: float = 1.2
    T_s: float = 0.1
    T_c: float = 0.5
    T_3: float = 0.0
    T_4: float = 1.25
    T_5: float = 5.0

    def __post_init__(self):
        if not (self.T_s > 0 and self.T_c > 0):
            raise ValueError("T_s and T_c must be positive")
        if not self.T_max > 0:
            raise ValueError("T_max must be positive")
        if min(self.T_3, self.T_4, self.T_5) < 0:
            raise ValueError("T_3, T_4, T_5 must be non-negative")


@dataclass(frozen=True)
class ExciterParams:
    """Static exciter: first-order regulator with output feedback.

    ``V_ref`` of None means "pick the setpoint that holds the initial E_f".
    """

    K_a: float = 20.0
    T_a: float = 0.2
    K_g: float = 0.0
    V_b: float = 1.0
    V_ref: Optional[float] = None
    E_f_min: float = -5.0
    E_f_max: float = 6.0

    def __post_init__(self):
        if not (self.K_a > 0 and self.T_a > 0):
            raise ValueError("K_a and T_a must be positive")
        if not self.V_b > 0:
            raise ValueError("V_b must be positive")
        if not self.E_f_min < self.E_f_max:
            raise ValueError("E_f_min must be below E_f_max")


@dataclass(frozen=True)
class SmibParams:
    """External network seen by the machine: infinite bus behind reactance X_e.

    The infinite-bus magnitude follows from the initial operating point.
    During ``[t_on, t_off)`` the bus voltage is scaled by ``fault_vinf_scale``
    and, if given, the reactance is replaced by ``fault_X_e``.
    """

    X_e: float = 0.5
    t_on: Optional[float] = None
    t_off: Optional[float] = None
    fault_vinf_scale: float = 0.4
    fault_X_e: Optional[float] = None

    def __post_init__(self):
        if not self.X_e > 0:
            raise ValueError("X_e must be positive")
        if (self.t_on is None) != (self.t_off is None):
            raise ValueError("fault window needs both t_on and t_off")
        if self.t_on is not None and not self.t_on < self.t_off:
            raise ValueError("fault window needs t_on < t_off")
        if self.fault_vinf_scale < 0:
            raise ValueError("fault_vinf_scale must be non-negative")
        if self.fault_X_e is not None and not self.fault_X_e > 0:
            raise ValueError("fault_X_e must be positive")

    @property
    def has_fault(self) -> bool:
        return self.t_on is not None

    def in_fault(self, t: float) -> bool:
        # half-open window on a float grid: nudge to avoid t_off landing inside
        eps = 1e-9
        return self.has_fault and self.t_on - eps <= t < self.t_off - eps


# ---------------------------------------------------------------------------
# algebraic closure and state equations


def stator_solve(state, terminal, params: GeneratorParams) -> StatorSolution:
    """dq currents and electrical power for a given terminal phasor (U, phi)."""
    x = np.asarray(state, dtype=float)
    U, phi = (np.asarray(v, dtype=float) for v in terminal)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(U)) and np.all(np.isfinite(phi))):
        raise ValueError("stator_solve: non-finite input")
    if np.any(U < 0):
        raise ValueError("stator_solve: negative terminal voltage")
    delta, Eqp, Edp = x[0], x[2], x[3]
    ang = delta - phi
    v_d = U * np.sin(ang)
    v_q = U * np.cos(ang)
    i_d = (Eqp - v_q) / params.X_dp
    i_q = (v_d + Edp) / params.X_qp
    P_e = v_d * i_d + v_q * i_q
    return StatorSolution(i_d, i_q, v_d, v_q, P_e, P_e)


def _derivative(x, T_m, E_f, i_d, i_q, T_e, p: GeneratorParams):
    delta, omega, Eqp, Edp = x
    return np.array([
        p.omega_b * (omega - 1.0),
        (T_m - T_e - p.D * (omega - 1.0)) / p.T_j,
        (E_f - Eqp - (p.X_d - p.X_dp) * i_d) / p.T_d0p,
        (-Edp + (p.X_q - p.X_qp) * i_q) / p.T_q0p,
    ])


def state_derivative(state, control, params: GeneratorParams) -> np.ndarray:
    """Time derivative of ``[delta, omega, Eqp, Edp]`` for a terminal-driven machine."""
    x = np.asarray(state, dtype=float)
    T_m, E_f, U, phi = control
    # unchecked fast path; stator_solve validates on the public route
    ang = x[0] - phi
    v_d = U * np.sin(ang)
    v_q = U * np.cos(ang)
    i_d = (x[2] - v_q) / params.X_dp
    i_q = (v_d + x[3]) / params.X_qp
    T_e = v_d * i_d + v_q * i_q
    return _derivative(x, T_m, E_f, i_d, i_q, T_e, params)


def smib_currents(state, V_inf: float, X_e: float, params: GeneratorParams):
    """Closed-form dq currents of the machine tied to an infinite bus at angle 0."""
    x = np.asarray(state, dtype=float)
    delta, Eqp, Edp = x[0], x[2], x[3]
    i_d = (Eqp - V_inf * np.cos(delta)) / (params.X_dp + X_e)
    i_q = (V_inf * np.sin(delta) + Edp) / (params.X_qp + X_e)
    return i_d, i_q


def smib_terminal(state, V_inf: float, X_e: float, params: GeneratorParams):
    """Terminal voltage magnitude and angle (infinite bus is the angle reference)."""
    x = np.asarray(state, dtype=float)
    i_d, i_q = smib_currents(x, V_inf, X_e, params)
    v_d = params.X_qp * i_q - x[3]
    v_q = x[2] - params.X_dp * i_d
    # (v_d + j v_q) = V * exp(j(pi/2 - delta))
    V = (v_d + 1j * v_q) * np.exp(-1j * (np.pi / 2 - x[0]))
    return np.abs(V), np.angle(V)


def smib_derivative(state, T_m: float, E_f: float, V_inf: float, X_e: float,
                    params: GeneratorParams) -> np.ndarray:
    x = np.asarray(state, dtype=float)
    i_d, i_q = smib_currents(x, V_inf, X_e, params)
    v_d = params.X_qp * i_q - x[3]
    v_q = x[2] - params.X_dp * i_d
    T_e = v_d * i_d + v_q * i_q
    return _derivative(x, T_m, E_f, i_d, i_q, T_e, params)


def rk4(fun, x, dt: float):
    """One classical Runge-Kutta step of an autonomous right-hand side."""
    k1 = fun(x)
    k2 = fun(x + 0.5 * dt * k1)
    k3 = fun(x + 0.5 * dt * k2)
    k4 = fun(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_step(state, control, params: GeneratorParams, dt: float,
             step_index: Optional[int] = None) -> np.ndarray:
    """Advance a terminal-driven machine by ``dt`` with ``control`` held fixed."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.asarray(state, dtype=float)
    out = rk4(lambda y: state_derivative(y, control, params), x, dt)
    if not np.all(np.isfinite(out)):
        raise DivergenceError(f"non-finite state at step {step_index}", step=step_index)
    return out


# ---------------------------------------------------------------------------
# governor and exciter (discretised exactly for inputs held over a step)


def _lag(y: float, target: float, T: float, dt: float) -> float:
    return target + (y - target) * math.exp(-dt / T)


@dataclass
class GovernorStates:
    T_ref: float
    servo: float
    turbine: float
    reheat: float


def _governor_output(g: GovernorStates, p: GovernorParams) -> float:
    hp = g.turbine + (p.T_3 / p.T_c) * g.servo
    if p.T_5 == 0:
        return hp
    return g.reheat + (p.T_4 / p.T_5) * hp


def governor_init(T_m0: float, params: GovernorParams) -> GovernorStates:
    p = params
    hp = T_m0
    return GovernorStates(
        T_ref=T_m0,
        servo=T_m0,
        turbine=(1.0 - p.T_3 / p.T_c) * T_m0,
        reheat=(1.0 - p.T_4 / p.T_5) * hp if p.T_5 > 0 else 0.0,
    )


def governor_step(omega: float, states: GovernorStates, params: GovernorParams, dt: float):
    """Advance the governor one step; returns ``(T_m, new_states)``.

    ``T_m`` is the output after the step, driven by the speed ``omega``.
    """
    p = params
    order = states.T_ref + p.r_inv * (p.omega_ref - omega)
    order = min(max(order, 0.0), p.T_max)
    servo = _lag(states.servo, order, p.T_s, dt)
    turbine = _lag(states.turbine, (1.0 - p.T_3 / p.T_c) * servo, p.T_c, dt)
    new = GovernorStates(states.T_ref, servo, turbine, states.reheat)
    if p.T_5 > 0:
        hp = turbine + (p.T_3 / p.T_c) * servo
        new.reheat = _lag(states.reheat, (1.0 - p.T_4 / p.T_5) * hp, p.T_5, dt)
    return _governor_output(new, p), new


@dataclass
class ExciterStates:
    V_r: float
    E_f: float
    V_ref: float


def _clamp_ef(v: float, p: ExciterParams) -> float:
    return min(max(v, p.E_f_min), p.E_f_max)


def exciter_init(E_f0: float, U0: float, params: ExciterParams) -> ExciterStates:
    p = params
    if not p.E_f_min <= E_f0 <= p.E_f_max:
        raise InfeasibleOperatingPoint(
            f"initial field voltage {E_f0:.4f} outside limits [{p.E_f_min}, {p.E_f_max}]")
    V_r = E_f0 / p.V_b
    V_ref = p.V_ref if p.V_ref is not None else U0 + V_r / p.K_a + p.K_g * E_f0
    return ExciterStates(V_r=V_r, E_f=E_f0, V_ref=V_ref)


def exciter_step(U: float, states: ExciterStates, params: ExciterParams, dt: float):
    """Advance the regulator one step; returns ``(E_f, new_states)``."""
    p = params
    err = states.V_ref - U - p.K_g * states.E_f
    V_r = _lag(states.V_r, p.K_a * err, p.T_a, dt)
    # anti-windup: regulator state stays within what the output can express
    V_r = min(max(V_r, p.E_f_min / p.V_b), p.E_f_max / p.V_b)
    E_f = _clamp_ef(p.V_b * V_r, p)
    return E_f, ExciterStates(V_r=V_r, E_f=E_f, V_ref=states.V_ref)


# ---------------------------------------------------------------------------
# initialisation and truth simulation


@dataclass
class OperatingPoint:
    state: np.ndarray
    control: ControlInput
    governor: GovernorStates
    exciter: ExciterStates
    V_inf: float
    phi_shift: float


def steady_state_init(target, params: GeneratorParams,
                      governor: Optional[GovernorParams] = None,
                      exciter: Optional[ExciterParams] = None,
                      X_e: Optional[float] = None) -> OperatingPoint:
    """Equilibrium for terminal power ``(P0, Q0, U0)`` (or ``(P0, U0)`` with Q0 = 0).

    With ``X_e`` given, angles are referred to the infinite bus that supports
    the operating point, and its magnitude is returned as ``V_inf``.
    Otherwise the terminal voltage sits at angle 0 and ``V_inf`` is NaN.
    """
    if len(target) == 2:
        P0, U0 = target
        Q0 = 0.0
    else:
        P0, Q0, U0 = target
    if not U0 > 0:
        raise InfeasibleOperatingPoint(f"terminal voltage must be positive, got {U0}")
    p = params
    V = complex(U0, 0.0)
    I = np.conj(complex(P0, Q0) / V)

    # At equilibrium the Edp equation gives Edp = (X_q - X_qp) i_q, and the
    # stator relation v_d = X_qp i_q - Edp then reads v_d = X_eff i_q.
    X_eff = 2.0 * p.X_qp - p.X_q
    E_Q = V + 1j * X_eff * I
    if abs(E_Q) < 1e-9:
        raise InfeasibleOperatingPoint("rotor axis undefined at this operating point")
    delta = float(np.angle(E_Q))
    rot = np.exp(1j * (np.pi / 2 - delta))
    vdq = V * rot
    idq = I * rot
    v_d, v_q = vdq.real, vdq.imag
    i_d, i_q = idq.real, idq.imag
    if v_q + X_eff * i_d < 0:
        # E_Q points along -q; flip the rotor axis
        delta += np.pi
        v_d, v_q, i_d, i_q = -v_d, -v_q, -i_d, -i_q
    Eqp = v_q + p.X_dp * i_d
    Edp = p.X_qp * i_q - v_d
    if Eqp <= 0:
        raise InfeasibleOperatingPoint(
            f"required Eqp = {Eqp:.4f} is not positive for P0={P0}, Q0={Q0}, U0={U0}")
    E_f = Eqp + (p.X_d - p.X_dp) * i_d
    T_m = v_d * i_d + v_q * i_q

    phi = 0.0
    V_inf = float("nan")
    if X_e is not None:
        V_bus = V - 1j * X_e * I
        if abs(V_bus) < 1e-9:
            raise InfeasibleOperatingPoint("infinite-bus voltage vanishes")
        shift = float(np.angle(V_bus))
        V_inf = float(abs(V_bus))
        delta -= shift
        phi -= shift
    else:
        shift = 0.0

    state = np.array([delta, 1.0, Eqp, Edp])
    gov = governor_init(T_m, governor or GovernorParams())
    exc = exciter_init(E_f, U0, exciter or ExciterParams())
    return OperatingPoint(state=state, control=ControlInput(T_m, E_f, U0, phi),
                          governor=gov, exciter=exc, V_inf=V_inf, phi_shift=shift)


@dataclass
class TruthTrajectory:
    t: np.ndarray            # (N,)
    x: np.ndarray            # (N, 4)
    u: np.ndarray            # (N, 4) columns T_m, E_f, U, phi
    stator: np.ndarray       # (N, 6) columns i_d, i_q, v_d, v_q, P_e, T_e
    dt: float

    def __len__(self):
        return len(self.t)

    @property
    def U(self):
        return self.u[:, 2]

    @property
    def phi(self):
        return self.u[:, 3]

    def state(self, k: int) -> GeneratorState:
        return GeneratorState(*self.x[k])


def _stator_row(x, U, phi, params):
    s = stator_solve(x, (U, phi), params)
    return [float(v) for v in s]


def simulate_truth(params: GeneratorParams, smib: SmibParams, duration: float, dt: float,
                   target=(0.8, 0.2, 1.05),
                   governor: Optional[GovernorParams] = None,
                   exciter: Optional[ExciterParams] = None) -> TruthTrajectory:
    """Closed-loop SMIB integration from the steady state of ``target``.

    Governor and exciter outputs are held over each RK4 step, then updated
    from the speed and terminal voltage at the end of the step.
    """
    if not dt > 0 or not duration > 0:
        raise ValueError("duration and dt must be positive")
    governor = governor or GovernorParams()
    exciter = exciter or ExciterParams()
    op = steady_state_init(target, params, governor, exciter, X_e=smib.X_e)
    n = int(round(duration / dt)) + 1
    t = np.arange(n) * dt
    xs = np.empty((n, 4))
    us = np.empty((n, 4))
    st = np.empty((n, 6))

    x = op.state.copy()
    gov, exc = op.governor, op.exciter
    T_m, E_f = op.control.T_m, op.control.E_f

    def network(tk):
        if smib.in_fault(tk):
            X_e = smib.fault_X_e if smib.fault_X_e is not None else smib.X_e
            return op.V_inf * smib.fault_vinf_scale, X_e
        return op.V_inf, smib.X_e

    for k in range(n):
        V_inf, X_e = network(t[k])
        U, phi = smib_terminal(x, V_inf, X_e, params)
        xs[k] = x
        us[k] = (T_m, E_f, U, phi)
        st[k] = _stator_row(x, U, phi, params)
        if k == n - 1:
            break
        x = rk4(lambda y: smib_derivative(y, T_m, E_f, V_inf, X_e, params), x, dt)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"truth integration diverged at t={t[k + 1]:.4f} s",
                                  step=k + 1, time=float(t[k + 1]))
        V_next, X_next = network(t[k + 1])
        U_next, _ = smib_terminal(x, V_next, X_next, params)
        T_m, gov = governor_step(x[1], gov, governor, dt)
        E_f, exc = exciter_step(U_next, exc, exciter, dt)
    return TruthTrajectory(t=t, x=xs, u=us, stator=st, dt=dt)


def simulate_from_trace(trace: "Trace", params: GeneratorParams, x0=None,
                        governor: Optional[GovernorParams] = None,
                        exciter: Optional[ExciterParams] = None) -> TruthTrajectory:
    """Integrate the machine against a recorded terminal-voltage trace.

    The initial state comes from ``x0``, else from the trace's own state
    columns, else from the equilibrium at the first terminal sample with the
    electrical power implied by that equilibrium (requires ``x0``-free traces
    to start in steady state; P0 = 0 is not assumed).
    """
    governor = governor or GovernorParams()
    exciter = exciter or ExciterParams()
    if x0 is None:
        if trace.states is None:
            raise TraceError("trace has no state columns; pass x0")
        x0 = trace.states[0]
    x = np.asarray(x0, dtype=float).copy()
    s0 = stator_solve(x, (trace.U[0], trace.phi[0]), params)
    T_m = float(s0.P_e)
    E_f = float(x[2] + (params.X_d - params.X_dp) * s0.i_d)
    gov = governor_init(T_m, governor)
    exc = exciter_init(E_f, trace.U[0], exciter)
    n = len(trace.t)
    xs = np.empty((n, 4))
    us = np.empty((n, 4))
    st = np.empty((n, 6))
    for k in range(n):
        xs[k] = x
        us[k] = (T_m, E_f, trace.U[k], trace.phi[k])
        st[k] = _stator_row(x, trace.U[k], trace.phi[k], params)
        if k == n - 1:
            break
        x = rk4_step(x, ControlInput(T_m, E_f, trace.U[k], trace.phi[k]), params, trace.dt, k)
        T_m, gov = governor_step(x[1], gov, governor, trace.dt)
        E_f, exc = exciter_step(trace.U[k + 1], exc, exciter, trace.dt)
    return TruthTrajectory(t=trace.t.copy(), x=xs, u=us, stator=st, dt=trace.dt)


# ---------------------------------------------------------------------------
# terminal-voltage trace files

TRACE_COLUMNS = ("t", "U", "phi")
STATE_COLUMNS = ("delta", "omega", "Eqp", "Edp")


@dataclass
class Trace:
    t: np.ndarray
    U: np.ndarray
    phi: np.ndarray
    states: Optional[np.ndarray] = None
    dt: float = field(default=0.0)


def write_trace(path, truth: TruthTrajectory, include_states: bool = True) -> Path:
    """Export ``t, U, phi`` (and optionally the states) as comma-separated text."""
    path = Path(path)
    cols = list(TRACE_COLUMNS) + (list(STATE_COLUMNS) if include_states else [])
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for k in range(len(truth.t)):
            row = [truth.t[k], truth.U[k], truth.phi[k]]
            if include_states:
                row.extend(truth.x[k])
            w.writerow([repr(float(v)) for v in row])
    return path


def ingest_trace(path, jitter_tol: float = 1e-9) -> Trace:
    """Read and validate a terminal-voltage trace written by :func:`write_trace`.

    Columns are located by header name. The step must be uniform to within
    ``jitter_tol`` seconds.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        sample = fh.read(4096)
        fh.seek(0)
        if not sample.strip():
            raise TraceError(f"{path}: empty file")
        try:
            dialect = csv.Sniffer().sniff(sample.splitlines()[0], delimiters=",;\t ")
        except csv.Error:
            dialect = csv.excel
        rows = list(csv.reader(fh, dialect))
    rows = [r for r in rows if any(c.strip() for c in r)]
    if not rows:
        raise TraceError(f"{path}: empty file")
    header = [h.strip() for h in rows[0]]
    missing = [c for c in TRACE_COLUMNS if c not in header]
    if missing:
        raise TraceError(f"missing column(s) {', '.join(missing)}", row=1)
    idx = [header.index(c) for c in TRACE_COLUMNS]
    has_states = all(c in header for c in STATE_COLUMNS)
    sidx = [header.index(c) for c in STATE_COLUMNS] if has_states else []
    body = rows[1:]
    if not body:
        raise TraceError(f"{path}: no data rows")

    data = np.empty((len(body), 3 + len(sidx)))
    for i, r in enumerate(body):
        rowno = i + 2
        try:
            vals = [float(r[j]) for j in idx + sidx]
        except (IndexError, ValueError):
            raise TraceError("missing or unparsable value", row=rowno) from None
        if not all(math.isfinite(v) for v in vals):
            raise TraceError("non-finite value", row=rowno)
        data[i] = vals
    t = data[:, 0]
    if len(t) > 1:
        steps = np.diff(t)
        if np.any(steps <= 0):
            bad = int(np.argmax(steps <= 0)) + 3
            raise TraceError("timestamps not strictly increasing", row=bad)
        dt = (t[-1] - t[0]) / (len(t) - 1)
        dev = np.abs(steps - dt)
        if np.any(dev > jitter_tol):
            bad = int(np.argmax(dev > jitter_tol)) + 3
            raise TraceError(f"non-uniform step (deviation {dev.max():.3e} s)", row=bad)
    else:
        dt = 0.0
    if np.any(data[:, 1] < 0):
        bad = int(np.argmax(data[:, 1] < 0)) + 2
        raise TraceError("negative voltage magnitude", row=bad)
    states = data[:, 3:7].copy() if has_states else None
    return Trace(t=t.copy(), U=data[:, 1].copy(), phi=data[:, 2].copy(), states=states, dt=float(dt))

