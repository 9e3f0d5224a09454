"""Scenario configuration, the end-to-end attack/estimation pipeline and batch runs.

A scenario is a JSON document whose keys carry their units (``duration_s``,
``X_dp_pu``, ``omega_b_rad_s``...). :func:`load_config` validates the whole
document before anything runs, and every run directory embeds the resolved
config so it can be replayed on its own.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from . import attacks as atk
from .dynamics import (ExciterParams, GeneratorParams, GovernorParams, SmibParams,
                       ControlInput, TruthTrajectory, simulate_truth, write_trace)
from .estimators import (FilterConfig, FilterTrajectory, IdentificationState, calibrate_dj,
                         run_filter, write_trajectory)
from .evaluation import (STATE_NAMES, IndexReport, TimingReport, index_report, metrics_document,
                         timing_profile, truth_at, write_json)
from .measurement import MeasurementStream, NoiseModel, sample_stream, write_stream

log = logging.getLogger(__name__)

PRESETS = ("ninebus", "sixtyeightbus")
ATTACK_KINDS = ("none", "fdi", "dos")
FILTERS = ("ckf", "rckf")


class ConfigError(ValueError):
    pass


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name and, if known, the sample."""

    def __init__(self, stage: str, cause: BaseException, sample: Optional[int] = None):
        where = f" at sample {sample}" if sample is not None else ""
        super().__init__(f"stage '{stage}' failed{where}: {cause}")
        self.stage = stage
        self.sample = sample
        self.cause = cause


# ---------------------------------------------------------------------------
# config schema: block -> (key in file, dataclass field)

def _unit_keys(units: dict) -> dict:
    return {f"{name}_{unit}": name for name, unit in units.items()}


MACHINE_KEYS = _unit_keys({"T_j": "s", "D": "pu", "T_d0p": "s", "T_q0p": "s", "X_d": "pu",
                           "X_dp": "pu", "X_q": "pu", "X_qp": "pu", "omega_b": "rad_s"})
GOVERNOR_KEYS = _unit_keys({"omega_ref": "pu", "r_inv": "pu", "T_max": "pu", "T_s": "s",
                            "T_c": "s", "T_3": "s", "T_4": "s", "T_5": "s"})
EXCITER_KEYS = _unit_keys({"K_a": "pu", "T_a": "s", "K_g": "pu", "V_b": "pu", "V_ref": "pu",
                           "E_f_min": "pu", "E_f_max": "pu"})
NOISE_KEYS = _unit_keys({"sigma_delta": "rad", "sigma_omega": "pu", "sigma_U": "frac",
                         "sigma_phi": "rad", "sigma_Pe": "pu", "sigma_U_R": "frac",
                         "sigma_phi_R": "rad", "sigma_delta_R": "rad", "sigma_omega_R": "pu"})
NULLABLE = {"V_ref", "sigma_delta_R", "sigma_omega_R"}


@dataclass(frozen=True)
class AttackSpec:
    kind: str = "none"
    window_s: tuple = (4.0, 12.0)
    sigma_c_pu: float = 0.0
    B_j_pu: float = 2.1
    relinearize: bool = True
    rho: float = 1.0
    d_samples: int = 1
    semantics: str = "zeroed"
    limit_consecutive: bool = False

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ConfigError(f"attack.kind must be one of {ATTACK_KINDS}, got {self.kind!r}")
        if len(self.window_s) != 2 or not self.window_s[0] < self.window_s[1]:
            raise ConfigError("attack.window_s must be [t_start, t_end] with t_start < t_end")

    def fdi(self, seed: int) -> atk.FdiConfig:
        return atk.FdiConfig(sigma_c=self.sigma_c_pu, t_start=self.window_s[0],
                             t_end=self.window_s[1], B_j=self.B_j_pu, seed=seed,
                             relinearize=self.relinearize)

    def dos(self, seed: int) -> atk.DosConfig:
        return atk.DosConfig(rho=self.rho, d=self.d_samples, t_start=self.window_s[0],
                             t_end=self.window_s[1], semantics=self.semantics, seed=seed,
                             limit_consecutive=self.limit_consecutive)


@dataclass(frozen=True)
class ScenarioConfig:
    name: str = "scenario"
    seed: int = 0
    duration_s: float = 20.0
    dt_s: float = 0.02
    sample_rate_hz: float = 50.0
    operating_point: tuple = (0.8, 0.2, 1.05)      # P0, Q0, U0 in pu
    machine: GeneratorParams = GeneratorParams(omega_b=2.0 * math.pi * 50.0)
    governor: GovernorParams = GovernorParams()
    exciter: ExciterParams = ExciterParams()
    network: SmibParams = SmibParams(X_e=0.5, t_on=1.2, t_off=1.5)
    noise: NoiseModel = NoiseModel()
    attack: AttackSpec = AttackSpec()
    filter: FilterConfig = FilterConfig()
    x0_sigma_pu: float = 0.01
    dj_source: str = "paired"
    dj_safety_factor: float = 1.25

    def __post_init__(self):
        if not (self.duration_s > 0 and self.dt_s > 0 and self.sample_rate_hz > 0):
            raise ConfigError("duration_s, dt_s and sample_rate_hz must be positive")
        stride = 1.0 / (self.sample_rate_hz * self.dt_s)
        if abs(stride - round(stride)) > 1e-9 or round(stride) < 1:
            raise ConfigError(f"sample_rate_hz={self.sample_rate_hz} is not a divisor of "
                              f"1/dt_s={1.0 / self.dt_s:g}")
        if self.x0_sigma_pu < 0:
            raise ConfigError("filter.x0_sigma_pu must be non-negative")
        if self.dj_source not in ("paired", "independent"):
            raise ConfigError("filter.dj_source must be 'paired' or 'independent'")
        if not self.dj_safety_factor >= 1.0:
            raise ConfigError("filter.dj_safety_factor must be at least 1")
        if self.seed < 0 or int(self.seed) != self.seed:
            raise ConfigError("seed must be a non-negative integer")
        if self.attack.kind != "none" and self.attack.window_s[0] >= self.duration_s:
            raise ConfigError("attack window starts after the end of the run")
        if self.attack.kind != "none" and self.attack.window_s[0] <= self.filter.warmup_s:
            raise ConfigError("attack window must start after the filter warm-up")

    def with_seed(self, seed: int) -> "ScenarioConfig":
        return replace(self, seed=int(seed))

    def to_dict(self) -> dict:
        def block(obj, keys):
            return {k: getattr(obj, a) for k, a in keys.items()}
        net = self.network
        return {
            "name": self.name,
            "seed": self.seed,
            "duration_s": self.duration_s,
            "dt_s": self.dt_s,
            "sample_rate_hz": self.sample_rate_hz,
            "operating_point": dict(zip(("P0_pu", "Q0_pu", "U0_pu"), self.operating_point)),
            "machine": block(self.machine, MACHINE_KEYS),
            "governor": block(self.governor, GOVERNOR_KEYS),
            "exciter": block(self.exciter, EXCITER_KEYS),
            "network": {"X_e_pu": net.X_e,
                        "fault_window_s": None if not net.has_fault else [net.t_on, net.t_off],
                        "fault_vinf_scale": net.fault_vinf_scale,
                        "fault_X_e_pu": net.fault_X_e},
            "noise": block(self.noise, NOISE_KEYS),
            "attack": {"kind": self.attack.kind, "window_s": list(self.attack.window_s),
                       "sigma_c_pu": self.attack.sigma_c_pu, "B_j_pu": self.attack.B_j_pu,
                       "relinearize": self.attack.relinearize, "rho": self.attack.rho,
                       "d_samples": self.attack.d_samples, "semantics": self.attack.semantics,
                       "limit_consecutive": self.attack.limit_consecutive},
            "filter": {"Q_diag_pu2": list(self.filter.q_diag), "P0_diag_pu2": list(self.filter.p0_diag),
                       "C": self.filter.C, "warmup_s": self.filter.warmup_s,
                       "terminal_hold": self.filter.terminal_hold, "x0_sigma_pu": self.x0_sigma_pu,
                       "dj_source": self.dj_source, "dj_safety_factor": self.dj_safety_factor},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


def _take(block: dict, where: str, allowed) -> dict:
    if not isinstance(block, dict):
        raise ConfigError(f"{where} must be an object")
    unknown = sorted(set(block) - set(allowed))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}; "
                          f"allowed: {', '.join(allowed)}")
    return block


def _number(v, where: str, nullable: bool = False):
    if v is None and nullable:
        return None
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{where} must be a finite number, got {v!r}")
    return float(v)


def _params(cls, raw: dict, keys: dict, where: str, base):
    raw = _take(raw, where, keys)
    kw = {keys[k]: _number(v, f"{where}.{k}", keys[k] in NULLABLE) for k, v in raw.items()}
    try:
        return replace(base, **kw)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"{where}: {e}") from None


def config_from_dict(doc: dict, base: Optional[ScenarioConfig] = None) -> ScenarioConfig:
    """Validate a config document; keys missing from it keep ``base``'s values."""
    base = base or ScenarioConfig()
    top = ("name", "seed", "duration_s", "dt_s", "sample_rate_hz", "operating_point", "machine",
           "governor", "exciter", "network", "noise", "attack", "filter", "preset")
    doc = _take(doc, "config", top)
    kw = {}
    if "name" in doc:
        kw["name"] = str(doc["name"])
    if "seed" in doc:
        s = doc["seed"]
        if isinstance(s, bool) or not isinstance(s, int) or s < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {s!r}")
        kw["seed"] = s
    for k in ("duration_s", "dt_s", "sample_rate_hz"):
        if k in doc:
            kw[k] = _number(doc[k], k)
    if "operating_point" in doc:
        op = _take(doc["operating_point"], "operating_point", ("P0_pu", "Q0_pu", "U0_pu"))
        cur = dict(zip(("P0_pu", "Q0_pu", "U0_pu"), base.operating_point))
        cur.update({k: _number(v, f"operating_point.{k}") for k, v in op.items()})
        kw["operating_point"] = (cur["P0_pu"], cur["Q0_pu"], cur["U0_pu"])
    if "machine" in doc:
        kw["machine"] = _params(GeneratorParams, doc["machine"], MACHINE_KEYS, "machine", base.machine)
    if "governor" in doc:
        kw["governor"] = _params(GovernorParams, doc["governor"], GOVERNOR_KEYS, "governor", base.governor)
    if "exciter" in doc:
        kw["exciter"] = _params(ExciterParams, doc["exciter"], EXCITER_KEYS, "exciter", base.exciter)
    if "noise" in doc:
        kw["noise"] = _params(NoiseModel, doc["noise"], NOISE_KEYS, "noise", base.noise)
    if "network" in doc:
        net = _take(doc["network"], "network", ("X_e_pu", "fault_window_s", "fault_vinf_scale",
                                                 "fault_X_e_pu"))
        nk = {}
        if "X_e_pu" in net:
            nk["X_e"] = _number(net["X_e_pu"], "network.X_e_pu")
        if "fault_window_s" in net:
            fw = net["fault_window_s"]
            if fw is None:
                nk["t_on"] = nk["t_off"] = None
            elif isinstance(fw, list) and len(fw) == 2:
                nk["t_on"] = _number(fw[0], "network.fault_window_s[0]")
                nk["t_off"] = _number(fw[1], "network.fault_window_s[1]")
            else:
                raise ConfigError("network.fault_window_s must be null or [t_on, t_off]")
        if "fault_vinf_scale" in net:
            nk["fault_vinf_scale"] = _number(net["fault_vinf_scale"], "network.fault_vinf_scale")
        if "fault_X_e_pu" in net:
            nk["fault_X_e"] = _number(net["fault_X_e_pu"], "network.fault_X_e_pu", nullable=True)
        try:
            kw["network"] = replace(base.network, **nk)
        except ValueError as e:
            raise ConfigError(f"network: {e}") from None
    if "attack" in doc:
        kw["attack"] = _attack_from(doc["attack"], base.attack)
    if "filter" in doc:
        fk = _take(doc["filter"], "filter", ("Q_diag_pu2", "P0_diag_pu2", "C", "warmup_s",
                                             "terminal_hold", "x0_sigma_pu", "dj_source",
                                             "dj_safety_factor"))
        fc = {}
        for key, attr in (("Q_diag_pu2", "q_diag"), ("P0_diag_pu2", "p0_diag")):
            if key in fk:
                v = fk[key]
                if not isinstance(v, list) or len(v) != 4:
                    raise ConfigError(f"filter.{key} must be a list of four numbers")
                fc[attr] = tuple(_number(x, f"filter.{key}") for x in v)
        for key in ("C", "warmup_s"):
            if key in fk:
                fc[key] = _number(fk[key], f"filter.{key}")
        if "terminal_hold" in fk:
            fc["terminal_hold"] = fk["terminal_hold"]
        try:
            kw["filter"] = replace(base.filter, **fc)
        except ValueError as e:
            raise ConfigError(f"filter: {e}") from None
        if "x0_sigma_pu" in fk:
            kw["x0_sigma_pu"] = _number(fk["x0_sigma_pu"], "filter.x0_sigma_pu")
        if "dj_source" in fk:
            kw["dj_source"] = fk["dj_source"]
        if "dj_safety_factor" in fk:
            kw["dj_safety_factor"] = _number(fk["dj_safety_factor"], "filter.dj_safety_factor")
    try:
        return replace(base, **kw)
    except (ValueError, TypeError) as e:
        raise ConfigError(str(e)) from None


def _attack_from(raw: dict, base: AttackSpec) -> AttackSpec:
    names = [f.name for f in fields(AttackSpec)]
    raw = _take(raw, "attack", names)
    kw = {}
    for k, v in raw.items():
        where = f"attack.{k}"
        if k == "kind" or k == "semantics":
            kw[k] = v
        elif k == "window_s":
            if not isinstance(v, list) or len(v) != 2:
                raise ConfigError("attack.window_s must be [t_start, t_end]")
            kw[k] = (_number(v[0], where), _number(v[1], where))
        elif k in ("relinearize", "limit_consecutive"):
            if not isinstance(v, bool):
                raise ConfigError(f"{where} must be true or false")
            kw[k] = v
        elif k == "d_samples":
            if isinstance(v, bool) or not isinstance(v, int):
                raise ConfigError(f"{where} must be an integer")
            kw[k] = v
        else:
            kw[k] = _number(v, where)
    spec = replace(base, **kw)
    # let the attack modules validate their own ranges up front
    try:
        if spec.kind == "fdi":
            spec.fdi(0)
        elif spec.kind == "dos":
            spec.dos(0)
    except ValueError as e:
        raise ConfigError(f"attack: {e}") from None
    return spec


def load_config(path) -> ScenarioConfig:
    """Read a JSON scenario; a ``"preset"`` key picks the base the file overrides."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    base = None
    if "preset" in doc:
        # the preset's own attack scenario, so the run name follows the attack kind
        atk_doc = doc.get("attack") if isinstance(doc.get("attack"), dict) else {}
        kind = atk_doc.get("kind", "none")
        level = atk_doc.get("sigma_c_pu") if kind == "fdi" else atk_doc.get("rho")
        if kind not in ATTACK_KINDS or (level is not None and not isinstance(level, (int, float))):
            kind, level = "none", None
        base = preset(doc["preset"], kind, level)
    return config_from_dict(doc, base)


def default_config() -> ScenarioConfig:
    """The shipped default scenario (nine-bus-like, no attack)."""
    text = resources.files("cyberdse").joinpath("data/default_config.json").read_text()
    return config_from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# presets

_PRESET_DEFS = {
    "ninebus": dict(duration_s=20.0, fault=(1.2, 1.5), B_j=2.1, window=(4.0, 12.0),
                    fdi_sigmas=(1e-4, 1e-3, 1e-2), dos_rhos=(1.0, 0.95, 0.85, 0.75)),
    "sixtyeightbus": dict(duration_s=10.0, fault=(1.0, 1.2), B_j=1.6, window=(4.0, 8.0),
                          fdi_sigmas=(0.01, 0.1, 1.0), dos_rhos=(1.0, 0.95, 0.85, 0.75)),
}


def preset(name: str, attack: str = "none", level: Optional[float] = None,
           seed: int = 0) -> ScenarioConfig:
    """Scenario preset; ``level`` is sigma_c for FDI or rho for DoS."""
    if name not in _PRESET_DEFS:
        raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")
    d = _PRESET_DEFS[name]
    if attack == "none":
        spec = AttackSpec(kind="none", window_s=d["window"], B_j_pu=d["B_j"])
        label = "clean"
    elif attack == "fdi":
        sigma = d["fdi_sigmas"][-1] if level is None else level
        spec = AttackSpec(kind="fdi", window_s=d["window"], B_j_pu=d["B_j"], sigma_c_pu=sigma)
        label = f"fdi-sigma{sigma:g}"
    elif attack == "dos":
        rho = 1.0 if level is None else level
        spec = AttackSpec(kind="dos", window_s=d["window"], B_j_pu=d["B_j"], rho=rho)
        label = f"dos-rho{rho:g}"
    else:
        raise ConfigError(f"attack must be one of {ATTACK_KINDS}, got {attack!r}")
    base = ScenarioConfig()
    return replace(base, name=f"{name}-{label}", seed=seed, duration_s=d["duration_s"],
                   network=replace(base.network, t_on=d["fault"][0], t_off=d["fault"][1]),
                   attack=spec)


def preset_family(name: str, seed: int = 0) -> list:
    """Every attack scenario defined for a preset: FDI levels, then DoS levels."""
    d = _PRESET_DEFS.get(name)
    if d is None:
        raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")
    return ([preset(name, "fdi", s, seed) for s in d["fdi_sigmas"]]
            + [preset(name, "dos", r, seed) for r in d["dos_rhos"]])


# ---------------------------------------------------------------------------
# seeds

SEED_STREAMS = ("noise", "fdi", "dos", "x0", "calibration")


def derive_seeds(master: int) -> dict:
    """Independent child seeds, so toggling the attack leaves the noise untouched."""
    children = np.random.SeedSequence(int(master)).spawn(len(SEED_STREAMS))
    return {name: int(c.generate_state(1, dtype=np.uint64)[0])
            for name, c in zip(SEED_STREAMS, children)}


# ---------------------------------------------------------------------------
# pipeline


@dataclass
class RunArtifact:
    config: ScenarioConfig
    truth: TruthTrajectory
    clean: MeasurementStream
    attacked: MeasurementStream
    truth_samples: np.ndarray                 # (N, 4) truth on the sample instants
    runs: dict                                # filter -> FilterTrajectory on the attacked stream
    calibration: dict                         # filter -> FilterTrajectory on the clean stream
    identification: dict                      # filter -> IdentificationState
    attack_log: Optional[atk.AttackLog] = None
    reports: dict = field(default_factory=dict)   # "attack"/"full" -> filter -> IndexReport
    timing: dict = field(default_factory=dict)    # filter -> TimingReport
    path: Optional[Path] = None

    def report(self, method: str, window: str = "attack") -> IndexReport:
        return self.reports[window][method]

    @property
    def attack_mask(self) -> np.ndarray:
        a = self.config.attack
        if a.kind == "none":
            return np.zeros(len(self.attacked), dtype=bool)
        return self.attacked.window(*a.window_s)

    def identification_summary(self) -> dict:
        t = self.attacked.t
        warm = t > self.config.filter.warmup_s
        inside = self.attack_mask
        a = self.config.attack
        before = warm & ~inside
        after = np.zeros(len(t), dtype=bool)
        if a.kind != "none":
            before &= t < a.window_s[0]
            after = ~inside & (t > a.window_s[1])
        out = {}
        for m, traj in self.runs.items():
            flags = traj.flags
            ident = self.identification[m]
            out[m] = {"D_J": ident.D_J, "safety_factor": ident.safety_factor,
                      "threshold": ident.threshold,
                      "flagged_in_window": int(flags[inside].sum()),
                      "window_samples": int(inside.sum()),
                      "flagged_before_window": int(flags[before].sum()),
                      "before_samples": int(before.sum()),
                      "flagged_after_window": int(flags[after].sum()),
                      "after_samples": int(after.sum())}
        return out

    def metrics(self) -> dict:
        doc = metrics_document(self.config.name, {w: list(r.values()) for w, r in self.reports.items()})
        doc[self.config.name]["identification"] = self.identification_summary()
        if self.attack_log is not None:
            doc[self.config.name]["attack_log"] = {"kind": self.attack_log.kind,
                                               "window_samples": len(self.attack_log),
                                               "attacked_samples": int(self.attack_log.attacked.sum()),
                                               "stealth_rejected": self.attack_log.skipped}
        return doc


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except (ConfigError, StageError):
        raise
    except Exception as e:  # noqa: BLE001 - re-raised with the stage attached
        raise StageError(name, e, getattr(e, "step", None)) from e


def _filters(stream, config: ScenarioConfig, x0, control0, methods) -> dict:
    return {m: run_filter(stream, m, config.machine, config.noise, x0, control0, config.filter,
                          config.governor, config.exciter) for m in methods}


def _feedback(stream: MeasurementStream, traj: FilterTrajectory, params) -> list:
    return [atk.Feedback(x_hat=traj.x_pred[k],
                         H=atk.jacobian_h(traj.x_pred[k], (stream.U[k], stream.phi[k]), params))
            for k in range(len(stream))]


def _calibrate(trajs: dict, t: np.ndarray, config: ScenarioConfig) -> dict:
    warm = t > config.filter.warmup_s
    return {m: calibrate_dj(tr.gaps[warm], config.dj_safety_factor) for m, tr in trajs.items()}


def run_pipeline(config: ScenarioConfig, out_dir=None, methods=FILTERS) -> RunArtifact:
    """Truth, measurements, attack, both filters, identification and metrics.

    The clean stream is filtered first: it calibrates the identification
    threshold and provides the forecast the FDI attacker keys on. Both
    filters then consume the identical attacked stream.
    """
    seeds = derive_seeds(config.seed)
    p = config.machine

    truth = _stage("construct", simulate_truth, p, config.network, config.duration_s, config.dt_s,
                   config.operating_point, config.governor, config.exciter)
    clean = _stage("measure", sample_stream, truth, config.noise, config.sample_rate_hz, p,
                   np.random.default_rng(seeds["noise"]))
    x_true = truth_at(truth, clean.t)
    x0 = x_true[0] + np.random.default_rng(seeds["x0"]).normal(0.0, config.x0_sigma_pu, 4)
    control0 = ControlInput(*truth.u[0])

    clean_runs = _stage("filter-clean", _filters, clean, config, x0, control0, methods)
    if config.dj_source == "paired":
        calib = clean_runs
    else:
        other = _stage("measure", sample_stream, truth, config.noise, config.sample_rate_hz, p,
                       np.random.default_rng(seeds["calibration"]))
        calib = _stage("filter-clean", _filters, other, config, x0, control0, methods)
    ident = _stage("calibrate", _calibrate, calib, clean.t, config)

    a = config.attack
    log_ = None
    if a.kind == "none":
        attacked, runs = clean, clean_runs
    else:
        if a.kind == "fdi":
            ref = clean_runs.get("ckf") or next(iter(clean_runs.values()))
            fb = _stage("model-attack", _feedback, clean, ref, p)
            attacked, log_ = _stage("inject", atk.apply_fdi, clean, a.fdi(seeds["fdi"]), fb,
                                    np.random.default_rng(seeds["fdi"]))
        else:
            attacked, log_ = _stage("inject", atk.apply_dos, clean, a.dos(seeds["dos"]),
                                    np.random.default_rng(seeds["dos"]))
        runs = _stage("filter", _filters, attacked, config, x0, control0, methods)

    for m, tr in runs.items():
        tr.flag_with(ident[m])
    art = RunArtifact(config=config, truth=truth, clean=clean, attacked=attacked,
                      truth_samples=x_true, runs=runs, calibration=calib,
                      identification=ident, attack_log=log_)
    windows = {"full": None}
    windows["attack"] = a.window_s
    art.reports = {w: {m: _stage("evaluate", index_report, tr, attacked.z, x_true, win)
                       for m, tr in runs.items()} for w, win in windows.items()}
    art.timing = {m: timing_profile(tr) for m, tr in runs.items()}
    if out_dir is not None:
        write_artifact(art, out_dir)
    return art


def write_artifact(art: RunArtifact, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(art.config.to_json())
    write_trace(out / "truth.csv", art.truth)
    write_stream(out / "stream_clean.csv", art.clean)
    write_stream(out / "stream_attacked.csv", art.attacked)
    for m, tr in art.runs.items():
        write_trajectory(out / f"trajectory_{m}.csv", tr)
    if art.attack_log is not None:
        atk.write_attack_log(out / "attack_log.csv", art.attack_log)
    write_json(out / "metrics.json", art.metrics())
    write_json(out / "timing.json", {m: t.to_dict() for m, t in art.timing.items()})
    with (out / "identification.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        ms = list(art.runs)
        w.writerow(["t", "in_attack_window"] + [c for m in ms for c in (f"gap_{m}", f"flag_{m}")])
        mask = art.attack_mask
        gaps = {m: art.runs[m].gaps for m in ms}
        for k in range(len(art.attacked)):
            row = [repr(float(art.attacked.t[k])), int(mask[k])]
            for m in ms:
                row += [repr(float(gaps[m][k])), int(art.runs[m].flags[k])]
            w.writerow(row)
    art.path = out
    return out


PLOT_COLUMNS = ("t", "truth", "measurement", "ckf", "rckf", "attack_window")


def emit_plots_data(art: RunArtifact, out_dir=None) -> list:
    """One CSV per state variable: truth, measurement, both estimates and the window marker."""
    out = Path(out_dir) if out_dir is not None else (art.path or Path("."))
    out.mkdir(parents=True, exist_ok=True)
    mask = art.attack_mask
    nan = float("nan")
    paths = []
    for j, var in enumerate(STATE_NAMES):
        path = out / f"plot_{var}.csv"
        with path.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(PLOT_COLUMNS)
            for k in range(len(art.attacked)):
                z = art.attacked.z[k, j] if j < 2 else nan
                est = [art.runs[m].x_post[k, j] if m in art.runs else nan for m in FILTERS]
                w.writerow([repr(float(v)) for v in (art.attacked.t[k], art.truth_samples[k, j], z, *est)]
                           + [int(mask[k])])
        paths.append(path)
    return paths


# ---------------------------------------------------------------------------
# batches


@dataclass
class BatchResult:
    summary: dict                     # scenario -> filter -> variable -> index -> {mean, std, n}
    artifacts: list
    failures: list                    # (scenario name, seed, message)

    def table(self) -> str:
        lines = []
        for scen, per_filter in self.summary.items():
            lines.append(f"== {scen}")
            lines.append(f"{'filter':<6} {'var':<6} {'tau1':>22} {'tau2':>22} {'tau3':>22}")
            for m, per_var in per_filter.items():
                for var, idx in per_var.items():
                    cells = []
                    for k in ("tau1", "tau2", "tau3"):
                        s = idx.get(k)
                        cells.append(f"{s['mean']:.4e}+-{s['std']:.1e}" if s else "-")
                    lines.append(f"{m:<6} {var:<6} " + " ".join(f"{c:>22}" for c in cells))
        for name, seed, msg in self.failures:
            lines.append(f"FAILED {name} seed={seed}: {msg}")
        return "\n".join(lines) + "\n"


def _aggregate(arts: list, window: str) -> dict:
    out = {}
    for m in FILTERS:
        reps = [a.reports[window][m] for a in arts if m in a.reports[window]]
        if not reps:
            continue
        out[m] = {}
        for var in STATE_NAMES:
            out[m][var] = {}
            for k in ("tau1", "tau2", "tau3"):
                vals = [r.indices[var][k] for r in reps if r.indices[var].get(k) is not None]
                if vals:
                    out[m][var][k] = {"mean": float(np.mean(vals)), "std": float(np.std(vals)),
                                      "n": len(vals)}
    return out


def run_batch(configs, seeds=None, out_dir=None, window: str = "attack",
              keep_artifacts: bool = False) -> BatchResult:
    """Run every config (times every seed, if given); failures are recorded, not raised."""
    configs = list(configs)
    if not configs:
        raise ValueError("batch needs at least one config")
    jobs = [(c.with_seed(s) if seeds is not None else c) for c in configs
            for s in (seeds if seeds is not None else [None])]
    groups: dict = {}
    failures = []
    kept = []
    for cfg in jobs:
        sub = None
        if out_dir is not None:
            sub = Path(out_dir) / f"{cfg.name}_seed{cfg.seed}"
        try:
            art = run_pipeline(cfg, sub)
        except Exception as e:  # noqa: BLE001 - recorded, batch continues
            log.error("run %s seed %s failed: %s", cfg.name, cfg.seed, e)
            failures.append((cfg.name, cfg.seed, str(e)))
            continue
        groups.setdefault(cfg.name, []).append(art)
        if keep_artifacts:
            kept.append(art)
    summary = {name: _aggregate(arts, window) for name, arts in groups.items()}
    res = BatchResult(summary=summary, artifacts=kept, failures=failures)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        write_json(Path(out_dir) / "summary.json",
                   {"window": window, "scenarios": summary,
                    "failures": [list(f) for f in failures]})
        (Path(out_dir) / "summary.txt").write_text(res.table())
    return res

