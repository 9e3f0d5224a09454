"""Command-line entry point: ``cyberdse <subcommand> [options]``.

Exit status is 0 on success, 1 for invalid input (config, files, arguments)
and 2 for numerical failures (divergence, broken covariance).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import attacks as atk
from . import harness as hn
from .dynamics import (ControlInput, DivergenceError, TraceError, simulate_truth,
                       steady_state_init, write_trace)
from .estimators import CovarianceError, FilterDivergence, run_filter, write_trajectory
from .evaluation import timing_profile
from .measurement import read_stream, sample_stream, write_stream

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC = 0, 1, 2
NUMERIC = (DivergenceError, FilterDivergence, CovarianceError, np.linalg.LinAlgError)


def _config(args) -> hn.ScenarioConfig:
    if args.config:
        cfg = hn.load_config(args.config)
    elif args.preset:
        cfg = hn.preset(args.preset, getattr(args, "attack", None) or "none",
                        getattr(args, "level", None))
    else:
        cfg = hn.default_config()
    if getattr(args, "attack", None) and args.config:
        raise hn.ConfigError("--attack only applies together with --preset")
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _methods(args):
    return hn.FILTERS if args.filter == "both" else (args.filter,)


def _out(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _filter_start(cfg: hn.ScenarioConfig, stream):
    """Initial guess for a stand-alone stream: the configured operating point, perturbed."""
    op = steady_state_init(cfg.operating_point, cfg.machine, cfg.governor, cfg.exciter,
                           X_e=cfg.network.X_e)
    seeds = hn.derive_seeds(cfg.seed)
    x0 = op.state + np.random.default_rng(seeds["x0"]).normal(0.0, cfg.x0_sigma_pu, 4)
    return x0, ControlInput(op.control.T_m, op.control.E_f, float(stream.U[0]), float(stream.phi[0]))


def cmd_simulate(args) -> int:
    cfg = _config(args)
    out = _out(args, "run-simulate")
    truth = simulate_truth(cfg.machine, cfg.network, cfg.duration_s, cfg.dt_s,
                           cfg.operating_point, cfg.governor, cfg.exciter)
    stream = sample_stream(truth, cfg.noise, cfg.sample_rate_hz, cfg.machine,
                           np.random.default_rng(hn.derive_seeds(cfg.seed)["noise"]))
    (out / "config.json").write_text(cfg.to_json())
    write_trace(out / "truth.csv", truth)
    write_stream(out / "stream.csv", stream)
    print(f"wrote {len(truth)} truth rows and {len(stream)} measurement rows to {out}")
    return EXIT_OK


def cmd_attack(args) -> int:
    cfg = _config(args)
    if cfg.attack.kind == "none":
        raise hn.ConfigError("the config has no attack block (attack.kind is 'none')")
    stream = read_stream(args.stream)
    out = _out(args, "run-attack")
    seeds = hn.derive_seeds(cfg.seed)
    if cfg.attack.kind == "fdi":
        x0, c0 = _filter_start(cfg, stream)
        ref = run_filter(stream, "ckf", cfg.machine, cfg.noise, x0, c0, cfg.filter,
                         cfg.governor, cfg.exciter)
        fb = hn._feedback(stream, ref, cfg.machine)
        attacked, log_ = atk.apply_fdi(stream, cfg.attack.fdi(seeds["fdi"]), fb,
                                       np.random.default_rng(seeds["fdi"]))
    else:
        attacked, log_ = atk.apply_dos(stream, cfg.attack.dos(seeds["dos"]),
                                       np.random.default_rng(seeds["dos"]))
    write_stream(out / "stream_attacked.csv", attacked)
    atk.write_attack_log(out / "attack_log.csv", log_)
    print(f"{cfg.attack.kind}: {int(log_.attacked.sum())} of {len(log_)} windowed samples altered, "
          f"{log_.skipped} rejected by the stealth check")
    return EXIT_OK


def cmd_estimate(args) -> int:
    cfg = _config(args)
    stream = read_stream(args.stream)
    out = _out(args, "run-estimate")
    x0, c0 = _filter_start(cfg, stream)
    for m in _methods(args):
        traj = run_filter(stream, m, cfg.machine, cfg.noise, x0, c0, cfg.filter,
                          cfg.governor, cfg.exciter)
        write_trajectory(out / f"trajectory_{m}.csv", traj)
        t = timing_profile(traj)
        print(f"{m}: {len(traj)} samples, mean step {t.step_mean_ms:.3f} ms")
    return EXIT_OK


def cmd_pipeline(args) -> int:
    cfg = _config(args)
    out = _out(args, f"run-{cfg.name}")
    art = hn.run_pipeline(cfg, out, methods=_methods(args))
    hn.emit_plots_data(art, out / "plots")
    print(_summary_lines(art.metrics()))
    print(f"artifact written to {out}")
    return EXIT_OK


def cmd_batch(args) -> int:
    if args.config:
        configs = [hn.load_config(args.config)]
    else:
        configs = hn.preset_family(args.preset or "ninebus")
    base = args.seed or 0
    seeds = list(range(base, base + args.seeds))
    out = _out(args, "run-batch")
    res = hn.run_batch(configs, seeds, out)
    print(res.table(), end="")
    return EXIT_OK if not res.failures else EXIT_NUMERIC


def _summary_lines(doc: dict) -> str:
    lines = []
    for scen, body in doc.items():
        lines.append(f"scenario {scen}")
        for window in ("attack", "full"):
            for m, rep in body.get(window, {}).items():
                cells = []
                for var in ("delta", "omega"):
                    idx = rep[var]
                    cells.append(" ".join(f"{k}({var})={idx[k]:.4e}" if idx.get(k) is not None
                                          else f"{k}({var})=n/a" for k in ("tau1", "tau2", "tau3")))
                lines.append(f"  [{window}] {m:<4} " + "  ".join(cells))
        for m, ident in body.get("identification", {}).items():
            lines.append(f"  [ident] {m:<4} D_J={ident['D_J']:.4e} flagged "
                         f"{ident['flagged_in_window']}/{ident['window_samples']} in window, "
                         f"{ident['flagged_before_window']}/{ident['before_samples']} before")
    return "\n".join(lines)


def cmd_report(args) -> int:
    run = Path(args.run)
    path = run / "metrics.json" if run.is_dir() else run
    if not path.exists():
        raise FileNotFoundError(f"no metrics at {path}")
    doc = json.loads(path.read_text())
    print(_summary_lines(doc))
    timing = path.parent / "timing.json"
    if timing.exists():
        for m, t in json.loads(timing.read_text()).items():
            print(f"  [timing] {m:<4} step mean {t['step_mean_ms']:.3f} ms "
                  f"(forecast {t['forecast_mean_ms']:.3f}, update {t['update_mean_ms']:.3f})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario JSON file")
    common.add_argument("--preset", choices=hn.PRESETS, help="built-in scenario")
    common.add_argument("--seed", type=int, help="master seed (non-negative)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--filter", choices=("ckf", "rckf", "both"), default="both")
    common.add_argument("-v", "--verbose", action="store_true")

    ap = argparse.ArgumentParser(prog="cyberdse", description="CKF and robust CKF generator state "
                                 "estimation under FDI and DoS attacks")
    sub = ap.add_subparsers(dest="command", required=True)

    def attack_opts(p):
        p.add_argument("--attack", choices=hn.ATTACK_KINDS, help="preset attack type")
        p.add_argument("--level", type=float, help="sigma_c (fdi) or rho (dos) for the preset")

    p = sub.add_parser("simulate", parents=[common], help="truth trajectory and clean PMU stream")
    p.set_defaults(func=cmd_simulate)
    p = sub.add_parser("attack", parents=[common], help="apply the configured attack to a stream")
    p.add_argument("--stream", required=True)
    attack_opts(p)
    p.set_defaults(func=cmd_attack)
    p = sub.add_parser("estimate", parents=[common], help="run the filters on a stream")
    p.add_argument("--stream", required=True)
    p.set_defaults(func=cmd_estimate)
    p = sub.add_parser("pipeline", parents=[common], help="full attack/estimation run")
    attack_opts(p)
    p.set_defaults(func=cmd_pipeline)
    p = sub.add_parser("batch", parents=[common], help="a preset's attack scenarios over seeds")
    p.add_argument("--seeds", type=int, default=5, help="number of consecutive seeds")
    p.set_defaults(func=cmd_batch)
    p = sub.add_parser("report", parents=[common], help="print a run's metrics")
    p.add_argument("run", help="run directory or metrics.json")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and args.seed < 0:
        print("error: --seed must be non-negative", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except hn.StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC if isinstance(e.cause, NUMERIC) else EXIT_INVALID
    except NUMERIC as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except (hn.ConfigError, TraceError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
