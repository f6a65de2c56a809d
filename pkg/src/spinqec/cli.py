"""Command-line front end.

Every subcommand reads the shipped defaults, an optional ``--config`` TOML
file and dotted overrides (``--noise.t2=80`` or ``--set noise.t2=80``),
then writes its artifacts into ``run.out`` under names derived from the
config hash, together with a manifest.

Exit codes: 0 success, 2 configuration error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .code import build_surface17_schedule, format_schedule, surface17_layout
from .config import ConfigError, RunConfig, load_config
from .decode import COLORS, build_tables, table_key
from .experiments import (
    fit_curve,
    fit_shuttle_model,
    get_library,
    library_hash,
    logical_memory,
    loglog_slope,
    NoDecayError,
    ramsey_one_qubit,
    ramsey_two_qubit,
    scaling_sweep,
    t2_from_s0,
    tj_from_s0,
    write_curve_csv,
    write_summary_json,
)
from .gates import (
    ONE_QUBIT_GATES,
    build_gate,
    build_pi_pulse_p,
    build_sym_corrected_p,
    gate_fidelity,
    ideal_gate,
    phase_distance,
)
from .noise import PsdSpec, bin_variances, default_exchange_fit, generate_pink_trace

log = logging.getLogger("spinqec")

SUBCOMMANDS = ("build-library", "build-tables", "gate-fidelity", "ramsey", "ramsey-2q",
               "memory", "sweep", "noise-check")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class CacheError(RuntimeError):
    """A required cache file is missing and rebuilding is disabled."""


# ----------------------------------------------------------------------------
# run bookkeeping


class _Run:
    """Output naming, atomic writes and the manifest of one invocation."""

    def __init__(self, command: str, cfg: RunConfig, argv):
        self.command = command
        self.cfg = cfg
        self.argv = list(argv)
        self.out = Path(cfg["run"]["out"])
        self.out.mkdir(parents=True, exist_ok=True)
        self.stem = f"{command}-{cfg.digest()}"
        self.outputs: list[str] = []
        self.start = time.time()

    def path(self, suffix: str) -> Path:
        p = self.out / f"{self.stem}{suffix}"
        self.outputs.append(p.name)
        return p

    def write_rows(self, suffix: str, rows: list[dict]) -> Path:
        p = self.path(suffix)
        tmp = p.with_name(p.name + ".tmp")
        with open(tmp, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=list(rows[0]))
            wr.writeheader()
            wr.writerows(rows)
        tmp.replace(p)
        return p

    def finish(self, summary: dict) -> Path:
        summary = dict(summary, command=self.command, config_hash=self.cfg.digest(),
                       seed=self.cfg["run"]["seed"])
        write_summary_json(self.path(".json"), summary)
        cfg_path = self.path(".config.toml")
        tmp = cfg_path.with_name(cfg_path.name + ".tmp")
        tmp.write_text(self.cfg.to_toml())
        tmp.replace(cfg_path)
        manifest = {
            "command": self.command,
            "argv": self.argv,
            "config_hash": self.cfg.digest(),
            "seed": self.cfg["run"]["seed"],
            "version": __version__,
            "wall_time_s": round(time.time() - self.start, 3),
            "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(self.start)),
            "outputs": self.outputs + [f"{self.stem}.manifest.json"],
            "config": self.cfg.data,
        }
        mpath = self.out / f"{self.stem}.manifest.json"
        write_summary_json(mpath, manifest)
        return mpath


def _cache_dir(cfg: RunConfig) -> Path:
    return Path(cfg["run"]["cache"])


def _library(cfg: RunConfig, policy: str):
    mem = cfg.memory()
    hw, grids = mem.hw, mem.resolved_grids()
    key = library_hash(hw, grids, default_exchange_fit())
    path = _cache_dir(cfg) / f"library-{key}.npz"
    if policy == "abort" and not path.exists():
        raise CacheError(f"no cached library with hash {key} in {path.parent}")
    return get_library(hw, grids, _cache_dir(cfg)), path


def _tables(cfg: RunConfig, policy: str):
    layout = surface17_layout(cfg["code"]["variant"])
    circuit = build_surface17_schedule(layout.variant, cfg["code"]["p_gate"], cfg.hardware())
    key = table_key(layout, circuit)
    paths = [_cache_dir(cfg) / f"table-{key}-{c}.npz" for c in COLORS]
    if policy == "abort" and not all(p.exists() for p in paths):
        raise CacheError(f"no cached decoder tables with key {key} in {paths[0].parent}")
    try:
        tables = build_tables(layout, circuit, _cache_dir(cfg))
    except ValueError:
        if policy == "abort":
            raise CacheError(f"cached decoder tables do not match key {key}") from None
        for p in paths:
            p.unlink(missing_ok=True)
        tables = build_tables(layout, circuit, _cache_dir(cfg))
    return tables, key, circuit


def _fit_dict(fit):
    return fit.as_dict() if fit is not None else None


def _curve_rows(curve, extra=None):
    rows = []
    for t, f, s in zip(curve.times, curve.mean_fidelity, curve.stderr):
        row = {"time_us": f"{t:.6g}", "mean_fidelity": f"{f:.10f}", "stderr": f"{s:.3e}",
               "trials": curve.n_trials}
        rows.append(dict(row, **(extra or {})))
    return rows


def _both_fits(curve):
    if len(curve.times) < 3:
        return {"gaussian": None, "exponential": None}
    out = {}
    for model in ("gaussian", "exponential"):
        try:
            out[model] = fit_curve(curve, model).as_dict()
        except NoDecayError:
            out[model] = None
    return out


# ----------------------------------------------------------------------------
# subcommands


def cmd_build_library(cfg: RunConfig, args, run: _Run) -> dict:
    lib, path = _library(cfg, args.cache_policy)
    n1 = lib.grids.one_qubit_points
    print(f"library {lib.config_hash()}: {n1} detuning nodes per one-qubit gate, "
          f"{lib.two_qubit_nodes} two-qubit nodes")
    print(f"cache file: {path}")
    return {"library_hash": lib.config_hash(), "cache_file": str(path),
            "one_qubit_nodes_per_gate": n1, "one_qubit_gates": list(lib.one_qubit),
            "two_qubit_nodes": lib.two_qubit_nodes, "asymmetry_phase_rad": lib.eps,
            "grids": lib.grids.__dict__}


def cmd_build_tables(cfg: RunConfig, args, run: _Run) -> dict:
    tables, key, circuit = _tables(cfg, args.cache_policy)
    info = {}
    for c, t in tables.items():
        info[c] = {"mechanisms": t.n_mechanisms, "max_weight": int(t.weight.max()),
                   "mean_weight": float(t.weight.mean())}
        print(f"colour {c}: {t.n_mechanisms} window fault codes, "
              f"max weight {int(t.weight.max())}")
    if args.show_schedule:
        print(format_schedule(circuit))
    return {"table_key": key, "tables": info, "t_qec_us": circuit.duration,
            "gate_count": circuit.gate_count}


def cmd_gate_fidelity(cfg: RunConfig, args, run: _Run) -> dict:
    hw = cfg.hardware()
    dw, dve = args.delta_omega, args.delta_ve
    rows = []
    for g in ONE_QUBIT_GATES:
        u = build_gate(g, dw, hw)
        rows.append({"gate": g, "duration_us": hw.duration(g),
                     "fidelity": gate_fidelity(ideal_gate(g), u),
                     "frobenius_distance": phase_distance(ideal_gate(g), u)})
    for name, fn in (("P_sym", build_sym_corrected_p), ("P_pi", build_pi_pulse_p)):
        u = fn(dw, dw, dve, hw)
        rows.append({"gate": name, "duration_us": hw.duration(name),
                     "fidelity": gate_fidelity(ideal_gate("P"), u),
                     "frobenius_distance": phase_distance(ideal_gate("P"), u)})
    for r in rows:
        print(f"{r['gate']:6s} F = {r['fidelity']:.9f}  d = {r['frobenius_distance']:.2e}")
    run.write_rows(".csv", rows)
    return {"delta_omega_mhz": dw, "delta_ve_mv": dve,
            "min_fidelity": min(r["fidelity"] for r in rows)}


def _delays(cfg: RunConfig, scale: float, ts: float) -> np.ndarray:
    n = cfg["ramsey"]["points"]
    t_end = cfg["ramsey"]["t_max"] * scale
    d = np.rint(np.linspace(t_end / n, t_end, n) / ts) * ts
    d = np.unique(d[d > 0])
    if len(d) < 3:
        raise ConfigError("ramsey: fewer than 3 distinct delays at this sampling step")
    return d


def cmd_ramsey(cfg: RunConfig, args, run: _Run) -> dict:
    n = cfg["noise"]
    s0 = cfg.s0_omega()
    pred = t2_from_s0(s0, n["tm"]) if s0 > 0 else math.inf
    delays = _delays(cfg, pred if s0 > 0 else 100.0, n["ts"])
    curve, fit = ramsey_one_qubit(s0, n["tm"], n["ts"], delays, cfg["run"]["trials"],
                                  cfg["run"]["seed"])
    run.write_rows(".csv", _curve_rows(curve))
    msg = f"T2* = {fit.characteristic_time:.4g} us" if fit else "no decay"
    print(f"{msg} (formula {pred:.4g} us)")
    return {"s0_omega": s0, "tm_us": n["tm"], "predicted_t2_us": pred, "fit": _fit_dict(fit),
            "fits": _both_fits(curve)}


def cmd_ramsey_2q(cfg: RunConfig, args, run: _Run) -> dict:
    n = cfg["noise"]
    hw = cfg.hardware()
    s0 = cfg.s0_ve()
    pred = tj_from_s0(s0, n["tm"]) if s0 > 0 else math.inf
    delays = _delays(cfg, pred if s0 > 0 else 10.0, n["ts"])
    curve, fit = ramsey_two_qubit(s0, hw.j0, n["tm"], n["ts"], delays, cfg["run"]["trials"],
                                  cfg["run"]["seed"], delta_e=hw.delta_e_rz)
    run.write_rows(".csv", _curve_rows(curve))
    msg = f"T_J* = {fit.characteristic_time:.4g} us" if fit else "no decay"
    print(f"{msg} (formula {pred:.4g} us)")
    return {"s0_ve": s0, "tm_us": n["tm"], "predicted_tj_us": pred, "fit": _fit_dict(fit)}


def cmd_memory(cfg: RunConfig, args, run: _Run) -> dict:
    mem = cfg.memory()
    lib, _ = _library(cfg, args.cache_policy)
    tables, _, _ = _tables(cfg, args.cache_policy)
    curve, fit, runner = logical_memory(mem, cfg["run"]["seed"], lib, tables,
                                        _cache_dir(cfg), cfg.workers())
    run.write_rows(".csv", _curve_rows(curve))
    msg = f"T2L = {fit.characteristic_time:.4g} us" if fit else "no decay"
    print(f"{msg}; final fidelity {curve.mean_fidelity[-1]:.6f} after {mem.rounds} rounds "
          f"(t_QEC = {runner.t_qec:.4g} us)")
    return {"t_qec_us": runner.t_qec, "rounds": mem.rounds, "trials": mem.trials,
            "s0_omega": mem.s0_omega, "s0_ve": mem.s0_ve, "fit": _fit_dict(fit),
            "fits": _both_fits(curve), "clipped_deviations": lib.clip_count}


def cmd_sweep(cfg: RunConfig, args, run: _Run) -> dict:
    n, c, s, sw = cfg["noise"], cfg["code"], cfg["sparse"], cfg["sweep"]
    fixed = {"t2": n["t2"] or None, "tj": n["tj"] or None, "ratio": sw["ratio"],
             "tm": n["tm"], "ts": n["ts"], "variant": c["variant"], "p_gate": c["p_gate"],
             "mode": n["mode"], "initial": c["initial"], "gamma": s["gamma"], "tau": s["tau"]}
    rounds = sw["rounds"] if len(sw["rounds"]) > 1 else sw["rounds"][0]
    rows = scaling_sweep(sw["axis"], sw["grid"], fixed, cfg["run"]["trials"],
                         cfg["run"]["seed"], rounds, _cache_dir(cfg), cfg.workers())
    ok = [r for r in rows if math.isfinite(r["t2l"]) and r["x"] > 0]
    slope = loglog_slope([r["x"] for r in ok], [r["t2l"] for r in ok]) if len(ok) >= 2 else None
    summary = {"axis": sw["axis"], "loglog_slope": slope}
    if sw["axis"] == "shuttle" and fixed["t2"]:
        fin = [r for r in rows if math.isfinite(r["t2l"])]
        try:
            a, b = fit_shuttle_model([r["t_shut"] for r in fin], [r["t2l"] for r in fin],
                                     fixed["t2"], fin[0]["t_qec"])
            summary.update(shuttle_fit_a=a, shuttle_fit_b=b)
        except (ValueError, IndexError) as exc:
            log.warning("shuttle model fit skipped: %s", exc)
    for r in rows:
        r["loglog_slope"] = "" if slope is None else f"{slope:.4f}"
        print(f"{sw['axis']} = {r['x']:g}: T2L = {r['t2l']:.4g} us "
              f"[{r['ci_low']:.4g}, {r['ci_high']:.4g}]")
    if slope is not None:
        print(f"log-log slope: {slope:.3f}")
    run.write_rows(".csv", rows)
    summary["rows"] = rows
    return summary


def cmd_noise_check(cfg: RunConfig, args, run: _Run) -> dict:
    from scipy.signal import welch

    n = cfg["noise"]
    s0 = cfg.s0_omega() if args.source == "omega" else cfg.s0_ve()
    if s0 <= 0:
        raise ConfigError(f"noise: the {args.source} noise intensity is zero")
    spec = PsdSpec(s0)
    tr = generate_pink_trace(spec, n["tm"], n["ts"], cfg["run"]["seed"])
    x = tr.samples
    pred_var = float(bin_variances(spec, len(x), n["ts"]).sum())
    nper = min(1 << 16, len(x))
    f, p = welch(x, fs=1.0 / n["ts"], nperseg=nper, return_onesided=True)
    band = (f > 20.0 / (nper * n["ts"])) & (f < 0.1 / n["ts"])
    slope = float(np.polyfit(np.log(f[band]), np.log(p[band]), 1)[0])
    # one-sided Welch density against 2 s0 / f
    level = float(np.median(p[band] * f[band] / (2 * s0)))
    print(f"samples {len(x)}, variance {x.var():.4g} (expected {pred_var:.4g}), "
          f"PSD slope {slope:.3f}, level / s0 = {level:.3f}")
    rows = [{"frequency_mhz": f"{a:.6g}", "psd": f"{b:.6g}"} for a, b in zip(f[1:], p[1:])]
    run.write_rows(".csv", rows)
    return {"source": args.source, "s0": s0, "samples": len(x), "variance": float(x.var()),
            "expected_variance": pred_var, "psd_loglog_slope": slope, "psd_level_ratio": level}


_COMMANDS = {
    "build-library": cmd_build_library,
    "build-tables": cmd_build_tables,
    "gate-fidelity": cmd_gate_fidelity,
    "ramsey": cmd_ramsey,
    "ramsey-2q": cmd_ramsey_2q,
    "memory": cmd_memory,
    "sweep": cmd_sweep,
    "noise-check": cmd_noise_check,
}


# ----------------------------------------------------------------------------
# argument handling


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML file layered over the shipped defaults")
    common.add_argument("--seed", type=int, help="master seed (run.seed)")
    common.add_argument("--trials", type=int, help="trial count (run.trials)")
    common.add_argument("--rounds", type=int,
                        help="syndrome rounds (code.rounds; sweep.rounds for sweep)")
    common.add_argument("--workers", type=int, help="worker processes, 0 = all cores")
    common.add_argument("--out", help="output directory (run.out)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="config override; also accepted as --SECTION.KEY=VALUE")
    common.add_argument("--cache-policy", choices=("rebuild", "abort"), default="rebuild",
                        help="what to do when a cache file is missing or stale")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="spinqec", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("build-library", parents=[common], help="precompute the noisy gate library")
    bt = sub.add_parser("build-tables", parents=[common], help="build the decoder lookup tables")
    bt.add_argument("--show-schedule", action="store_true")
    gf = sub.add_parser("gate-fidelity", parents=[common],
                        help="native gates at a fixed deviation against their ideal forms")
    gf.add_argument("--delta-omega", type=float, default=0.0, help="Larmor deviation (MHz)")
    gf.add_argument("--delta-ve", type=float, default=0.0, help="exchange-gate deviation (mV)")
    sub.add_parser("ramsey", parents=[common], help="one-qubit Ramsey experiment")
    sub.add_parser("ramsey-2q", parents=[common], help="two-qubit exchange Ramsey experiment")
    sub.add_parser("memory", parents=[common], help="logical memory experiment")
    sw = sub.add_parser("sweep", parents=[common], help="logical memory time over a grid")
    sw.add_argument("--axis", choices=("t2", "tj", "joint", "shuttle"))
    sw.add_argument("--grid", type=float, nargs="+")
    sw.add_argument("--no-exchange-noise", action="store_true")
    nc = sub.add_parser("noise-check", parents=[common], help="spectrum of one noise trace")
    nc.add_argument("--source", choices=("omega", "ve"), default="omega")
    return p


def _split_overrides(extra: list[str]) -> list[str]:
    """Turn leftover ``--sec.key=value`` / ``--sec.key value`` tokens into overrides."""
    out = []
    i = 0
    while i < len(extra):
        tok = extra[i]
        if not tok.startswith("--") or "." not in tok.split("=", 1)[0]:
            raise ConfigError(f"unrecognised argument {tok!r}")
        body = tok[2:]
        if "=" not in body:
            if i + 1 >= len(extra):
                raise ConfigError(f"override {tok!r} has no value")
            body = f"{body}={extra[i + 1]}"
            i += 1
        out.append(body)
        i += 1
    return out


def _overrides(args, extra) -> list[str]:
    ov = list(args.set) + _split_overrides(extra)
    flags = {"seed": "run.seed", "trials": "run.trials", "workers": "run.workers"}
    for name, key in flags.items():
        if getattr(args, name) is not None:
            ov.append(f"{key}={getattr(args, name)}")
    if args.out is not None:
        ov.append(f"run.out={json.dumps(args.out)}")
    if args.rounds is not None:
        ov.append(f"sweep.rounds=[{args.rounds}]" if args.command == "sweep"
                  else f"code.rounds={args.rounds}")
    if args.command == "sweep":
        if args.axis:
            ov.append(f'sweep.axis="{args.axis}"')
        if args.grid:
            ov.append("sweep.grid=[" + ", ".join(repr(float(g)) for g in args.grid) + "]")
        if args.no_exchange_noise:
            ov.append("noise.tj=0")
    return ov


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config, _overrides(args, extra))
        if args.command == "sweep" and args.no_exchange_noise:
            cfg["noise"].pop("s0_ve", None)
        run = _Run(args.command, cfg, argv)
        summary = _COMMANDS[args.command](cfg, args, run)
        manifest = run.finish(summary)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (CacheError, ArithmeticError, RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"manifest: {manifest}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
