"""Command-line front end: model build, gain sweep, safe simulation and
topology reporting, with a reproducibility manifest per run.

Exit codes: 0 success, 1 usage or validation error, 2 numerical failure,
3 safety violation during simulate.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .design import (SparsityOptions, gain_to_dict, gamma_sweep, load_gain,
                     save_gain)
from .errors import (CbfInfeasibleError, ConfigError, ConvergenceError,
                     NumericalBlowupError, UnstableSystemError)
from .kernels import DesignWeights, check_stability
from .network import TWO_PI, assemble_state_space, load_network
from .safety import SafetyEnvelope, cross_layer_topology
from .sim import (DisturbanceModel, SimConfig, run_closed_loop,
                  safety_metrics, sample_initial_state, write_trace_csv)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2
EXIT_SAFETY = 3

_NUMERICAL_ERRORS = (ConvergenceError, UnstableSystemError,
                     NumericalBlowupError, CbfInfeasibleError,
                     np.linalg.LinAlgError)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _config_options(config_path: str) -> dict:
    """Optional `options:` section of the config file (CLI flags win)."""
    with open(config_path, "r", encoding="utf-8") as fh:
        doc = yaml.safe_load(fh.read())
    opts = doc.get("options", {}) if isinstance(doc, dict) else {}
    if opts and not isinstance(opts, dict):
        raise ConfigError("config: 'options' section must be a mapping")
    return opts or {}


def _resolve(args: argparse.Namespace, config_opts: dict, defaults: dict) -> dict:
    """Flag value if given, else config option, else default."""
    out = {}
    for key, default in defaults.items():
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            out[key] = flag_val
        elif key in config_opts:
            out[key] = type(default)(config_opts[key]) if default is not None else config_opts[key]
        else:
            out[key] = default
    return out


def write_manifest(out_dir: Path, command: str, config_path: str | None,
                   options: dict, outputs: list[Path]) -> Path:
    """Reproducibility record: inputs, resolved options and output hashes.

    Contains no timestamps, so re-running the same command reproduces the
    manifest itself byte for byte.
    """
    doc = {
        "tool": "safegrid",
        "version": __version__,
        "command": command,
        "config_path": str(config_path) if config_path else None,
        "config_sha256": _sha256(Path(config_path)) if config_path else None,
        "options": options,
        "outputs": [{"path": p.name, "sha256": _sha256(p)} for p in outputs],
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")
    return path


def _emit(args, text_lines: list[str], payload: dict) -> None:
    if getattr(args, "json", False):
        print(json.dumps(payload, sort_keys=True))
    else:
        for line in text_lines:
            print(line)


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_build(args) -> int:
    spec = load_network(args.config)
    model = assemble_state_space(spec)
    report = check_stability(model.A)
    l_eigs = sorted(float(v) for v in np.linalg.eigvalsh(model.L))
    summary = {
        "n": model.n,
        "states": 2 * model.n,
        "lines": len(spec.lines),
        "desired_frequency_hz": spec.desired_frequency_hz,
        "laplacian_eigenvalues": l_eigs,
        "open_loop_abscissa": report.spectral_abscissa,
        "open_loop_hurwitz": report.is_hurwitz,
    }
    out = _out_dir(args)
    model_doc = {
        "n": model.n,
        "a": model.A.tolist(),
        "b1": model.B1.tolist(),
        "b2": model.B2.tolist(),
        "m": model.m_diag.tolist(),
        "d": model.d_diag.tolist(),
        "laplacian": model.L.tolist(),
        "v": model.v_diag.tolist(),
    }
    model_path = out / "model.json"
    model_path.write_text(json.dumps(model_doc, sort_keys=True) + "\n",
                          encoding="utf-8")
    write_manifest(out, "build", args.config, {"out_dir": str(out)}, [model_path])
    _emit(args, [
        f"n={model.n}, states={2 * model.n}, lines={len(spec.lines)}",
        "L spectrum: " + ", ".join(f"{v:.6g}" for v in l_eigs),
        f"open-loop abscissa {report.spectral_abscissa:.6g} "
        f"(hurwitz={report.is_hurwitz})",
        f"model written to {model_path}",
    ], summary)
    return EXIT_OK


def _gamma_grid(gmin: float, gmax: float, count: int) -> list[float]:
    if count < 1:
        raise ConfigError("sweep: gamma count must be >= 1")
    if count == 1:
        return [gmin]
    if gmin <= 0.0 or gmax <= 0.0:
        raise ConfigError("sweep: log spacing needs positive gamma bounds "
                          "(a single zero value is allowed with count=1)")
    if gmax < gmin:
        raise ConfigError("sweep: gamma-max below gamma-min")
    return list(np.geomspace(gmin, gmax, count))


def cmd_sweep(args) -> int:
    spec = load_network(args.config)
    model = assemble_state_space(spec)
    weights = DesignWeights.identity(model)
    config_opts = _config_options(args.config)
    resolved = _resolve(args, config_opts, {
        "gamma_min": 1e-4, "gamma_max": 1e-1, "gamma_count": 50, "seed": 0,
    })
    admm_cfg = config_opts.get("admm", {})
    opts = SparsityOptions(**{k: v for k, v in admm_cfg.items()}) \
        if admm_cfg else SparsityOptions()

    gammas = _gamma_grid(resolved["gamma_min"], resolved["gamma_max"],
                         resolved["gamma_count"])
    entries = gamma_sweep(model, weights, gammas, opts)

    out = _out_dir(args)
    outputs = []
    csv_lines = ["gamma,card,cost,abscissa,status"]
    pattern_lines = []
    for idx, entry in enumerate(entries):
        if entry.failed:
            csv_lines.append(f"{entry.gamma!r},,,,failed")
            continue
        res = entry.result
        gain_path = out / f"gain_{idx:03d}.json"
        save_gain(res, gain_path)
        outputs.append(gain_path)
        csv_lines.append(f"{entry.gamma!r},{res.card},{res.cost!r},"
                         f"{res.stability.spectral_abscissa!r},ok")
        pattern_lines.append(f"gamma={entry.gamma!r} card={res.card}")
        for row in res.pattern:
            pattern_lines.append("".join("1" if v else "0" for v in row))
        pattern_lines.append("")
    csv_path = out / "sweep.csv"
    csv_path.write_text("\n".join(csv_lines) + "\n", encoding="utf-8")
    patterns_path = out / "patterns.txt"
    patterns_path.write_text("\n".join(pattern_lines) + "\n", encoding="utf-8")
    outputs += [csv_path, patterns_path]
    write_manifest(out, "sweep", args.config,
                   {**resolved, "out_dir": str(out)}, outputs)

    n_failed = sum(1 for e in entries if e.failed)
    cards = [e.result.card for e in entries if not e.failed]
    payload = {"points": len(entries), "failed": n_failed, "cards": cards,
               "out_dir": str(out)}
    _emit(args, [
        f"swept {len(entries)} gamma values ({n_failed} failed)",
        f"card range: {min(cards)}..{max(cards)}" if cards else "no successful points",
        f"table written to {csv_path}",
    ], payload)
    return EXIT_OK if n_failed == 0 else EXIT_NUMERICAL


def cmd_simulate(args) -> int:
    spec = load_network(args.config)
    model = assemble_state_space(spec)
    gain = load_gain(args.gain)
    config_opts = _config_options(args.config)
    resolved = _resolve(args, config_opts, {
        "dt": 1e-3, "horizon": 10.0, "plant": "linear",
        "disturbance": "adversarial", "ds": 0.5, "eta1": 5.0, "eta2": 5.0,
        "omega_band_hz": 0.5, "seed": 0, "violation_slack_hz": 1e-3,
    })

    env = SafetyEnvelope.from_hz(resolved["omega_band_hz"],
                                 resolved["eta1"], resolved["eta2"],
                                 resolved["ds"])
    cfg = SimConfig(dt=resolved["dt"], horizon=resolved["horizon"],
                    plant=resolved["plant"], envelope=env)
    dm = DisturbanceModel(kind=resolved["disturbance"], d_s=resolved["ds"],
                          seed=resolved["seed"])
    if args.x0 is not None:
        x0 = np.array([float(v) for v in args.x0.split(",")])
    else:
        x0 = sample_initial_state(model.n, resolved["seed"],
                                  cfg.theta_range, cfg.omega_range_hz)

    plant = spec if resolved["plant"] == "nonlinear" else model
    trace = run_closed_loop(plant, gain.K, cfg, dm, x0)
    metrics = safety_metrics(trace, env)

    out = _out_dir(args)
    trace_path = out / "trace.csv"
    write_trace_csv(trace, trace_path)
    metrics_doc = {**metrics.to_dict(), "complete": trace.complete,
                   "samples": len(trace.t)}
    metrics_path = out / "metrics.json"
    metrics_path.write_text(json.dumps(metrics_doc, sort_keys=True, indent=2)
                            + "\n", encoding="utf-8")
    write_manifest(out, "simulate", args.config,
                   {**resolved, "gain": str(args.gain), "x0": args.x0,
                    "out_dir": str(out)},
                   [trace_path, metrics_path])

    slack = resolved["violation_slack_hz"] * TWO_PI
    violated = metrics.max_exceedance > slack
    _emit(args, [
        f"simulated {len(trace.t)} samples ({'complete' if trace.complete else 'aborted'})",
        f"max |omega_hat| {metrics.max_abs_omega / TWO_PI:.6g} Hz, "
        f"exceedance {metrics.max_exceedance / TWO_PI:.6g} Hz",
        f"filter active at {metrics.filter_active_samples} node-samples, "
        f"{metrics.infeasible_samples} infeasible fallbacks",
        f"trace written to {trace_path}",
    ], {**metrics_doc, "violated": violated, "out_dir": str(out)})
    if not trace.complete:
        return EXIT_NUMERICAL
    return EXIT_SAFETY if violated else EXIT_OK


def cmd_topology(args) -> int:
    spec = load_network(args.config)
    gain = load_gain(args.gain)
    report = cross_layer_topology(gain.pattern, spec)
    out = _out_dir(args)
    path = out / "topology.json"
    doc = report.to_dict()
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n",
                    encoding="utf-8")
    write_manifest(out, "topology", args.config, {"gain": str(args.gain),
                                                  "out_dir": str(out)}, [path])
    lines = [f"links: gain={report.gain_links} power={report.power_links} "
             f"union={report.union_links}"]
    for node in report.nodes:
        lines.append(f"node {node.node} needs: {list(node.needs)}")
    _emit(args, lines + [f"report written to {path}"], doc)
    return EXIT_OK


def cmd_replay(args) -> int:
    """Re-execute the command recorded in a manifest with its resolved
    options; outputs are reproduced byte for byte."""
    with open(args.manifest, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    options = doc["options"]
    out_dir = args.out_dir or options.get("out_dir")
    argv = [doc["command"]]
    if doc.get("config_path"):
        argv += ["--config", doc["config_path"]]
    argv += ["--out-dir", str(out_dir)]
    skip = {"out_dir"}
    for key, val in options.items():
        if key in skip or val is None:
            continue
        argv += [f"--{key.replace('_', '-')}", str(val)]
    return main(argv)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="safegrid",
        description="Sparse gain design and safe frequency regulation for "
                    "inverter-intensive microgrids.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="network configuration file (YAML)")
        p.add_argument("--out-dir", default="out", help="output directory")
        p.add_argument("--json", action="store_true",
                       help="machine-readable summary on stdout")

    p_build = sub.add_parser("build", help="parse a config and assemble the model")
    common(p_build)
    p_build.set_defaults(func=cmd_build)

    p_sweep = sub.add_parser("sweep", help="sparsity sweep over the penalty weight")
    common(p_sweep)
    p_sweep.add_argument("--gamma-min", type=float, default=None)
    p_sweep.add_argument("--gamma-max", type=float, default=None)
    p_sweep.add_argument("--gamma-count", type=int, default=None)
    p_sweep.add_argument("--seed", type=int, default=None)
    p_sweep.set_defaults(func=cmd_sweep)

    p_sim = sub.add_parser("simulate", help="closed-loop run with the safety filter")
    common(p_sim)
    p_sim.add_argument("--gain", required=True, help="gain file from a sweep")
    p_sim.add_argument("--dt", type=float, default=None, help="sample period (s)")
    p_sim.add_argument("--horizon", type=float, default=None, help="run length (s)")
    p_sim.add_argument("--plant", choices=("linear", "nonlinear"), default=None)
    p_sim.add_argument("--disturbance", default=None,
                       help="zero|constant|step|sinusoid|uniform-random|adversarial")
    p_sim.add_argument("--ds", type=float, default=None,
                       help="disturbance bound (p.u.)")
    p_sim.add_argument("--eta1", type=float, default=None)
    p_sim.add_argument("--eta2", type=float, default=None)
    p_sim.add_argument("--omega-band-hz", type=float, default=None,
                       help="safety band half-width (Hz)")
    p_sim.add_argument("--seed", type=int, default=None)
    p_sim.add_argument("--x0", default=None,
                       help="explicit initial state, comma separated "
                            "(theta in rad then omega in rad/s)")
    p_sim.add_argument("--violation-slack-hz", type=float, default=None,
                       help="exceedance above which exit code 3 is returned")
    p_sim.set_defaults(func=cmd_simulate)

    p_topo = sub.add_parser("topology", help="cross-layer information report")
    common(p_topo)
    p_topo.add_argument("--gain", required=True)
    p_topo.set_defaults(func=cmd_topology)

    p_replay = sub.add_parser("replay", help="re-run a recorded manifest")
    p_replay.add_argument("manifest")
    p_replay.add_argument("--out-dir", default=None)
    p_replay.set_defaults(func=cmd_replay)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, KeyError, json.JSONDecodeError,
            yaml.YAMLError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
