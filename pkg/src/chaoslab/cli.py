"""Command-line experiment runner.

    chaoslab <subcommand> --config FILE --out DIR [--seed N]
    chaoslab rerun --manifest DIR/manifest.json --out DIR2

Subcommands: simulate, bifurcate, lyapunov, sweep, control, plot.  Each run
writes its CSV and SVG outputs plus ``manifest.json`` into ``--out``; the
manifest holds the config snapshot and seed needed to reproduce the run.

Seed precedence: ``--seed``, then ``$CHAOS_SEED``, then ``[ann] seed``, then 0.
Exit codes: 0 success, 1 usage or config error, 2 domain error, 3 divergence.
"""
import argparse
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (bifurcation_scan, double_scroll_metric, lyapunov_flow, lyapunov_map)
from .config import ConfigError, SUBCOMMANDS, load_config, parse_config
from .control import (ControllerConfig, ObservationScaling, PlantEquilibrium, Setpoint,
                      Sinusoid, evaluate_control, rc_sweep, run_closed_loop)
from .dynamics import (ChuaParams, ChuaSystem, LogisticParams, LorenzParams, LorenzSystem,
                       PiecewiseLinearDiode, logistic_step)
from .exceptions import ChaosLabError, ConfigurationError, DivergenceError, DomainError
from .integrate import IntegratorConfig, simulate
from .io import dumps_mlp, emit_csv, emit_svg_plot, read_csv

EXIT_OK, EXIT_USAGE, EXIT_DOMAIN, EXIT_DIVERGENCE = 0, 1, 2, 3


class StageError(ChaosLabError):
    """A failure inside one named stage of a run; ``cause`` is the original error."""

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")


@dataclass(frozen=True)
class RunManifest:
    subcommand: str
    config: str
    seed: int
    version: str
    outputs: list
    duration_s: float
    status: str = "ok"
    results: dict = None

    def to_json(self):
        return json.dumps(asdict(self), indent=2, sort_keys=True, allow_nan=False) + "\n"

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))


# --------------------------------------------------------------------------
# Output handling
# --------------------------------------------------------------------------

class _Outputs:
    """Collects files written into one directory; every write is tmp + rename."""

    def __init__(self, out_dir):
        self.root = Path(out_dir).resolve()
        self.files = []

    def path(self, name):
        target = (self.root / name).resolve()
        if self.root not in target.parents:
            raise ConfigurationError(f"refusing to write outside {self.root}: {name}")
        target.parent.mkdir(parents=True, exist_ok=True)
        return target

    def write(self, name, writer):
        target = self.path(name)
        tmp = target.with_name(f".{target.name}.tmp")
        try:
            writer(tmp)
            os.replace(tmp, target)
        finally:
            if tmp.exists():
                tmp.unlink()
        self.files.append(name)

    def csv(self, name, table):
        self.write(name, lambda p: emit_csv(table, p))

    def svg(self, name, series, **kw):
        self.write(name, lambda p: emit_svg_plot(series, p, **kw))

    def text(self, name, content):
        self.write(name, lambda p: p.write_text(content))

    def listing(self):
        out = []
        for name in self.files:
            digest = hashlib.sha256(self.path(name).read_bytes()).hexdigest()
            out.append({"path": name, "sha256": digest})
        return out


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value) if math.isfinite(value) else None
    return value


# --------------------------------------------------------------------------
# Building model objects from a spec
# --------------------------------------------------------------------------

_CHUA_KEYS = ("c1", "c2", "l", "r_coupling", "r_inductor")
_DIODE_KEYS = ("ga", "gb", "bp")
_LORENZ_KEYS = ("sigma", "rho", "beta")


def _system_kind(spec, allowed):
    kind = spec.get("system", "kind")
    if kind not in allowed:
        raise ConfigurationError(f"[system] kind must be one of {', '.join(allowed)}, got {kind!r}")
    return kind


def chua_params_from(spec):
    sys_ = spec.sections.get("system", {})
    d = PiecewiseLinearDiode()
    diode = PiecewiseLinearDiode(**{k: sys_.get(k, getattr(d, k)) for k in _DIODE_KEYS})
    base = ChuaParams()
    return ChuaParams(**{k: sys_.get(k, getattr(base, k)) for k in _CHUA_KEYS}, diode=diode)


def lorenz_params_from(spec):
    sys_ = spec.sections.get("system", {})
    base = LorenzParams()
    return LorenzParams(**{k: sys_.get(k, getattr(base, k)) for k in _LORENZ_KEYS})


def flow_system_from(spec):
    kind = _system_kind(spec, ("chua", "lorenz"))
    system = ChuaSystem(chua_params_from(spec)) if kind == "chua" else LorenzSystem(
        lorenz_params_from(spec))
    initial = spec.get("system", "initial")
    if initial is None:
        raise ConfigError(["missing required key 'initial' in [system]"])
    if len(initial) != 3:
        raise ConfigurationError(f"[system] initial needs 3 values, got {len(initial)}")
    return system, initial


def integrator_from(spec):
    sec = spec.sections.get("integrator", {})
    keys = ("dt", "n_steps", "transient_steps", "stride", "divergence_bound")
    return IntegratorConfig(**{k: sec[k] for k in keys if k in sec})


def objective_from(spec):
    sec = spec.sections.get("objective", {})
    kind = sec.get("kind")
    if kind == "equilibrium":
        return PlantEquilibrium(sec.get("index", 1))
    if kind == "setpoint":
        if "v1_star" not in sec:
            raise ConfigError(["missing required key 'v1_star' in [objective]"])
        return Setpoint(sec["v1_star"])
    if kind == "sinusoid":
        missing = [k for k in ("amplitude", "frequency") if k not in sec]
        if missing:
            raise ConfigError([f"missing required key '{k}' in [objective]" for k in missing])
        return Sinusoid(sec["amplitude"], sec["frequency"])
    raise ConfigurationError(f"[objective] kind must be equilibrium, setpoint or sinusoid, "
                             f"got {kind!r}")


def controller_config_from(spec, seed):
    ann = spec.sections.get("ann", {})
    ctl = spec.sections.get("control", {})
    defaults = ControllerConfig()
    kw = dict(
        net_shape=ann.get("net_shape", defaults.net_shape),
        learning_rate=ann.get("learning_rate", defaults.learning_rate),
        init_scale=ann.get("init_scale", defaults.init_scale),
        zero_output_layer=ann.get("zero_output_layer", defaults.zero_output_layer),
        seed=seed,
        dt=spec.get("integrator", "dt", defaults.dt),
        r_mult_bounds=(ctl.get("r_mult_min", defaults.r_mult_bounds[0]),
                       ctl.get("r_mult_max", defaults.r_mult_bounds[1])),
    )
    for key in ("control_interval", "u_max", "sensitivity_eps", "record_stride",
                "snapshot_every", "divergence_bound"):
        if key in ctl:
            kw[key] = ctl[key]
    if "obs_scale" in ctl:
        kw["scaling"] = ObservationScaling(scale=ctl["obs_scale"])
    return ControllerConfig(**kw)


def resolve_seed(cli_seed, spec, environ=None):
    environ = os.environ if environ is None else environ
    if cli_seed is not None:
        return int(cli_seed)
    env = environ.get("CHAOS_SEED")
    if env not in (None, ""):
        try:
            return int(env)
        except ValueError:
            raise ConfigurationError(f"CHAOS_SEED must be an integer, got {env!r}") from None
    return int(spec.get("ann", "seed", 0))


# --------------------------------------------------------------------------
# Subcommands
# --------------------------------------------------------------------------

def _run_simulate(spec, out, seed, stage):
    kind = _system_kind(spec, ("chua", "lorenz", "logistic"))
    cfg = integrator_from(spec)
    if kind == "logistic":
        stage("iterate")
        params = LogisticParams(spec.get("system", "mu", 4.0))
        x = spec.get("system", "x0", 0.1)
        rows = []
        for n in range(1, cfg.n_steps + 1):
            x = logistic_step(x, params)
            if n > cfg.transient_steps and (n - cfg.transient_steps) % cfg.stride == 0:
                rows.append((n, x))
        stage("write")
        out.csv("orbit.csv", (("n", "x"), rows))
        arr = np.array(rows, dtype=float)
        out.svg("orbit.svg", [("x", arr[:, 0], arr[:, 1])], xlabel="n", ylabel="x")
        return {"n_records": len(rows)}

    system, initial = flow_system_from(spec)
    stage("integrate")
    traj = simulate(system, initial, cfg)
    stage("write")
    out.csv("trajectory.csv", traj.to_table())
    c0, c1 = traj.columns[0], traj.columns[1]
    out.svg("timeseries.svg", [(c0, traj.times, traj.states[:, 0])], xlabel="t", ylabel=c0,
            title=f"{system.tag} {c0}(t)")
    out.svg("phase.svg", [(f"{c0}-{c1}", traj.states[:, 0], traj.states[:, 1])],
            xlabel=c0, ylabel=c1, title=f"{system.tag} phase portrait")
    results = {"n_records": len(traj),
               "max_abs": dict(zip(traj.columns, np.max(np.abs(traj.states), axis=0)))}
    if kind == "chua":
        threshold = spec.get("system", "scroll_threshold", system.params.diode.bp)
        results["double_scroll_metric"] = double_scroll_metric(traj, threshold=threshold)
    return results


def _run_bifurcate(spec, out, seed, stage):
    _system_kind(spec, ("logistic",))
    sec = spec.sections["system"]
    integ = spec.sections["integrator"]
    n_samples = integ["n_steps"] - integ["transient_steps"]
    if n_samples < 1:
        raise ConfigurationError("[integrator] n_steps must exceed transient_steps")
    stage("scan")
    diagram = bifurcation_scan(sec["mu_min"], sec["mu_max"], sec["n_mu"],
                               transient=integ["transient_steps"], n_samples=n_samples,
                               x0=sec.get("x0", 0.1))
    stage("write")
    out.csv("bifurcation.csv", diagram.to_table())
    samples = diagram.orbit_samples
    out.svg("bifurcation.svg", [("min x", diagram.mu_values, samples.min(axis=1)),
                                ("max x", diagram.mu_values, samples.max(axis=1))],
            xlabel="mu", ylabel="x", title="logistic map orbit envelope")
    counts = diagram.cluster_counts()
    return {"n_mu": len(diagram.mu_values), "samples_per_mu": n_samples,
            "max_clusters": int(max(counts))}


def _run_lyapunov(spec, out, seed, stage):
    kind = _system_kind(spec, ("chua", "lorenz", "logistic"))
    integ = spec.sections["integrator"]
    if kind == "logistic":
        transient = integ.get("transient_steps", 0)
        stage("estimate")
        est = lyapunov_map(LogisticParams(spec.get("system", "mu", 4.0)),
                           x0=spec.get("system", "x0", 0.3), transient=transient,
                           n=integ["n_steps"] - transient)
        xs = np.arange(1, est.n_used + 1)
        header, unit = ("n", "lambda"), "per iteration"
    else:
        system, initial = flow_system_from(spec)
        cfg = integrator_from(spec)
        stage("estimate")
        est = lyapunov_flow(system, initial, cfg,
                            renorm_interval=integ.get("renorm_interval", 10),
                            delta0=integ.get("delta0", 1e-8))
        period = integ.get("renorm_interval", 10) * cfg.dt
        skipped = est.evidence["discarded_periods"]
        xs = cfg.transient_steps * cfg.dt + period * (skipped + np.arange(1, est.n_used + 1))
        header = ("t", "lambda")
        unit = "per ms" if kind == "chua" else "per time unit"
    stage("write")
    out.csv("lyapunov.csv", (header, np.column_stack([xs, est.convergence_series])))
    out.svg("lyapunov.svg", [("running estimate", xs, est.convergence_series)],
            xlabel=header[0], ylabel="lambda", title="largest Lyapunov exponent")
    return {"exponent": est.exponent, "unit": unit, "n_used": est.n_used}


def _run_sweep(spec, out, seed, stage):
    _system_kind(spec, ("chua",))
    sec = spec.sections["system"]
    integ = spec.sections["integrator"]
    base = chua_params_from(spec)
    cfg = integrator_from(spec)
    stage("sweep")
    result = rc_sweep(base, (sec["r_min"], sec["r_max"]), (sec["c1_min"], sec["c1_max"]),
                      (sec["n_r"], sec["n_c1"]), per_cell_sim=cfg,
                      initial=sec.get("initial", (0.1, 0.0, 0.0)),
                      lyapunov_steps=integ.get("lyapunov_steps", 100_000))
    stage("write")
    out.csv("sweep.csv", result.to_table())
    series = [(f"c1={c1:.3g}", result.r_values, np.nan_to_num(result.exponents[:, j], nan=0.0))
              for j, c1 in enumerate(result.c1_values)]
    out.svg("sweep.svg", series, xlabel="R (ohm)", ylabel="lambda (per ms)",
            title="largest exponent across the R-C grid")
    counts = {}
    for row in result.classifications:
        for c in row:
            counts[c.verdict.value] = counts.get(c.verdict.value, 0) + 1
    return {"grid": [len(result.r_values), len(result.c1_values)], "verdict_counts": counts}


def _run_control(spec, out, seed, stage):
    _system_kind(spec, ("chua",))
    base = chua_params_from(spec)
    initial = spec.get("system", "initial")
    if len(initial) != 3:
        raise ConfigurationError(f"[system] initial needs 3 values, got {len(initial)}")
    objective = objective_from(spec)
    config = controller_config_from(spec, seed)
    stage("closed-loop")
    result = run_closed_loop(base, initial, objective, config,
                             duration=spec.get("control", "duration"))
    stage("evaluate")
    metrics = evaluate_control(result, tol_fp=spec.get("control", "tol_fp", 1e-3))
    stage("write")
    out.csv("trajectory.csv", result.trajectory.to_table())
    if len(result.error_series):
        out.csv("control.csv", result.to_table())
        n = len(result.error_series)
        out.svg("control.svg", [("controlled error", result.error_times, result.error_series),
                                ("uncontrolled error", result.error_times,
                                 result.baseline_errors[:n])],
                xlabel="t (s)", ylabel="v1 - ref (V)", title="tracking error")
    for k, net in result.weight_snapshots:
        out.text(f"weights/snapshot_{k:06d}.mlp", dumps_mlp(net))
    out.text("weights/final.mlp", dumps_mlp(result.final_net))
    results = {
        "objective": type(result.objective).__name__,
        "reference_v1": getattr(result.objective, "v1_star", None),
        "n_intervals": len(result.error_series),
        "rms_error_final_quarter": metrics.rms_error_final_quarter,
        "uncontrolled_baseline_rms": result.uncontrolled_baseline_rms,
        "suppression_ratio": metrics.suppression_ratio,
        "post_control_classification": str(metrics.post_control_classification),
        "diverged": result.diverged,
    }
    return results


def _run_plot(spec, out, seed, stage):
    sec = spec.sections["plot"]
    stage("read")
    header, cols = read_csv(sec["input"])
    missing = [c for c in (sec["x"],) + sec["y"] if c not in cols]
    if missing:
        raise ConfigurationError(f"columns {missing} not in {sec['input']} (has {header})")
    stage("write")
    series = []
    for name in sec["y"]:
        if isinstance(cols[name], list):
            raise DomainError(f"column {name!r} is not numeric")
        series.append((name, cols[sec["x"]], cols[name]))
    out.svg("plot.svg", series, xlabel=sec["x"], title=sec.get("title", ""))
    return {"input": sec["input"], "rows": len(cols[sec["x"]])}


_HANDLERS = {
    "simulate": _run_simulate,
    "bifurcate": _run_bifurcate,
    "lyapunov": _run_lyapunov,
    "sweep": _run_sweep,
    "control": _run_control,
    "plot": _run_plot,
}


def run_subcommand(name, spec, output_dir, seed=None):
    """Run ``name`` on ``spec``, write outputs and ``manifest.json`` into ``output_dir``.

    Failures are re-raised as :class:`StageError` naming the stage.  A control
    run whose plant diverges still writes its partial outputs and manifest
    (status ``diverged``) before raising.
    """
    if name not in _HANDLERS:
        raise ConfigError([f"unknown subcommand {name!r}"])
    spec.require(name)
    seed = resolve_seed(seed, spec, environ={})
    out = _Outputs(output_dir)
    out.root.mkdir(parents=True, exist_ok=True)
    current = ["setup"]

    def stage(label):
        current[0] = label

    started = time.perf_counter()
    try:
        results = _HANDLERS[name](spec, out, seed, stage)
    except ChaosLabError as exc:
        raise StageError(current[0], exc) from exc
    status = "diverged" if results.get("diverged") else "ok"
    snapshot = spec.with_value("ann", "seed", seed) if name == "control" else spec
    manifest = RunManifest(name, snapshot.serialize(), seed, __version__, out.listing(),
                           time.perf_counter() - started, status, _jsonable(results))
    out.text("manifest.json", manifest.to_json())
    if status == "diverged":
        raise StageError("closed-loop", DivergenceError("plant diverged under control"))
    return manifest


def rerun(manifest_path, output_dir):
    """Repeat the run recorded in ``manifest_path`` into ``output_dir``."""
    manifest = RunManifest.from_json(Path(manifest_path).read_text())
    spec = parse_config(manifest.config, manifest.subcommand)
    return run_subcommand(manifest.subcommand, spec, output_dir, seed=manifest.seed)


# --------------------------------------------------------------------------
# Entry point
# --------------------------------------------------------------------------

# Subcommand each shipped config is written for.
EXPERIMENTS = {
    "double-scroll": "simulate",
    "lorenz": "simulate",
    "bifurcation": "bifurcate",
    "rc-sweep": "sweep",
    "ann-control": "control",
    "ann-tracking": "control",
    "chua-lyapunov": "lyapunov",
    "lorenz-lyapunov": "lyapunov",
    "logistic-lyapunov": "lyapunov",
    "plot-sample": "plot",
}


def shipped_configs():
    """Names of the example configs installed with the package."""
    root = resources.files("chaoslab") / "configs"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".cfg"))


def find_config(name):
    """A path as given, else a shipped config by name (``.cfg`` optional)."""
    path = Path(name)
    if path.exists():
        return path
    stem = name[:-4] if name.endswith(".cfg") else name
    shipped = resources.files("chaoslab") / "configs" / f"{stem}.cfg"
    if shipped.is_file():
        return Path(str(shipped))
    raise ConfigurationError(f"config not found: {name} (shipped: {', '.join(shipped_configs())})")


def _resolve_plot_input(spec, config_path):
    raw = spec.get("plot", "input")
    if raw is None or Path(raw).is_absolute():
        return spec
    return spec.with_value("plot", "input", str((config_path.parent / raw).resolve()))


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="chaoslab", description="Chaotic-system experiments.")
    parser.add_argument("--version", action="version", version=f"chaoslab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True,
                       help="config file, or the name of a shipped config")
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--seed", type=int, default=None)
    p = sub.add_parser("rerun", help="repeat a run from its manifest.json")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    sub.add_parser("configs", help="list shipped configs")
    return parser


def _exit_code(exc):
    cause = exc.cause if isinstance(exc, StageError) else exc
    if isinstance(cause, DivergenceError):
        return EXIT_DIVERGENCE
    if isinstance(cause, ConfigurationError):
        return EXIT_USAGE
    return EXIT_DOMAIN


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "configs":
            print("\n".join(shipped_configs()))
            return EXIT_OK
        if args.command == "rerun":
            manifest = rerun(args.manifest, args.out)
        else:
            path = find_config(args.config)
            spec = _resolve_plot_input(load_config(path, args.command), path)
            manifest = run_subcommand(args.command, spec, args.out,
                                      seed=resolve_seed(args.seed, spec))
    except ChaosLabError as exc:
        print(f"chaoslab {args.command}: {exc}", file=sys.stderr)
        return _exit_code(exc)
    except OSError as exc:
        print(f"chaoslab {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    summary = ", ".join(f"{k}={v}" for k, v in manifest.results.items()
                        if not isinstance(v, (dict, list)))
    print(f"{args.command}: {len(manifest.outputs)} files in {args.out} "
          f"({manifest.duration_s:.2f} s) {summary}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
