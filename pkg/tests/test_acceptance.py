"""Acceptance criteria, one test each.

Every test records a single PASS/FAIL line; the lines are printed as they are
produced and again as a block at the end of the pytest run.  Run just this
file with ``python3 tests/test_acceptance.py``.
"""
import math
import sys
from dataclasses import replace
import time

import numpy as np
import pytest

from chaoslab.analysis import (double_scroll_metric, first_period_doubling,
                               logistic_cluster_count, lyapunov_flow, lyapunov_map)
from chaoslab.ann import (TrainConfig, gradient_check, init_weights, mean_squared_error,
                          train_supervised)
from chaoslab.cli import (EXPERIMENTS, _resolve_plot_input, chua_params_from,
                          controller_config_from, find_config, objective_from, rerun,
                          run_subcommand)
from chaoslab.config import load_config
from chaoslab.control import classify_cell, run_closed_loop
from chaoslab.dynamics import ChuaParams, ChuaSystem, LogisticParams, LorenzParams, LorenzSystem
from chaoslab.integrate import IntegratorConfig, rk4_step, simulate
from chaoslab.io import read_csv

RESULTS = {}


def record(n, title, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'}  criterion {n}: {title} | {detail}"
    RESULTS[n] = line
    print(line, file=sys.__stdout__, flush=True)
    assert ok, line


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    """Every shipped experiment run once through the runner, keyed by name."""
    root = tmp_path_factory.mktemp("acceptance")
    out = {}
    for name, sub in EXPERIMENTS.items():
        started = time.perf_counter()
        path = find_config(name)
        spec = _resolve_plot_input(load_config(path, sub), path)
        manifest = run_subcommand(sub, spec, root / name)
        out[name] = (root / name, manifest, time.perf_counter() - started)
    return out


def test_criterion_1_double_scroll():
    started = time.perf_counter()
    system = ChuaSystem(ChuaParams())
    traj = simulate(system, (0.1, 0.0, 0.0), IntegratorConfig(dt=1e-6, n_steps=1_000_000,
                                                               stride=10))
    metric = double_scroll_metric(traj, threshold=system.params.diode.bp)
    lam = lyapunov_flow(system, (0.1, 0.0, 0.0),
                        IntegratorConfig(dt=1e-6, n_steps=1_000_000,
                                         transient_steps=100_000)).exponent
    elapsed = time.perf_counter() - started
    record(1, "Chua double scroll", metric >= 10 and lam > 0.01 and elapsed < 30,
           f"transitions={metric} (>=10), lambda={lam:.4f}/ms (>0.01), {elapsed:.1f} s (<30)")


def test_criterion_2_lorenz():
    cfg = IntegratorConfig(dt=0.01, n_steps=61_000, transient_steps=1000)
    est = lyapunov_flow(LorenzSystem(LorenzParams()), (1.0, 1.0, 1.0), cfg)
    span = est.n_used * 10 * cfg.dt
    z_max = np.abs(simulate(LorenzSystem(), (1.0, 1.0, 1.0), cfg).column("z")).max()
    ok = abs(est.exponent - 0.905) <= 0.15 and span >= 500 and z_max < 60
    record(2, "Lorenz exponent and boundedness", ok,
           f"lambda={est.exponent:.4f} (0.905+-0.15) over {span:.0f} time units, "
           f"max|z|={z_max:.2f} (<60)")


def test_criterion_3_logistic():
    counts = [logistic_cluster_count(mu) for mu in (2.8, 3.2, 3.5)]
    mu_pd = first_period_doubling()
    lam = lyapunov_map(LogisticParams(4.0)).exponent
    ok = counts == [1, 2, 4] and abs(mu_pd - 3.0) <= 0.02 and abs(lam - math.log(2)) <= 0.01
    record(3, "logistic cascade", ok,
           f"clusters={counts} ([1, 2, 4]), first doubling mu={mu_pd:.4f} (3.00+-0.02), "
           f"lambda(mu=4)={lam:.5f} (ln2+-0.01)")


def test_criterion_4_rk4_order():
    def global_error(n):
        x = np.array([1.0])
        for _ in range(n):
            x = rk4_step(lambda s: s, x, 1.0 / n)
        return abs(x[0] - math.e)

    ratio = global_error(10) / global_error(20)
    record(4, "RK4 global error ratio", 12 <= ratio <= 20, f"ratio={ratio:.3f} ([12, 20])")


def test_criterion_5_gradients_and_xor():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for k in range(100):
        sizes = tuple(int(v) for v in rng.integers(1, 6, size=rng.integers(3, 5)))
        net = init_weights(sizes, TrainConfig(seed=k, init_scale=1.0))
        x = rng.uniform(-1, 1, sizes[0])
        t = rng.uniform(0, 1, sizes[-1])
        worst = max(worst, gradient_check(net, x, t, eps=1e-5).max_relative_error)
    xor = [((0.0, 0.0), (0.0,)), ((0.0, 1.0), (1.0,)), ((1.0, 0.0), (1.0,)),
           ((1.0, 1.0), (0.0,))]
    cfg = TrainConfig(learning_rate=0.5, epochs=20_000, seed=0, init_scale=1.0)
    started = time.perf_counter()
    trained, _ = train_supervised(init_weights((2, 4, 1), cfg), xor, cfg)
    elapsed = time.perf_counter() - started
    mse = mean_squared_error(trained, xor)
    ok = worst < 1e-6 and mse < 0.05 and elapsed < 10
    record(5, "gradient fidelity and XOR", ok,
           f"max rel error={worst:.2e} over 100 nets (<1e-6), XOR seed 0 MSE={mse:.2e} (<0.05) "
           f"after {cfg.epochs} epochs in {elapsed:.2f} s (<10)")


def test_criterion_6_rc_sweep(runs, tmp_path):
    out, manifest, _ = runs["rc-sweep"]
    _, cols = read_csv(out / "sweep.csv")
    verdicts = [v.split("{")[0] for v in cols["verdict"]]
    found = {v: verdicts.count(v) for v in ("FixedPoint", "Periodic", "Chaotic", "Divergent")}
    # re-run one cell of each kind on its own and the whole grid from the manifest
    spec = load_config(find_config("rc-sweep"), "sweep")
    sim = IntegratorConfig(dt=spec.get("integrator", "dt"),
                           n_steps=spec.get("integrator", "n_steps"),
                           transient_steps=spec.get("integrator", "transient_steps"))
    cells_match = True
    for kind in ("FixedPoint", "Periodic", "Chaotic"):
        if kind not in verdicts:
            continue
        i = verdicts.index(kind)
        params = chua_params_from(spec).with_(r_coupling=cols["r"][i], c1=cols["c1"][i])
        verdict, lam = classify_cell(params, spec.get("system", "initial"), sim,
                                     spec.get("integrator", "lyapunov_steps"))
        same_lam = (math.isnan(lam) and math.isnan(cols["lambda"][i])) or lam == cols["lambda"][i]
        cells_match &= str(verdict) == cols["verdict"][i] and same_lam
    rerun(out / "manifest.json", tmp_path / "again")
    grid_match = (out / "sweep.csv").read_bytes() == (tmp_path / "again" / "sweep.csv").read_bytes()
    ok = (len(verdicts) == 144 and all(found[k] >= 1 for k in ("FixedPoint", "Periodic", "Chaotic"))
          and cells_match and grid_match)
    record(6, "R-C stabilisation map", ok,
           f"{len(verdicts)} cells, counts={found}, single-cell re-run identical={cells_match}, "
           f"grid re-run identical={grid_match}")


def test_criterion_7_ann_control(runs):
    _, manifest, elapsed = runs["ann-control"]
    ratio = manifest.results["suppression_ratio"]
    verdict = manifest.results["post_control_classification"]
    spec = load_config(find_config("ann-control"), "control")
    base, initial = chua_params_from(spec), spec.get("system", "initial")
    cfg = controller_config_from(spec, manifest.seed)
    neutral_cfg = replace(cfg, learning_rate=0.0, init_scale=0.0)
    neutral = run_closed_loop(base, initial, objective_from(spec), neutral_cfg,
                              duration=spec.get("control", "duration"))
    plain = simulate(ChuaSystem(base), initial,
                     IntegratorConfig(dt=cfg.dt, n_steps=len(neutral.trajectory) * cfg.record_stride,
                                      stride=cfg.record_stride))
    identity = (np.array_equal(neutral.trajectory.states, plain.states)
                and np.array_equal(neutral.trajectory.times, plain.times)
                and np.all(neutral.u == 0.0) and np.all(neutral.r_eff == base.r_coupling))
    ok = ratio <= 0.1 and not verdict.startswith("Chaotic") and identity and elapsed < 60
    record(7, "ANN chaos control", ok,
           f"seed={manifest.seed}, suppression={ratio:.3e} (<=0.1), final quarter {verdict} "
           f"(not Chaotic), neutral identity exact={identity}, {elapsed:.2f} s (<60)")


def test_criterion_8_reproducibility(runs, tmp_path):
    mismatched = []
    n_csv = 0
    for name, (out, _, _) in runs.items():
        again = tmp_path / name
        rerun(out / "manifest.json", again)
        for csv in sorted(out.rglob("*.csv")):
            n_csv += 1
            if csv.read_bytes() != (again / csv.relative_to(out)).read_bytes():
                mismatched.append(f"{name}/{csv.name}")
    record(8, "manifest re-runs", not mismatched and n_csv > 0,
           f"{len(runs)} manifests, {n_csv} CSVs compared, mismatches={mismatched or 'none'}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
