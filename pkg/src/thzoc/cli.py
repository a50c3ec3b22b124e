"""Command-line front end: convergence, simulate, gendata, train, optimize, report."""

import argparse
import csv
import json
import logging
import os
import sys
import time

import numpy as np

from . import diagnostics, nets, ocp, scenarios, training
from .config import load_config
from .convergence import convergence_table, monotone
from .errors import ConfigError, ConvergenceError, NumericalError, ShapeError, SolverError
from .fem import Material
from .gcc import NewtonConfig
from .trajectory import dataset_read, dataset_write

log = logging.getLogger("thzoc")

EXIT_OK, EXIT_CONFIG, EXIT_GATE, EXIT_NUMERIC = 0, 1, 2, 3


class QualityGate(Exception):
    pass


def fmt(v):
    return f"{v:.17g}"


# -- builders ------------------------------------------------------------------

def material_from(cfg):
    m = cfg["material"]
    return Material(m["gamma0"], m["nu_t"], m["eps_omega"], m["eps_Omega"], m["chi2"])


def setup_from(cfg):
    d, t, p = cfg["domain"], cfg["time"], cfg["pml"]
    newton = NewtonConfig(t["newton_abs_tol"], t["newton_rel_tol"], t["newton_max_iter"])
    return scenarios.CrystalSetup(material_from(cfg), d["period"], d["n_periods"], d["domains_per_period"],
                                  d["pml_width"], d["elems_per_unit"], t["k"], t["n_steps"], t["t_shift"],
                                  newton, p["grade_power"], p["attenuation"], cfg["material"]["abs_value"])


def pulse_from(cfg):
    o = cfg["ocp"]
    bounds = ocp.PulseBounds(o["tau_max"], o["p_max"], o["a_max"], o["phi_max"], o["zeta_max"], o["f_max"])
    return ocp.PulseParams(o["tau"], o["p"], o["a"], o["phi"], o["zeta"], o["f"], bounds)


def network_from(cfg, setup, scales, seed):
    n = cfg["network"]
    rng = np.random.default_rng(seed)
    if n["kind"] == "fno":
        nc = nets.FnoConfig(n["layers"], n["width"], n["n_modes"], 2, 2, n["proj_hidden"], n["activation"],
                            n["pad_fraction"])
        params = nets.init_fno(nc, rng)
    elif n["kind"] == "gru":
        nc = nets.GruConfig(n["gru_layers"], n["gru_hidden"], 2, 2)
        params = nets.init_gru(nc, rng)
    elif n["kind"] == "identity":
        return nets.identity_operator(setup.k, setup.n_steps, setup.period)
    else:
        raise ConfigError(f"unknown network kind {n['kind']!r}")
    return nets.SolutionOperator(n["kind"], nc, params, setup.k, setup.n_steps, setup.period, scales)


def train_config_from(cfg, seed=None, workers=None):
    t = cfg["training"]
    return training.TrainConfig(epochs=t["epochs"], batch_size=t["batch_size"],
                                seed=t["seed"] if seed is None else seed, loss=t["loss"],
                                optimizer=t["optimizer"], lr=t["lr"], weight_decay=t["weight_decay"],
                                h_max=t["h_max"], workers=t["workers"] if workers is None else workers)


def cost_from(cfg):
    o = cfg["ocp"]
    return ocp.CostConfig(o["f_omega"], o["r"], o["alpha"], o["sense"])


def ocp_config_from(cfg):
    o = cfg["ocp"]
    free = tuple(s.strip() for s in o["free"].split(",") if s.strip())
    for name in free:
        if name not in ocp.PARAM_NAMES:
            raise ConfigError(f"unknown pulse parameter {name!r}")
    return ocp.OcpConfig(o["max_iter"], o["step_tol"], o["lr"], o["optimizer"], free)


def _manifest(cfg, **extra):
    out = {"config": cfg.as_dict(), "config_hash": cfg.hash()}
    out.update(extra)
    return out


def _write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)


# -- data sets -----------------------------------------------------------------

def generate_runs(cfg, seed):
    """Dataset runs for the configured scenario; returns (runs, pulses, seconds)."""
    setup = setup_from(cfg)
    t = cfg["training"]
    rng = np.random.default_rng(seed)
    scenario = cfg["domain"]["scenario"]
    if scenario == "vacuum":
        runs, wall = scenarios.plane_wave_runs(setup, t["plane_frequencies"], t["n_pulses"], rng)
        return runs, [], wall
    if scenario != "crystal":
        raise ConfigError(f"unknown scenario {scenario!r}")
    pulses = scenarios.random_pulses(rng, t["n_pulses"], None, pulse_from(cfg))
    runs, wall = scenarios.generate_dataset(setup, pulses)
    return runs, pulses, wall


def runs_to_file(path, runs, cfg, **extra):
    series = [s for taps in runs for s in taps]
    fields = _manifest(cfg, n_runs=len(runs), taps_per_run=len(runs[0]), **extra)
    fields["material"] = cfg["material"]
    return dataset_write(path, series, fields)


def runs_from_file(path):
    series, manifest = dataset_read(path)
    per = manifest.get("taps_per_run", len(series))
    runs = [series[i:i + per] for i in range(0, len(series), per)]
    return runs, manifest


def split_pairs(runs, cfg, augment=True):
    """(train X, Y), (val X, Y), (held-out interface X, Y) per the config."""
    t = cfg["training"]
    n_val = min(t["n_val"], max(len(runs) - 1, 0))
    last = t["train_interfaces"]
    fit, val = runs[:len(runs) - n_val], runs[len(runs) - n_val:]
    Xtr, Ytr = scenarios.interface_pairs(fit, 0, last)
    if augment:
        Xtr, Ytr = scenarios.delay_augment(Xtr, Ytr, t["augment_shifts"])
    Xva, Yva = scenarios.interface_pairs(val, 0, last) if val else (np.zeros((0,)), np.zeros((0,)))
    n_if = len(runs[0]) - 1
    if last < n_if:
        Xte, Yte = scenarios.interface_pairs(runs, last, n_if)
    else:
        Xte, Yte = np.zeros((0,)), np.zeros((0,))
    return (Xtr, Ytr), (Xva, Yva), (Xte, Yte)


# -- subcommands ---------------------------------------------------------------

def cmd_convergence(args, cfg):
    t0 = time.perf_counter()
    levels = args.levels or cfg["time"]["levels"]
    if levels < 3:
        raise ConfigError("convergence needs at least 3 levels")
    results, rates = convergence_table(levels, material=material_from(cfg))
    fields = ("e", "a", "p", "u")
    path = os.path.join(args.out, "convergence.csv")
    with open(path, "w", newline="") as fh:
        fh.write(f"# config {cfg.hash()}\n")
        w = csv.writer(fh)
        head = ["level", "n_elem", "n_slabs", "n_dofs", "seconds"]
        for f in fields:
            head += [f"{f}_linf_l2", f"{f}_l2_l2", f"{f}_eoc_linf", f"{f}_eoc_l2"]
        w.writerow(head)
        for i, r in enumerate(results):
            row = [r.level, r.n_elem, r.n_slabs, r.n_dofs, fmt(r.seconds)]
            for f in fields:
                row += [fmt(r.errors[(f, "linf")]), fmt(r.errors[(f, "l2")])]
                row += [fmt(rates[(f, n)][i - 1]) if i else "" for n in ("linf", "l2")]
            w.writerow(row)
    for f in fields:
        print(f"{f}: EOC Linf-L2 " + " ".join(f"{v:.2f}" for v in rates[(f, 'linf')])
              + " | L2-L2 " + " ".join(f"{v:.2f}" for v in rates[(f, 'l2')]))
    print(f"wall {time.perf_counter() - t0:.2f}s -> {path}")
    if not monotone(results):
        raise QualityGate("error sequence not monotone")


def cmd_simulate(args, cfg):
    setup = setup_from(cfg)
    xi = pulse_from(cfg)
    t0 = time.perf_counter()
    taps = scenarios.simulate_pulse(setup, xi)
    wall = time.perf_counter() - t0
    path = os.path.join(args.out, "simulate.thzd")
    runs_to_file(path, [taps], cfg, wall_seconds=wall, pulse=xi.as_dict())
    spec = diagnostics.spectrum(taps[-1])
    diagnostics.write_spectrum_csv(os.path.join(args.out, "spectrum.csv"), spec, f"config {cfg.hash()}")
    o = cfg["ocp"]
    ce = diagnostics.conversion_efficiency(taps[-1], (o["f_omega"] - o["r"], o["f_omega"] + o["r"]))
    print(f"simulated {len(taps)} taps in {wall:.2f}s, CE at last tap {fmt(ce)} -> {path}")


def cmd_gendata(args, cfg):
    runs, pulses, wall = generate_runs(cfg, args.seed if args.seed is not None else cfg["training"]["seed"])
    path = os.path.join(args.out, "dataset.thzd")
    runs_to_file(path, runs, cfg, wall_seconds=wall, pulses=[p.as_dict() for p in pulses])
    print(f"generated {len(runs)} runs in {wall:.2f}s -> {path}")


def cmd_train(args, cfg):
    if not args.data:
        raise ConfigError("train needs --data")
    runs, manifest = runs_from_file(args.data)
    setup = setup_from(cfg)
    if manifest["N"] != setup.n_steps or abs(manifest["k"] - setup.k) > 1e-12 * setup.k:
        raise ShapeError("dataset grid", (manifest["N"] + 1,), (setup.n_steps + 1,))
    (Xtr, Ytr), (Xva, Yva), (Xte, Yte) = split_pairs(runs, cfg)
    scales = (float(np.abs(Xtr[..., 0]).max()) or 1.0, float(np.abs(Xtr[..., 1]).max()) or 1.0)
    seed = args.seed if args.seed is not None else cfg["training"]["seed"]
    op = network_from(cfg, setup, scales, seed)
    tc = train_config_from(cfg, seed, args.workers)
    params, records = training.train(op, tc, Xtr, Ytr, Xva, Yva)
    op.params = params
    kind = tc.loss
    X0, Y0 = split_pairs(runs, cfg, augment=False)[0]
    summary = {
        "train_loss": training.evaluate_loss(op, kind, Xtr, Ytr),
        "val_loss": records[-1].val_loss if records else float("nan"),
        "heldout_loss": training.evaluate_loss(op, kind, Xte, Yte) if len(Xte) else float("nan"),
        # root-mean-square L2 errors on the plain (unaugmented) train pairs and
        # the held-out interface; these are norms, comparable to each other
        "train_error_l2": float(np.sqrt(training.evaluate_loss(op, "l2", X0, Y0))),
        "heldout_error_l2": (float(np.sqrt(training.evaluate_loss(op, "l2", Xte, Yte)))
                             if len(Xte) else float("nan")),
        "wall_seconds": records[-1].wall_seconds if records else 0.0,
        "data_seconds": manifest.get("wall_seconds"),
    }
    op.meta = _manifest(cfg, seed=seed, summary=summary)
    nets.checkpoint_write(os.path.join(args.out, "checkpoint.thzc"), op)
    training.write_loss_csv(os.path.join(args.out, "loss.csv"), records)
    _write_json(os.path.join(args.out, "train_summary.json"), summary)
    print("train " + " ".join(f"{k}={v}" for k, v in summary.items()))
    if not np.isfinite(summary["val_loss"]) and len(Xva):
        raise QualityGate("final validation loss is not finite")


def cmd_optimize(args, cfg):
    if not args.checkpoint:
        raise ConfigError("optimize needs --checkpoint")
    op, _ = nets.checkpoint_read(args.checkpoint)
    setup = setup_from(cfg)
    if op.n_steps != setup.n_steps or abs(op.k - setup.k) > 1e-12 * setup.k:
        raise ShapeError("checkpoint grid", (op.n_steps + 1,), (setup.n_steps + 1,))
    cc = cost_from(cfg)
    m = cfg["domain"]["n_periods"]
    t0 = time.perf_counter()
    res = ocp.optimize_pulse(pulse_from(cfg), op, m, cc, setup.times, ocp_config_from(cfg), setup.t_shift)
    total = time.perf_counter() - t0
    # surrogate-side timing of one solution-operator chain
    t1 = time.perf_counter()
    nets.operator_power(op, m, ocp.sample_pulse(res.params, setup.times, setup.t_shift))
    so = time.perf_counter() - t1
    ocp.write_trace_csv(os.path.join(args.out, "ocp_trace.csv"), res)
    out = _manifest(cfg, params=res.params.as_dict(), best_params=res.best_params.as_dict(),
                    best_J=res.best_J, stop_reason=res.stop_reason, iterations=len(res.records),
                    ocp_seconds=total, so_eval_seconds=so)
    _write_json(os.path.join(args.out, "pulse.json"), out)
    print(f"optimize: {len(res.records)} iterations ({res.stop_reason}), best J {fmt(res.best_J)}, "
          f"OCP {total:.2f}s, SO eval {so:.4f}s")


def cmd_report(args, cfg):
    if not args.data:
        raise ConfigError("report needs --data")
    runs, _ = runs_from_file(args.data)
    o = cfg["ocp"]
    band = (o["f_omega"] - o["r"], o["f_omega"] + o["r"])
    mat = material_from(cfg)
    rows = []
    for i, taps in enumerate(runs):
        for s in taps:
            _, flu = diagnostics.intensity_fluence(s, mat)
            rows.append({"run": i, "x": s.x, "ce": diagnostics.conversion_efficiency(s, band), "fluence": flu})
    path = os.path.join(args.out, "report.csv")
    with open(path, "w", newline="") as fh:
        fh.write(f"# config {cfg.hash()}\n")
        w = csv.writer(fh)
        w.writerow(["run", "x", "ce", "fluence"])
        for r in rows:
            w.writerow([r["run"], fmt(r["x"]), fmt(r["ce"]), fmt(r["fluence"])])
    spec = diagnostics.spectrum(runs[0][-1])
    diagnostics.write_spectrum_csv(os.path.join(args.out, "spectrum.csv"), spec, f"config {cfg.hash()}")
    print(f"report: {len(rows)} traces -> {path}")


COMMANDS = {
    "convergence": cmd_convergence,
    "simulate": cmd_simulate,
    "gendata": cmd_gendata,
    "train": cmd_train,
    "optimize": cmd_optimize,
    "report": cmd_report,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="thzoc", description=__doc__)
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True, help="INI run configuration")
    ap.add_argument("--out", default=".", help="output directory")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--workers", type=int, default=None)
    ap.add_argument("--levels", type=int, default=None, help="refinement levels (convergence)")
    ap.add_argument("--data", default=None, help="dataset file (train, report)")
    ap.add_argument("--checkpoint", default=None, help="checkpoint file (optimize)")
    return ap


def main(argv=None):
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    try:
        cfg = load_config(args.config)
        os.makedirs(args.out, exist_ok=True)
        COMMANDS[args.command](args, cfg)
    except QualityGate as exc:
        print(f"quality gate: {exc}", file=sys.stderr)
        return EXIT_GATE
    except (ConfigError, ShapeError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, ConvergenceError, SolverError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
