"""``offmanifold`` command line.

Usage::

    offmanifold <command> [--config FILE] [--out DIR] [--no-plots] [key=value ...]

Each command writes ``<command>.csv`` and ``summary.json`` into ``--out``
(plus a PNG figure unless ``--no-plots``).  Exit status: 0 when every
check in the summary passes, 1 when one fails, 2 for a bad configuration,
3 for a runtime failure such as divergence.
"""

import argparse
import csv
import math
import os
import sys

import numpy as np

from . import _jsonio, experiments
from . import concentration as conc
from .attacks import MODES
from .config import ConfigError, Option, describe, resolve
from .data import DatasetFormatError, read_csv, read_feature_matrix
from .geometry import Subspace

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3


def _positive(v):
    return None if v > 0 else "must be positive"


def _non_negative(v):
    return None if v >= 0 else "must be >= 0"


def _one_of(*choices):
    def check(v):
        return None if v in choices else f"must be one of {', '.join(choices)}"

    return check


def _all_positive(vs):
    return None if vs and all(v > 0 for v in vs) else "needs positive values"


def _modes(vs):
    bad = [v for v in vs if v not in MODES]
    return f"unknown mode(s) {bad}; choose from {', '.join(MODES)}" if bad else None


SEED = Option("seed", "int", 0, "master seed")
WORKERS = Option("workers", "int", 1, "parallel worker processes for sweep cells", _positive)
SUBSPACE_KIND = ("axis", "random", "diagonal")

NET_OPTIONS = [
    Option("d", "int", 256, "ambient dimension", _positive),
    Option("l", "int", 128, "codimension of the data subspace", _positive),
    Option("m", "int", 128, "hidden width", _positive),
    Option("beta", "float?", None, "first-layer init std (none = 1/sqrt(d))", _positive),
    Option("subspace", "str", "random", "axis, random or diagonal", _one_of(*SUBSPACE_KIND)),
    Option("seeds", "int", 100, "independent trials", _positive),
    Option("x0_norm", "float?", None, "norm of the probe point (none = sqrt(d - l) for grad-scan, sqrt(d) for attack)",
           _positive),
    Option("train_steps", "int", 0, "GD steps on random on-subspace data before probing", _non_negative),
    Option("n_train", "int", 20, "training points when train_steps > 0", _positive),
    Option("step_size", "float", 0.01, "GD step size when train_steps > 0", _positive),
    SEED,
    WORKERS,
]

SWEEP_OPTIONS = [
    Option("modes", "strs", list(MODES), "attack projection modes", _modes),
    Option("d", "int", 784, "ambient dimension", _positive),
    Option("l", "int", 756, "codimension of the data subspace", _positive),
    Option("subspace", "str", "random", "axis, random or diagonal", _one_of(*SUBSPACE_KIND)),
    Option("sphere_dim", "int", 28, "dimension of the sphere inside P", _positive),
    Option("radius", "float?", None, "sphere radius (none = sqrt(sphere_dim))", _positive),
    Option("n_points", "int", 200, "training points", _positive),
    Option("attack_points", "int", 200, "points attacked per cell", _positive),
    Option("m", "int", 100, "hidden width", _positive),
    Option("beta", "float?", None, "base init std (none = 1/sqrt(d))", _positive),
    Option("step_size", "float", 0.01, "GD step size", _positive),
    Option("pgd_step", "float?", None, "PGD step length (none = radius / 200)", _positive),
    Option("pgd_max_iters", "int", 20_000, "PGD iteration cap", _positive),
    Option("min_spearman", "float", 0.8, "required rank correlation of off-subspace distance"),
    SEED,
    WORKERS,
]

OPTIONS = {
    "train": [
        Option("dataset", "str", "line7", "line7, grid25 or sphere (ignored with data_csv)",
               _one_of("line7", "grid25", "sphere")),
        Option("data_csv", "str?", None, "train on this CSV instead of a generated set (needs subspace_json)"),
        Option("subspace_json", "str?", None, "subspace for data_csv"),
        Option("d", "int", 3, "ambient dimension", _positive),
        Option("l", "int", 1, "codimension", _positive),
        Option("subspace", "str", "diagonal", "axis, random or diagonal", _one_of(*SUBSPACE_KIND)),
        Option("m", "int", 100, "hidden width", _positive),
        Option("beta", "float?", None, "init std (none = 1/sqrt(d))", _positive),
        Option("init_divisor", "float", 1.0, "divide the init std by this", _positive),
        Option("step_size", "float", 0.02, "GD step size", _positive),
        Option("reg_lambda", "float", 0.0, "L2 coefficient", _non_negative),
        Option("max_steps", "int", 100_000, "step cap", _non_negative),
        Option("target_margin", "float?", 0.3, "stop once the margin reaches this (none = run all steps)"),
        Option("batch_size", "int?", None, "minibatch size (none = full batch)", _positive),
        Option("trace_stride", "int", 1, "record every n-th step", _positive),
        Option("average_loss", "bool", False, "average the loss over the batch instead of summing"),
        Option("offset", "float", 1.0, "lift of the line7/grid25 points off the origin"),
        Option("labels", "str?", "sign", "line7/grid25 labels: sign, alternating or checkerboard"),
        Option("sphere_dim", "int", 2, "sphere dataset: sphere dimension", _positive),
        Option("radius", "float", 1.0, "sphere dataset: radius", _positive),
        Option("n_points", "int", 200, "sphere dataset: number of points", _positive),
        SEED,
    ],
    "attack": NET_OPTIONS
    + [Option("min_flip_fraction", "float", 0.9, "required fraction of flipped seeds"),
       Option("max_redraws", "int", 100, "x0 redraws allowed when no active neuron opposes the prediction",
              _non_negative)],
    "grad-scan": NET_OPTIONS + [Option("min_pass_fraction", "float", 0.95, "required fraction inside both bounds")],
    "init-sweep": [
        Option("divisors", "floats", [1.0, 2.0, 4.0, 8.0, 16.0], "init divisors", _all_positive),
        Option("target_margin", "float?", 0.5, "train each cell until this margin"),
        Option("max_steps", "int", 20_000, "step cap per cell", _positive),
        Option("max_on_p_variation", "float", 0.25, "allowed (max - min) / min of on-subspace distance"),
    ]
    + SWEEP_OPTIONS,
    "reg-sweep": [
        Option("lambdas", "floats", [0.0, 0.01, 0.03, 0.1, 0.3], "L2 coefficients"),
        Option("target_margin", "float?", None, "stop each cell at this margin (none = fixed step count)"),
        Option("max_steps", "int", 1000, "steps per cell", _positive),
        Option("max_on_p_variation", "float?", None, "optional bound on on-subspace spread"),
    ]
    + SWEEP_OPTIONS,
    "pca": [
        Option("input", "str?", None, "CSV file of samples"),
        Option("label_column", "str", "last", "last, first or none", _one_of("last", "first", "none")),
        Option("skip_header", "bool", True, "first row is a header"),
        Option("center", "bool", False, "subtract the mean before the SVD"),
        Option("components", "int?", None, "also write the data projected on this many components", _positive),
        Option("targets", "floats", [0.9, 0.95], "variance fractions to report"),
        Option("expect", "ints", [], "expected component counts for the targets (empty = no check)"),
        Option("expect_tolerance", "ints", [], "allowed deviation per expected count"),
    ],
    "concentration": [
        Option("lemmas", "strs", list(conc.LEMMAS), "lemma ids"),
        Option("ns", "ints", [16, 64, 256], "dimensions", _all_positive),
        Option("ms", "ints", [1, 8, 32], "summands for the sum lemmas", _all_positive),
        Option("ts", "floats", [1.0, 2.0, 4.0], "deviation levels", _all_positive),
        Option("sigmas", "floats", [0.1, 1.0], "standard deviations", _all_positive),
        Option("trials", "int", 100_000, "draws per grid point", lambda v: None if v >= 1000 else "must be >= 1000"),
        Option("cross_check", "bool", True, "compare four points with exact probabilities"),
        Option("explicit_sum", "bool", False, "draw every summand in the sum lemmas (slow) instead of the exact sum law"),
        SEED,
    ],
    "rotation-check": [
        Option("d", "int", 32, "ambient dimension", _positive),
        Option("l", "int", 8, "codimension", _positive),
        Option("m", "int", 32, "hidden width", _positive),
        Option("n_train", "int", 20, "training points", _positive),
        Option("steps", "int", 500, "GD steps", _non_negative),
        Option("step_size", "float", 0.01, "GD step size", _positive),
        Option("batch_size", "int?", None, "minibatch size (none = full batch)", _positive),
        Option("n_test", "int", 100, "test points", _positive),
        Option("tol", "float", 1e-6, "allowed output discrepancy", _positive),
        SEED,
    ],
}

HELP = {
    "train": "train one network and write its trace, weights and margin-growth summary",
    "attack": "universal off-subspace perturbation over many seeds",
    "grad-scan": "off-subspace input-gradient norm against its bounds over many seeds",
    "init-sweep": "PGD distance per attack mode as the init scale shrinks",
    "reg-sweep": "PGD distance per attack mode as the L2 coefficient grows",
    "pca": "cumulative explained variance of a CSV dataset",
    "concentration": "Monte Carlo check of the Gaussian tail bounds",
    "rotation-check": "train on X and on a rotated copy; compare outputs",
}


def write_rows(path, rows, columns):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_cell(r[c]) for c in columns])


def _cell(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return _jsonio.fmt_float(v)
    return v


def _checks_pass(summary):
    return all(summary.get("checks", {}).values())


# ---------------------------------------------------------------- commands


def cmd_train(cfg, out, plots):
    data = None
    if cfg["data_csv"]:
        if not cfg["subspace_json"]:
            raise ConfigError("data_csv needs subspace_json")
        data = read_csv(cfg["data_csv"])
        data = data.with_subspace(Subspace.load(cfg["subspace_json"]))
    keys = [k for k in cfg if k not in ("data_csv", "subspace_json")]
    net, trace, sub, data, summary = experiments.run_train(**{k: cfg[k] for k in keys}, data=data)
    trace.write_csv(os.path.join(out, "train.csv"))
    net.save(os.path.join(out, "model.json"))
    sub.save(os.path.join(out, "subspace.json"))
    if plots:
        from .plotting import plot_trace

        plot_trace(trace, os.path.join(out, "train.png"), threshold=math.log(data.d) ** 2)
    return summary


def cmd_attack(cfg, out, plots):
    rows, extras, summary = experiments.run_attack(**cfg)
    for r, e in zip(rows, extras):
        r.update(e)
    cols = experiments.SCAN_COLUMNS + ["strong_flip", "redraws", "output_before", "output_after"]
    write_rows(os.path.join(out, "attack.csv"), rows, cols)
    if plots:
        from .plotting import plot_attack_scan

        plot_attack_scan(rows, os.path.join(out, "attack.png"))
    return summary


def cmd_grad_scan(cfg, out, plots):
    rows, summary = experiments.run_grad_scan(**cfg)
    write_rows(os.path.join(out, "grad-scan.csv"), rows, experiments.SCAN_COLUMNS)
    if plots:
        from .plotting import plot_gradient_scan

        plot_gradient_scan(rows, os.path.join(out, "grad-scan.png"))
    return summary


def cmd_init_sweep(cfg, out, plots):
    rows, summary = experiments.run_init_sweep(**cfg)
    write_rows(os.path.join(out, "init-sweep.csv"), rows, experiments.SWEEP_COLUMNS)
    if plots:
        from .plotting import plot_distance_sweep

        plot_distance_sweep(rows, "divisor", os.path.join(out, "init-sweep.png"), "init divisor")
    return summary


def cmd_reg_sweep(cfg, out, plots):
    rows, summary = experiments.run_reg_sweep(**cfg)
    write_rows(os.path.join(out, "reg-sweep.csv"), rows, experiments.REG_COLUMNS)
    if plots:
        from .plotting import plot_distance_sweep

        plot_distance_sweep(rows, "lambda", os.path.join(out, "reg-sweep.png"), "lambda", log_x=False)
    return summary


def cmd_pca(cfg, out, plots):
    if not cfg["input"]:
        raise ConfigError("pca needs input=<csv file>")
    points, labels = read_feature_matrix(cfg["input"], cfg["label_column"], cfg["skip_header"], return_labels=True)
    res, rows, summary = experiments.run_pca(points, cfg["center"], cfg["targets"])
    write_rows(os.path.join(out, "pca.csv"), rows, ["component", "singular_value", "cumulative_variance"])
    res.save(os.path.join(out, "pca.json"))
    k = cfg["components"]
    if k:
        if k > points.shape[1]:
            raise ConfigError(f"components={k} exceeds the {points.shape[1]} features")
        coords = points - res.mean if res.centered else points
        coords = coords @ res.components[:, :k]
        cols = [f"c{j + 1}" for j in range(k)]
        if labels is not None:
            coords = np.column_stack([coords, labels])
            cols.append("label")
        np.savetxt(os.path.join(out, f"pca-projected-{k}.csv"), coords, delimiter=",", fmt="%.17g",
                   header=",".join(cols), comments="")
    expect, tol = cfg["expect"], cfg["expect_tolerance"]
    if expect:
        if len(expect) != len(cfg["targets"]) or len(tol) not in (0, len(expect)):
            raise ConfigError("expect (and expect_tolerance) need one entry per target")
        tol = tol or [0] * len(expect)
        checks = {}
        for t, e, s in zip(cfg["targets"], expect, tol):
            got = summary["components_for"][f"{t:g}"]
            checks[f"components_for_{t:g}"] = abs(got - e) <= s
        summary["checks"] = checks
    if plots:
        from .plotting import plot_pca

        plot_pca(rows, os.path.join(out, "pca.png"), cfg["targets"])
    return summary


def cmd_concentration(cfg, out, plots):
    bad = [x for x in cfg["lemmas"] if x not in conc.LEMMAS]
    if bad:
        raise ConfigError(f"unknown lemma(s) {bad}")
    results, summary = experiments.run_concentration(**cfg)
    conc.write_results_csv(results, os.path.join(out, "concentration.csv"))
    if plots:
        from .plotting import plot_concentration

        plot_concentration(results, os.path.join(out, "concentration.png"))
    return summary


def cmd_rotation_check(cfg, out, plots):
    rows, summary = experiments.run_rotation_check(**cfg)
    write_rows(os.path.join(out, "rotation-check.csv"), rows, ["index", "out_x", "out_rx", "abs_diff"])
    if plots:
        from .plotting import plot_rotation

        plot_rotation(rows, os.path.join(out, "rotation-check.png"))
    return summary


COMMANDS = {
    "train": cmd_train,
    "attack": cmd_attack,
    "grad-scan": cmd_grad_scan,
    "init-sweep": cmd_init_sweep,
    "reg-sweep": cmd_reg_sweep,
    "pca": cmd_pca,
    "concentration": cmd_concentration,
    "rotation-check": cmd_rotation_check,
}


def _validate(command, cfg):
    """Cross-field checks that a single option cannot express."""
    if "d" in cfg and "l" in cfg and not cfg["l"] < cfg["d"]:
        raise ConfigError(f"need l < d, got l={cfg['l']} d={cfg['d']}")
    if command == "reg-sweep":
        for lam in cfg["lambdas"]:
            if lam < 0 or cfg["step_size"] * lam >= 1:
                raise ConfigError(f"lambda={lam}: need lambda >= 0 and step_size * lambda < 1")
    if command == "train" and cfg["reg_lambda"] * cfg["step_size"] >= 1:
        raise ConfigError("step_size * reg_lambda must be < 1")
    if command in ("init-sweep", "reg-sweep") and cfg["sphere_dim"] >= cfg["d"] - cfg["l"] + 1:
        raise ConfigError("sphere_dim must be at most d - l")


def build_parser():
    parser = argparse.ArgumentParser(prog="offmanifold", description="Off-subspace robustness experiments.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")
    for name, opts in OPTIONS.items():
        p = sub.add_parser(name, help=HELP[name], description=HELP[name], epilog=describe(opts),
                           formatter_class=argparse.RawDescriptionHelpFormatter)
        p.add_argument("overrides", nargs="*", metavar="key=value", help="config overrides (win over --config)")
        p.add_argument("--config", metavar="FILE", help="key = value config file")
        p.add_argument("--out", metavar="DIR", default=".", help="output directory (default: current)")
        p.add_argument("--no-plots", action="store_true", help="skip the PNG figure")
        if name == "pca":
            p.add_argument("--center", action="store_true", help="same as center=true")
            p.add_argument("--components", type=int, metavar="K", help="same as components=K")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = list(args.overrides)
    if args.command == "pca":
        if args.center:
            overrides.append("center=true")
        if args.components is not None:
            overrides.append(f"components={args.components}")
    try:
        cfg = resolve(OPTIONS[args.command], args.config, overrides)
        _validate(args.command, cfg)
        os.makedirs(args.out, exist_ok=True)
        summary = COMMANDS[args.command](cfg, args.out, not args.no_plots)
    except (ConfigError, DatasetFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - any other failure is a runtime error
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    summary = {"command": args.command, "config": cfg, **summary}
    _jsonio.dump(summary, os.path.join(args.out, "summary.json"))
    ok = _checks_pass(summary)
    failed = [k for k, v in summary.get("checks", {}).items() if not v]
    print(f"{args.command}: {'all checks passed' if ok else 'FAILED ' + ', '.join(failed)} -> {args.out}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
