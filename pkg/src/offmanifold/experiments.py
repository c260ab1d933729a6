"""Experiment runners shared by the command line and the acceptance tests.

Each ``run_*`` function takes plain keyword parameters, returns rows (lists
of dicts) plus a summary dict, and never touches the filesystem.  Sweep
cells derive their randomness from ``(seed, cell label)`` so results do not
depend on execution order.
"""

import math
from concurrent.futures import ProcessPoolExecutor

import numpy as np
from scipy.stats import spearmanr

from . import concentration as conc
from .attacks import (
    MODES,
    flip_failure_probability,
    gradient_report,
    perturbation_condition,
    pgd_attack_batch,
    universal_perturbation,
)
from .data import (
    LabeledDataset,
    diagonal_subspace,
    generate_grid_dataset,
    pca,
    random_on_subspace,
)
from .geometry import (
    SeededRng,
    make_axis_subspace,
    project,
    random_subspace,
    rotation_between,
)
from .network import forward, init_network
from .tolerances import DECAY_RTOL, FREEZE_RTOL, ROTATION_OUTPUT_ATOL
from .training import TrainConfig, TrainingDiverged, margin_growth_report, train


def parallel_map(func, items, workers=1):
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def build_subspace(kind, d, l, rng):
    if kind == "axis":
        return make_axis_subspace(d, l)
    if kind == "random":
        return random_subspace(d, l, rng)
    if kind == "diagonal":
        return diagonal_subspace(d, l)
    raise ValueError(f"subspace must be axis, random or diagonal, got {kind!r}")


def kaiming_beta(d, beta=None, divisor=1.0):
    base = 1.0 / math.sqrt(d) if beta is None else beta
    return base / divisor


def random_labeled_points(subspace, count, norm, rng):
    """On-subspace points of a fixed norm with fair random labels."""
    x = random_on_subspace(subspace, norm, rng.child("points"), count)
    y = rng.child("labels").signs(count)
    return LabeledDataset(x, y, subspace)


def check_weight_law(trace, reg_lambda):
    """Largest relative drift of the off-subspace weights from (1 - eta lambda)^t times their start."""
    rel = trace.relative_residuals()
    worst = float(rel.max()) if rel.size else 0.0
    tol = DECAY_RTOL if reg_lambda > 0 else FREEZE_RTOL
    return worst, worst <= tol


# ------------------------------------------------------------------ train


def run_train(
    dataset="line7",
    d=3,
    l=1,
    subspace="diagonal",
    m=100,
    beta=None,
    init_divisor=1.0,
    step_size=0.02,
    reg_lambda=0.0,
    max_steps=100_000,
    target_margin=0.3,
    batch_size=None,
    trace_stride=1,
    average_loss=False,
    offset=1.0,
    labels="sign",
    sphere_dim=2,
    radius=1.0,
    n_points=200,
    data=None,
    seed=0,
):
    """Train one network; return ``(net, trace, subspace, data, summary)``."""
    rng = SeededRng(seed)
    if data is None:
        sub = build_subspace(subspace, d, l, rng.child("subspace"))
        params = {}
        if dataset in ("line7", "grid25"):
            params = {"offset": offset}
            if labels:
                params["labels"] = labels
        elif dataset == "sphere":
            params = {"sphere_dim": sphere_dim, "radius": radius, "n_points": n_points}
        data = generate_grid_dataset(dataset, sub, params, rng.child("data"))
    else:
        sub = data.subspace
        if sub is None:
            raise ValueError("the dataset needs a subspace to train against")
    cfg = TrainConfig(
        step_size=step_size,
        reg_lambda=reg_lambda,
        max_steps=max_steps,
        target_margin=target_margin,
        batch_size=batch_size,
        seed=seed,
        trace_stride=trace_stride,
        average_loss=average_loss,
    )
    net0 = init_network(data.d, m, kaiming_beta(data.d, beta, init_divisor), rng.child("net"))
    net, trace = train(net0, data, sub, cfg)
    worst, law_ok = check_weight_law(trace, reg_lambda)
    growth = margin_growth_report(trace, data.d)
    summary = {
        "d": data.d,
        "l": sub.codim,
        "m": m,
        "beta": net0.beta,
        "steps": trace.step[-1],
        "final_loss": trace.loss[-1],
        "final_margin": trace.margin[-1],
        "max_relative_weight_drift": worst,
        "checks": {"off_subspace_weight_law": law_ok},
        "margin_growth": growth.summary(),
    }
    if target_margin is not None:
        summary["checks"]["target_margin_reached"] = trace.margin[-1] >= target_margin
    return net, trace, sub, data, summary


# ------------------------------------------------------------------ per-seed scans

SCAN_COLUMNS = ["seed", "d", "l", "m", "beta", "k", "k_y0", "perp_grad", "lower", "upper", "z_norm", "z_bound", "flip"]


def _scan_one(args):
    seed, p, sub = args
    rng = SeededRng(p["seed"]).child(f"scan/{seed}")
    d, l, m = p["d"], p["l"], p["m"]
    net = init_network(d, m, kaiming_beta(d, p["beta"]), rng.child("net"))
    if p["train_steps"] > 0:
        data = random_labeled_points(sub, p["n_train"], p["x0_norm"], rng.child("train"))
        cfg = TrainConfig(step_size=p["step_size"], max_steps=p["train_steps"], trace_stride=p["train_steps"])
        net, _ = train(net, data, sub, cfg)
    redraws = 0
    rep = None
    for attempt in range(p["max_redraws"] + 1):
        x0 = random_on_subspace(sub, p["x0_norm"], rng.child(f"x0/{attempt}"))
        try:
            rep = universal_perturbation(net, x0, sub)
            break
        except ValueError:
            if not p["redraw"]:
                break
            redraws += 1
    g = gradient_report(net, x0, sub)
    row = {
        "seed": seed,
        "d": d,
        "l": l,
        "m": m,
        "beta": net.beta,
        "k": g.k,
        "k_y0": rep.k_y0 if rep else 0,
        "perp_grad": g.perp_grad_norm,
        "lower": g.lower_bound,
        "upper": g.upper_bound,
        "z_norm": rep.z_norm if rep else float("nan"),
        "z_bound": rep.z_norm_bound if rep else float("nan"),
        "flip": bool(rep.sign_flipped) if rep else False,
    }
    extra = {
        "strong_flip": bool(rep.strong_flip) if rep else False,
        "redraws": redraws,
        "output_before": rep.output_before if rep else float("nan"),
        "output_after": rep.output_after if rep else float("nan"),
    }
    return row, extra


def _scan(seeds, params, subspace_kind, workers):
    rng = SeededRng(params["seed"])
    sub = build_subspace(subspace_kind, params["d"], params["l"], rng.child("subspace"))
    out = parallel_map(_scan_one, [(s, params, sub) for s in range(seeds)], workers)
    return [r for r, _ in out], [e for _, e in out], sub


def run_grad_scan(d=256, l=128, m=128, beta=None, subspace="random", seeds=100, train_steps=0,
                  n_train=20, step_size=0.01, x0_norm=None, min_pass_fraction=0.95, seed=0, workers=1):
    """Per seed: fresh (optionally trained) network, random x0 on P, gradient vs bounds."""
    params = dict(d=d, l=l, m=m, beta=beta, train_steps=train_steps, n_train=n_train, step_size=step_size,
                  x0_norm=math.sqrt(d - l) if x0_norm is None else x0_norm, seed=seed, redraw=False, max_redraws=0)
    rows, _, _ = _scan(seeds, params, subspace, workers)
    lower_ok = sum(r["lower"] <= r["perp_grad"] for r in rows)
    upper_ok = sum(r["perp_grad"] <= r["upper"] for r in rows)
    both = sum(r["lower"] <= r["perp_grad"] <= r["upper"] for r in rows)
    need = math.ceil(min_pass_fraction * seeds)
    summary = {
        "seeds": seeds,
        "lower_bound_holds": lower_ok,
        "upper_bound_holds": upper_ok,
        "both_hold": both,
        "required": need,
        "failure_probability_per_side": math.exp(-l / 16.0),
        "checks": {"sandwich": both >= need},
    }
    return rows, summary


def run_attack(d=4096, l=3968, m=8, beta=None, subspace="axis", seeds=50, train_steps=0, n_train=20,
               step_size=0.01, x0_norm=None, min_flip_fraction=0.9, max_redraws=100, seed=0, workers=1):
    """Universal perturbation per seed; x0 is redrawn until k_y0 >= 1 so z is defined."""
    params = dict(d=d, l=l, m=m, beta=beta, train_steps=train_steps, n_train=n_train, step_size=step_size,
                  x0_norm=math.sqrt(d) if x0_norm is None else x0_norm, seed=seed, redraw=True,
                  max_redraws=max_redraws)
    rows, extras, _ = _scan(seeds, params, subspace, workers)
    flips = sum(r["flip"] for r in rows)
    strong = sum(e["strong_flip"] for e in extras)
    bound_ok = all(r["z_norm"] <= r["z_bound"] for r in rows if r["flip"])
    need = math.ceil(min_flip_fraction * seeds)
    summary = {
        "seeds": seeds,
        "flips": flips,
        "strong_flips": strong,
        "required": need,
        "x0_redraws": sum(e["redraws"] for e in extras),
        "condition_met": perturbation_condition(l, m, d),
        "guaranteed_success_probability": 1.0 - flip_failure_probability(l, m, d),
        "checks": {
            "flip_frequency": flips >= need,
            "norm_bound_on_flips": bound_ok,
            "strong_flip_frequency": strong >= need,
        },
    }
    return rows, extras, summary


# ------------------------------------------------------------------ distance sweeps

SWEEP_COLUMNS = ["divisor", "mode", "mean_norm", "std_norm", "n_points"]
REG_COLUMNS = ["lambda", "mode", "mean_norm", "std_norm", "n_points", "steps", "decay_factor", "measured_ratio"]


def _sweep_setup(p):
    rng = SeededRng(p["seed"])
    sub = build_subspace(p["subspace"], p["d"], p["l"], rng.child("subspace"))
    data = generate_grid_dataset(
        "sphere", sub, {"sphere_dim": p["sphere_dim"], "radius": p["radius"], "n_points": p["n_points"]},
        rng.child("data"),
    )
    pick = np.sort(rng.child("attack-points").choice(len(data), min(p["attack_points"], len(data))))
    return rng, sub, data, pick


def _attack_cell(args):
    """Train at one (divisor, lambda) and attack the chosen points under every mode."""
    divisor, lam, p = args
    rng, sub, data, pick = _sweep_setup(p)
    net0 = init_network(p["d"], p["m"], kaiming_beta(p["d"], p["beta"], divisor), rng.child("net"))
    cfg = TrainConfig(step_size=p["step_size"], reg_lambda=lam, max_steps=p["max_steps"],
                      target_margin=p["target_margin"], trace_stride=max(1, p["max_steps"]))
    info = {"divisor": divisor, "lambda": lam}
    try:
        net, trace = train(net0, data, sub, cfg)
    except TrainingDiverged as exc:
        info["error"] = str(exc)
        return [], info
    w_hat0 = project(net0.weights_w, sub, "perp")
    w_hat = project(net.weights_w, sub, "perp")
    steps = trace.step[-1]
    info.update(
        steps=steps,
        final_margin=trace.margin[-1],
        decay_factor=(1.0 - p["step_size"] * lam) ** steps,
        measured_ratio=float(np.linalg.norm(w_hat) / np.linalg.norm(w_hat0)),
    )
    x = data.points[pick]
    out = forward(net, x)
    keep = out != 0.0
    x, y0 = x[keep], np.sign(out[keep]).astype(int)
    step = p["pgd_step"] if p["pgd_step"] is not None else p["radius"] / 200.0
    results = []
    for mode in p["modes"]:
        res = pgd_attack_batch(net, x, y0, mode, sub, step=step, max_iters=p["pgd_max_iters"])
        norms = res.norms[res.flipped]
        results.append({
            "mode": mode,
            "mean_norm": float(norms.mean()) if norms.size else float("nan"),
            "std_norm": float(norms.std()) if norms.size else float("nan"),
            "n_points": int(norms.size),
            "attacked": int(len(y0)),
        })
    return results, info


def _sweep_params(**kw):
    kw.setdefault("radius", math.sqrt(kw["sphere_dim"]))
    if kw["radius"] is None:
        kw["radius"] = math.sqrt(kw["sphere_dim"])
    for mode in kw["modes"]:
        if mode not in MODES:
            raise ValueError(f"unknown attack mode {mode!r}")
    return kw


def trend_checks(keys, rows, min_spearman, max_variation):
    """Spearman(key, off-subspace distance) and the relative spread of on-subspace distances."""
    out = {}
    perp = [(k, r["mean_norm"]) for k, r in zip(keys, rows) if r["mode"] == "onto_P_perp"]
    on_p = [r["mean_norm"] for r in rows if r["mode"] == "onto_P"]
    if len(perp) >= 2:
        xs, ys = zip(*perp)
        rho = float(spearmanr(xs, ys).statistic) if np.all(np.isfinite(ys)) else float("nan")
        out["spearman_off_subspace"] = rho
        out["off_subspace_trend"] = bool(rho >= min_spearman)
    if len(on_p) >= 2:
        arr = np.asarray(on_p)
        spread = float((arr.max() - arr.min()) / arr.min()) if np.all(np.isfinite(arr)) else float("nan")
        out["on_subspace_variation"] = spread
        out["on_subspace_flat"] = bool(spread < max_variation)
    return out


def run_init_sweep(divisors=(1, 2, 4, 8, 16), modes=MODES, d=784, l=756, subspace="random", sphere_dim=28,
                   radius=None, n_points=200, attack_points=200, m=100, beta=None, step_size=0.01,
                   target_margin=0.5, max_steps=20_000, pgd_step=None, pgd_max_iters=20_000,
                   min_spearman=0.8, max_on_p_variation=0.25, seed=0, workers=1):
    """PGD distance to the decision boundary as the first-layer init is divided by each divisor."""
    p = _sweep_params(d=d, l=l, subspace=subspace, sphere_dim=sphere_dim, radius=radius, n_points=n_points,
                      attack_points=attack_points, m=m, beta=beta, step_size=step_size,
                      target_margin=target_margin, max_steps=max_steps, pgd_step=pgd_step,
                      pgd_max_iters=pgd_max_iters, modes=list(modes), seed=seed)
    cells = parallel_map(_attack_cell, [(float(v), 0.0, p) for v in divisors], workers)
    rows, infos = [], []
    for v, (results, info) in zip(divisors, cells):
        infos.append(info)
        if not results:
            results = [{"mode": mode, "mean_norm": float("nan"), "std_norm": float("nan"), "n_points": 0}
                       for mode in p["modes"]]
        for r in results:
            rows.append({"divisor": v, **r})
    rows.sort(key=lambda r: (r["divisor"], MODES.index(r["mode"])))
    checks = trend_checks([r["divisor"] for r in rows], rows, min_spearman, max_on_p_variation)
    summary = {"cells": infos, "trend": checks,
               "checks": {k: v for k, v in checks.items() if isinstance(v, bool)}}
    summary["checks"]["no_diverged_cells"] = all("error" not in i for i in infos)
    return rows, summary


def run_reg_sweep(lambdas=(0.0, 0.01, 0.03, 0.1, 0.3), modes=MODES, d=784, l=756, subspace="random",
                  sphere_dim=28, radius=None, n_points=200, attack_points=200, m=100, beta=None,
                  step_size=0.01, target_margin=None, max_steps=1000, pgd_step=None,
                  pgd_max_iters=20_000, min_spearman=0.8, max_on_p_variation=None, seed=0, workers=1):
    """Same cells as the init sweep, over the L2 coefficient instead of the init divisor."""
    for lam in lambdas:
        if lam < 0 or step_size * lam >= 1:
            raise ValueError(f"need 0 <= lambda and step_size * lambda < 1, got lambda={lam}")
    p = _sweep_params(d=d, l=l, subspace=subspace, sphere_dim=sphere_dim, radius=radius, n_points=n_points,
                      attack_points=attack_points, m=m, beta=beta, step_size=step_size,
                      target_margin=target_margin, max_steps=max_steps, pgd_step=pgd_step,
                      pgd_max_iters=pgd_max_iters, modes=list(modes), seed=seed)
    cells = parallel_map(_attack_cell, [(1.0, float(lam), p) for lam in lambdas], workers)
    rows, infos = [], []
    for lam, (results, info) in zip(lambdas, cells):
        infos.append(info)
        if not results:
            results = [{"mode": mode, "mean_norm": float("nan"), "std_norm": float("nan"), "n_points": 0}
                       for mode in p["modes"]]
        for r in results:
            rows.append({
                "lambda": lam, **r,
                "steps": info.get("steps", -1),
                "decay_factor": info.get("decay_factor", float("nan")),
                "measured_ratio": info.get("measured_ratio", float("nan")),
            })
    rows.sort(key=lambda r: (r["lambda"], MODES.index(r["mode"])))
    decay_ok = all(
        abs(i["measured_ratio"] - i["decay_factor"]) <= 1e-6 * i["decay_factor"] for i in infos if "error" not in i
    )
    checks = trend_checks([r["lambda"] for r in rows], rows, min_spearman,
                          max_on_p_variation if max_on_p_variation is not None else float("inf"))
    summary = {"cells": infos, "trend": checks, "checks": {"decay_law": decay_ok}}
    if "off_subspace_trend" in checks:
        summary["checks"]["off_subspace_trend"] = checks["off_subspace_trend"]
    if max_on_p_variation is not None and "on_subspace_flat" in checks:
        summary["checks"]["on_subspace_flat"] = checks["on_subspace_flat"]
    summary["checks"]["no_diverged_cells"] = all("error" not in i for i in infos)
    return rows, summary


# ------------------------------------------------------------------ rotation check


def run_rotation_check(d=32, l=8, m=32, n_train=20, steps=500, step_size=0.01, n_test=100, tol=ROTATION_OUTPUT_ATOL,
                       batch_size=None, seed=0):
    """Train on X from W0 and on R X from R W0; compare N^X(x) with N^{RX}(R x)."""
    rng = SeededRng(seed)
    src = random_subspace(d, l, rng.child("subspace"))
    dst = make_axis_subspace(d, l)
    rot = rotation_between(src, dst)
    data = random_labeled_points(src, n_train, math.sqrt(d - l), rng.child("train"))
    data_r = LabeledDataset(rot.apply(data.points), data.labels, dst)
    net0 = init_network(d, m, None, rng.child("net"))
    net0_r = net0.with_weights(rot.apply(net0.weights_w))
    cfg = TrainConfig(step_size=step_size, max_steps=steps, batch_size=batch_size, seed=seed, trace_stride=max(1, steps))
    net, _ = train(net0, data, src, cfg)
    net_r, _ = train(net0_r, data_r, dst, cfg)
    test_rng = rng.child("test")
    half = n_test // 2
    x_test = np.vstack([
        random_on_subspace(src, math.sqrt(d - l), test_rng.child("on"), half),
        test_rng.child("any").normal((n_test - half, d)),
    ])
    out = forward(net, x_test)
    out_r = forward(net_r, rot.apply(x_test))
    diff = np.abs(out - out_r)
    rows = [{"index": i, "out_x": float(a), "out_rx": float(b), "abs_diff": float(c)}
            for i, (a, b, c) in enumerate(zip(out, out_r, diff))]
    summary = {"max_abs_diff": float(diff.max()), "tolerance": tol,
               "checks": {"rotation_equivariance": bool(diff.max() <= tol)}}
    return rows, summary


# ------------------------------------------------------------------ PCA


def run_pca(points, center=False, targets=(0.9, 0.95)):
    res = pca(points, center=center)
    rows = [{"component": j + 1, "singular_value": float(s), "cumulative_variance": float(c)}
            for j, (s, c) in enumerate(zip(res.singular_values, res.cumulative_variance))]
    summary = {"centered": center, "components_for": {f"{t:g}": res.n_components_for(t) for t in targets}}
    return res, rows, summary


# ------------------------------------------------------------------ concentration

CROSS_CHECKS = (
    ("norm_lower", {"n": 16, "sigma": 1.0}),
    ("norm_upper", {"n": 16, "sigma": 1.0}),
    ("sum_norm_lower", {"n": 16, "m": 8, "sigma": 1.0}),
    ("inner_fixed", {"n": 16, "sigma": 1.0, "t": 2.0}),
)


def run_concentration(lemmas=conc.LEMMAS, ns=(16, 64, 256), ms=(1, 8, 32), ts=(1.0, 2.0, 4.0), sigmas=(0.1, 1.0),
                      trials=100_000, cross_check=True, explicit_sum=False, seed=0):
    rng = SeededRng(seed)
    results = []
    for lemma in lemmas:
        grid = conc.default_grid(lemma, ns, ms, ts, sigmas)
        results.extend(conc.sweep_lemma(lemma, grid, trials, rng.child(lemma), explicit_sum))
    checks = {"all_within_bound": all(r.passed for r in results)}
    cross = []
    if cross_check:
        for lemma, params in CROSS_CHECKS:
            r = conc.test_lemma(lemma, params, trials, rng.child(f"cross/{lemma}"))
            exact = conc.exact_probability(lemma, params["n"], params.get("m", 1), params["sigma"], params.get("t"))
            margin = 3.0 * math.sqrt(exact * (1 - exact) / trials)
            cross.append({"lemma": lemma, **params, "empirical": r.empirical_freq, "exact": exact,
                          "margin": margin, "ok": abs(r.empirical_freq - exact) <= margin})
        checks["exact_cross_check"] = all(c["ok"] for c in cross)
    summary = {"points": len(results), "failed": sum(not r.passed for r in results), "cross_checks": cross,
               "checks": checks}
    return results, summary
