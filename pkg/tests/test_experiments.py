import math

import numpy as np
import pytest

from offmanifold import experiments as ex

SMALL_SWEEP = dict(d=40, l=34, sphere_dim=4, n_points=30, attack_points=30, m=16, max_steps=200,
                   target_margin=None, pgd_max_iters=5000)


def test_train_recipe_reaches_target():
    _, trace, sub, data, summary = ex.run_train()
    assert summary["final_margin"] >= 0.3
    assert summary["checks"] == {"off_subspace_weight_law": True, "target_margin_reached": True}
    assert data.d == 3 and sub.codim == 1


def test_grad_scan_rows_and_determinism():
    rows, summary = ex.run_grad_scan(d=64, l=32, m=32, seeds=6)
    again, _ = ex.run_grad_scan(d=64, l=32, m=32, seeds=6)
    assert rows == again
    assert [r["seed"] for r in rows] == list(range(6))
    assert set(rows[0]) == set(ex.SCAN_COLUMNS)
    assert summary["both_hold"] == sum(r["lower"] <= r["perp_grad"] <= r["upper"] for r in rows)


def test_scan_parallel_matches_serial():
    a, _ = ex.run_grad_scan(d=32, l=16, m=8, seeds=4, workers=1)
    b, _ = ex.run_grad_scan(d=32, l=16, m=8, seeds=4, workers=2)
    assert a == b


def test_attack_rows_report_redraws():
    rows, extras, summary = ex.run_attack(d=512, l=480, m=2, seeds=5)
    assert len(rows) == len(extras) == 5
    assert summary["x0_redraws"] == sum(e["redraws"] for e in extras)
    for r, e in zip(rows, extras):
        # With m = 2 both output signs can agree; then no x0 has an opposing neuron.
        if r["k_y0"] == 0:
            assert e["redraws"] == 101 and math.isnan(r["z_norm"]) and not r["flip"]
        else:
            assert r["z_norm"] > 0


def test_reg_sweep_zero_lambda_equals_init_sweep_divisor_one():
    init_rows, _ = ex.run_init_sweep(divisors=(1.0,), **SMALL_SWEEP)
    reg_rows, reg_summary = ex.run_reg_sweep(lambdas=(0.0, 0.5), **SMALL_SWEEP)
    zero = [r for r in reg_rows if r["lambda"] == 0.0]
    for a, b in zip(init_rows, zero):
        assert a["mode"] == b["mode"]
        assert a["mean_norm"] == b["mean_norm"] and a["std_norm"] == b["std_norm"]
    assert reg_summary["checks"]["decay_law"]
    half = [r for r in reg_rows if r["lambda"] == 0.5][0]
    assert half["decay_factor"] == pytest.approx((1 - 0.01 * 0.5) ** 200)


def test_sweep_rows_sorted_by_grid():
    rows, _ = ex.run_init_sweep(divisors=(4.0, 1.0), **SMALL_SWEEP)
    assert [r["divisor"] for r in rows] == [1.0] * 3 + [4.0] * 3
    assert [r["mode"] for r in rows[:3]] == list(ex.MODES)


def test_diverged_cell_becomes_nan_row():
    rows, summary = ex.run_init_sweep(divisors=(1.0,), step_size=1e15, **SMALL_SWEEP)
    assert all(math.isnan(r["mean_norm"]) and r["n_points"] == 0 for r in rows)
    assert summary["checks"]["no_diverged_cells"] is False


def test_reg_sweep_rejects_bad_lambda():
    with pytest.raises(ValueError):
        ex.run_reg_sweep(lambdas=(200.0,), **SMALL_SWEEP)


def test_trend_checks():
    rows = [{"mode": "onto_P_perp", "mean_norm": v} for v in (1, 2, 3)] + [
        {"mode": "onto_P", "mean_norm": v} for v in (1.0, 1.1, 1.05)
    ]
    out = ex.trend_checks([1, 2, 4, 1, 2, 4], rows, 0.8, 0.25)
    assert out["spearman_off_subspace"] == pytest.approx(1.0)
    assert out["on_subspace_variation"] == pytest.approx(0.1)
    assert out["off_subspace_trend"] and out["on_subspace_flat"]


def test_rotation_check_small():
    rows, summary = ex.run_rotation_check(d=10, l=3, m=6, steps=50, n_test=10)
    assert len(rows) == 10
    assert summary["checks"]["rotation_equivariance"]


def test_pca_runner_on_low_rank():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((60, 3)) @ rng.standard_normal((3, 12))
    _, rows, summary = ex.run_pca(x, targets=(0.999999,))
    assert summary["components_for"]["0.999999"] == 3
    assert rows[-1]["cumulative_variance"] == 1.0


def test_unknown_subspace_kind():
    with pytest.raises(ValueError):
        ex.build_subspace("curved", 4, 1, None)
