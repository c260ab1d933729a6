import math

import numpy as np
import pytest

from offmanifold import bound_formulas, forward, gradient_report, init_network, pgd_attack, universal_perturbation
from offmanifold.attacks import (
    MODES,
    flip_failure_probability,
    grad_lower_bound,
    grad_upper_bound,
    grad_upper_bound_reg,
    perturbation_condition,
    perturbation_direction,
    perturbation_norm_bound,
    pgd_attack_batch,
)
from offmanifold.data import random_on_subspace
from offmanifold.geometry import make_axis_subspace, project, random_subspace


def test_bound_values_by_hand():
    assert grad_lower_bound(8, 4, 16, 32) == pytest.approx(math.sqrt(32 / 1024))
    assert grad_upper_bound(8, 4, 16, 0.5) == pytest.approx(0.5 * 2.0)
    assert grad_upper_bound_reg(8, 4, 16, 32, 0.1, 0.0, 100) == pytest.approx(math.sqrt(64 / 512))
    assert grad_upper_bound_reg(8, 4, 16, 32, 0.1, 1.0, 2) == pytest.approx(0.81 * math.sqrt(64 / 512))
    assert perturbation_norm_bound(-0.5, 2, 8, 4, 32) == pytest.approx(8 * math.sqrt(2) * 0.5 * 2 * 2)
    assert flip_failure_probability(16, 1, 4) == pytest.approx(5 * (math.exp(-1) + 0.5))


def test_condition_threshold():
    # 32 * 7 * log(64 * 4096) ~ 2795
    need = 32 * 7 * math.log(64 * 4096)
    assert perturbation_condition(math.ceil(need), 8, 4096)
    assert not perturbation_condition(math.floor(need), 8, 4096)
    assert perturbation_condition(1, 1, 10)


def test_bound_formulas_keys_and_errors():
    out = bound_formulas(3, 1, 4, 8, 16, 0.25, 0.1, 0.0, 10, 0.2)
    assert set(out) == {"grad_lower", "grad_upper", "grad_upper_reg", "z_norm_bound", "condition_ell_ok"}
    with pytest.raises(ValueError):
        bound_formulas(3, 0, 4, 8, 16, 0.25, 0.1, 0.0, 10, 0.2)
    with pytest.raises(ValueError):
        bound_formulas(3, 1, 4, 0, 16, 0.25, 0.1, 0.0, 10, 0.2)


def _flip_setup(seed):
    d, l, m = 4096, 3968, 8
    sub = make_axis_subspace(d, l)
    net = init_network(d, m, None, seed)
    for attempt in range(50):
        x0 = random_on_subspace(sub, math.sqrt(d), attempt + 1000 * seed)
        try:
            return net, x0, sub, universal_perturbation(net, x0, sub)
        except ValueError:
            continue
    raise AssertionError("no usable x0")


def test_universal_perturbation_lives_off_subspace():
    net, x0, sub, rep = _flip_setup(1)
    assert np.linalg.norm(project(rep.z, sub, "P")) <= 1e-12 * rep.z_norm
    assert rep.z_norm == pytest.approx(np.linalg.norm(rep.z))
    assert rep.condition_met
    assert rep.output_before == pytest.approx(forward(net, x0))


def test_universal_perturbation_alpha_formula():
    net, x0, sub, rep = _flip_setup(2)
    d, l, m = 4096, 3968, 8
    assert rep.alpha == pytest.approx(8 * math.sqrt(m) * d * abs(rep.output_before) / (l * rep.k_y0))
    direction = perturbation_direction(net, sub)
    np.testing.assert_allclose(rep.z, rep.y0 * rep.alpha * direction)


def test_universal_perturbation_flips_in_the_conforming_regime():
    net, x0, sub, rep = _flip_setup(3)
    assert rep.sign_flipped and rep.strong_flip
    assert rep.z_norm <= rep.z_norm_bound


def test_universal_perturbation_is_universal():
    """One direction serves every on-subspace point with the same prediction."""
    net, x0, sub, rep = _flip_setup(4)
    d = net.d
    direction = perturbation_direction(net, sub)
    for s in range(5):
        x = random_on_subspace(sub, math.sqrt(d), 50 + s)
        n = forward(net, x)
        try:
            r = universal_perturbation(net, x, sub)
        except ValueError:
            continue
        cos = abs(r.z @ direction) / (np.linalg.norm(r.z) * np.linalg.norm(direction))
        assert cos == pytest.approx(1.0)
        assert np.sign(forward(net, x + r.z)) != np.sign(n)


def test_universal_perturbation_preconditions():
    sub = make_axis_subspace(6, 2)
    net = init_network(6, 4, None, 0)
    with pytest.raises(ValueError, match="subspace"):
        universal_perturbation(net, np.ones(6), sub)
    with pytest.raises(ValueError, match="no sign"):
        universal_perturbation(net, np.zeros(6), sub)


def test_gradient_report_matches_direct_computation():
    sub = random_subspace(20, 8, 1)
    net = init_network(20, 30, None, 2)
    x0 = random_on_subspace(sub, 3.0, 3)
    rep = gradient_report(net, x0, sub, {"eta": 0.1, "lam": 0.5, "steps": 3})
    k = int(np.sum(net.weights_w @ x0 >= 0))
    g = ((net.weights_w @ x0 >= 0) * net.signs_u) @ net.weights_w
    assert rep.k == k
    assert rep.perp_grad_norm == pytest.approx(np.linalg.norm(project(g, sub)))
    assert rep.lower_bound == pytest.approx(math.sqrt(k * 8 / (2 * 30 * 20)))
    assert rep.reg_upper_bound == pytest.approx(0.95**3 * math.sqrt(2 * k * 8 / (30 * 20)))


def test_gradient_report_dimension_check():
    sub = make_axis_subspace(5, 2)
    with pytest.raises(ValueError):
        gradient_report(init_network(5, 3), np.ones(4), sub)


@pytest.mark.parametrize("mode", MODES)
def test_pgd_flips_and_respects_mode(mode):
    sub = random_subspace(16, 6, 5)
    net = init_network(16, 20, None, 6)
    x0 = random_on_subspace(sub, 4.0, 7)
    y0 = int(np.sign(forward(net, x0)))
    res = pgd_attack(net, x0, y0, mode, sub, step=0.01, max_iters=20_000)
    assert res.flipped
    assert y0 * forward(net, x0 + res.perturbation) <= 0
    if mode == "onto_P":
        assert np.linalg.norm(project(res.perturbation, sub)) <= 1e-10 * res.norm
    if mode == "onto_P_perp":
        assert np.linalg.norm(project(res.perturbation, sub, "P")) <= 1e-10 * res.norm
    assert res.norm <= 0.01 * res.iterations_used + 1e-12


def test_pgd_default_step_and_cap():
    sub = random_subspace(16, 6, 5)
    net = init_network(16, 20, None, 6)
    x0 = random_on_subspace(sub, 4.0, 7)
    y0 = int(np.sign(forward(net, x0)))
    res = pgd_attack(net, x0, y0, "unprojected", sub, max_iters=3)
    assert res.iterations_used <= 3
    if not res.flipped:
        assert res.norm == pytest.approx(3 * 4.0 / 1000)


def test_pgd_zero_gradient_gives_up():
    sub = make_axis_subspace(3, 1)
    # Every neuron is dead along P-perp: w has no e_3 component, so the projected gradient is zero.
    from offmanifold import TwoLayerNet

    net = TwoLayerNet(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]), np.array([1, -1]), 1.0)
    x0 = np.array([1.0, 0.5, 0.0])
    res = pgd_attack(net, x0, 1, "onto_P_perp", sub)
    assert not res.flipped and res.norm == 0.0


def test_pgd_batch_matches_single_runs():
    sub = random_subspace(10, 3, 8)
    net = init_network(10, 12, None, 9)
    x = random_on_subspace(sub, 3.0, 10, 4)
    y = np.sign(forward(net, x)).astype(int)
    batch = pgd_attack_batch(net, x, y, "onto_P_perp", sub, step=0.05, max_iters=5000)
    for i in range(4):
        one = pgd_attack(net, x[i], y[i], "onto_P_perp", sub, step=0.05, max_iters=5000)
        assert one.flipped == batch.flipped[i]
        assert one.iterations_used == batch.iterations_used[i]
        np.testing.assert_allclose(one.perturbation, batch.perturbations[i], rtol=1e-10, atol=1e-13)


def test_pgd_input_validation():
    sub = make_axis_subspace(4, 1)
    net = init_network(4, 3, None, 0)
    x0 = np.array([1.0, 2.0, 3.0, 0.0])
    y0 = int(np.sign(forward(net, x0)))
    with pytest.raises(ValueError, match="mode"):
        pgd_attack(net, x0, y0, "sideways", sub)
    with pytest.raises(ValueError, match="sign"):
        pgd_attack(net, x0, -y0, "unprojected", sub)
