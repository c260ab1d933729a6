import math

import numpy as np
import pytest

from offmanifold import TrainConfig, TrainTrace, forward, init_network, param_gradient, train
from offmanifold.data import diagonal_subspace, generate_grid_dataset
from offmanifold.geometry import make_axis_subspace, project
from offmanifold.training import TrainingDiverged, margin_growth_report


def test_zero_steps_gives_single_row(small_setup):
    sub, net, data = small_setup
    out, trace = train(net, data, sub, TrainConfig(max_steps=0))
    assert len(trace) == 1 and trace.step == [0]
    assert np.array_equal(out.weights_w, net.weights_w)


def test_one_step_matches_summed_param_gradient(small_setup):
    sub, net, data = small_setup
    eta = 0.1
    out, _ = train(net, data, sub, TrainConfig(step_size=eta, max_steps=1))
    grad = sum(param_gradient(net, x, y) for x, y in zip(data.points, data.labels))
    np.testing.assert_allclose(out.weights_w, net.weights_w - eta * grad, rtol=1e-13, atol=1e-15)


def test_average_loss_divides_the_step(small_setup):
    sub, net, data = small_setup
    a, _ = train(net, data, sub, TrainConfig(step_size=0.1, max_steps=1))
    b, _ = train(net, data, sub, TrainConfig(step_size=0.1 * len(data), max_steps=1, average_loss=True))
    np.testing.assert_allclose(a.weights_w, b.weights_w, rtol=1e-12)


def test_regularized_step(small_setup):
    sub, net, data = small_setup
    eta, lam = 0.1, 0.5
    out, _ = train(net, data, sub, TrainConfig(step_size=eta, reg_lambda=lam, max_steps=1))
    grad = sum(param_gradient(net, x, y) for x, y in zip(data.points, data.labels))
    np.testing.assert_allclose(out.weights_w, net.weights_w - eta * (grad + lam * net.weights_w), rtol=1e-13)


def test_off_subspace_weights_stay_frozen(small_setup):
    sub, net, data = small_setup
    out, trace = train(net, data, sub, TrainConfig(step_size=0.05, max_steps=300, batch_size=3))
    assert max(trace.freeze_residual) < 1e-12
    np.testing.assert_allclose(project(out.weights_w, sub), project(net.weights_w, sub), atol=1e-13)
    assert not np.allclose(out.weights_w, net.weights_w)


def test_decay_law_with_regularization(small_setup):
    sub, net, data = small_setup
    cfg = TrainConfig(step_size=0.05, reg_lambda=0.2, max_steps=200)
    out, trace = train(net, data, sub, cfg)
    assert trace.relative_residuals().max() < 1e-12
    np.testing.assert_allclose(
        project(out.weights_w, sub), cfg.decay**200 * project(net.weights_w, sub), rtol=1e-10, atol=1e-15
    )


def test_loss_decreases_and_margin_grows(small_setup):
    sub, net, data = small_setup
    _, trace = train(net, data, sub, TrainConfig(step_size=0.05, max_steps=500))
    assert trace.loss[-1] < trace.loss[0]
    assert trace.margin[-1] > trace.margin[0]


def test_target_margin_stops_early():
    sub = diagonal_subspace(3, 1)
    data = generate_grid_dataset("line7", sub, {"offset": 1.0, "labels": "sign"})
    net = init_network(3, 100, None, 0)
    _, trace = train(net, data, sub, TrainConfig(step_size=0.02, max_steps=50_000, target_margin=0.3))
    assert trace.margin[-1] >= 0.3
    assert trace.step[-1] < 50_000
    assert all(g < 0.3 for g in trace.margin[:-1])


def test_sgd_is_seeded(small_setup):
    sub, net, data = small_setup
    cfg = TrainConfig(step_size=0.05, max_steps=20, batch_size=2, seed=3)
    a, _ = train(net, data, sub, cfg)
    b, _ = train(net, data, sub, cfg)
    c, _ = train(net, data, sub, TrainConfig(step_size=0.05, max_steps=20, batch_size=2, seed=4))
    assert np.array_equal(a.weights_w, b.weights_w)
    assert not np.array_equal(a.weights_w, c.weights_w)


def test_trace_stride_keeps_last_step(small_setup):
    sub, net, data = small_setup
    _, trace = train(net, data, sub, TrainConfig(max_steps=25, trace_stride=10))
    assert trace.step == [0, 10, 20, 25]


def test_divergence_is_reported(small_setup):
    sub, net, data = small_setup
    # The logistic gradient is bounded, so only an absurd step pushes the loss past the ceiling.
    with pytest.raises(TrainingDiverged, match="step"):
        train(net, data, sub, TrainConfig(step_size=1e15, max_steps=50))


def test_off_subspace_training_data_rejected(small_setup):
    _, net, data = small_setup
    with pytest.raises(ValueError, match="off the subspace"):
        train(net, data.with_subspace(None), make_axis_subspace(12, 4), TrainConfig(max_steps=1))


@pytest.mark.parametrize(
    "kw", [dict(step_size=0), dict(reg_lambda=-1), dict(step_size=1, reg_lambda=1), dict(max_steps=-1),
           dict(batch_size=0), dict(trace_stride=0)]
)
def test_config_validation(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_trace_csv_round_trip(tmp_path, small_setup):
    sub, net, data = small_setup
    _, trace = train(net, data, sub, TrainConfig(max_steps=5))
    trace.write_csv(tmp_path / "t.csv")
    back = TrainTrace.read_csv(tmp_path / "t.csv")
    assert back.step == trace.step and back.loss == trace.loss and back.margin == trace.margin


def test_margin_growth_report_on_synthetic_trace():
    trace = TrainTrace()
    d = 3
    thr = math.log(d) ** 2
    for t in range(200):
        g = 0.02 * t if t < 100 else 2.0 + 0.0001 * (t - 100)
        trace.append(t, 1.0, g, 0.0, 0.0, 1.0)
    rep = margin_growth_report(trace, d)
    assert rep.threshold == pytest.approx(thr)
    assert rep.crossing_step == 61
    assert rep.plateau_ratio == pytest.approx(200.0)
    assert rep.plateau_step == 100


def test_margin_growth_report_without_crossing():
    trace = TrainTrace()
    for t in range(10):
        trace.append(t, 1.0, 0.01 * t, 0.0, 0.0, 1.0)
    rep = margin_growth_report(trace, 100)
    assert rep.crossing_step is None and math.isnan(rep.plateau_ratio)
    assert rep.summary()["crossing_step"] == "none"
