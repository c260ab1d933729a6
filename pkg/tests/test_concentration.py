import math

import numpy as np
import pytest

from offmanifold import concentration as conc
from offmanifold.geometry import SeededRng


def test_binomial_slack_formula():
    assert conc.binomial_slack(0.25, 10_000) == pytest.approx(3 * math.sqrt(0.25 * 0.75 / 10_000) + 1e-3)
    # Bounds above 1 are vacuous and clipped before the variance term.
    assert conc.binomial_slack(2.5, 1000) == pytest.approx(10 / 1000)


@pytest.mark.parametrize(
    "lemma,kw,expected",
    [
        ("norm_lower", dict(n=32), math.exp(-2)),
        ("sum_norm_upper", dict(n=16), math.exp(-1)),
        ("inner_fixed", dict(n=5, sigma=2.0, t=2.0), 2 * math.exp(-0.5)),
        ("inner_two_gaussian", dict(n=16, sigma=1.0, sigma2=1.0, t=1.0), math.exp(-1) + 2 * math.exp(-0.5)),
    ],
)
def test_lemma_bounds(lemma, kw, expected):
    assert conc.lemma_bound(lemma, **kw) == pytest.approx(expected)


def test_unknown_lemma():
    with pytest.raises(ValueError):
        conc.lemma_bound("nope", 4)
    with pytest.raises(ValueError):
        conc.test_lemma("nope", {"n": 4}, 1000, 0)


@pytest.mark.parametrize(
    "lemma,params",
    [("norm_lower", {}), ("sum_norm_lower", {"n": 4}), ("inner_fixed", {"n": 4}), ("norm_upper", {"n": 0}),
     ("norm_upper", {"n": 4, "sigma": -1.0})],
)
def test_missing_or_bad_parameters(lemma, params):
    with pytest.raises(ValueError):
        conc.test_lemma(lemma, params, 1000, 0)


def test_too_few_trials():
    with pytest.raises(ValueError, match="1000"):
        conc.test_lemma("norm_lower", {"n": 4}, 999, 0)


def test_results_are_seeded():
    a = conc.test_lemma("inner_two_gaussian", {"n": 8, "sigma1": 1.0, "sigma2": 0.5, "t": 1.0}, 5000, SeededRng(3))
    b = conc.test_lemma("inner_two_gaussian", {"n": 8, "sigma1": 1.0, "sigma2": 0.5, "t": 1.0}, 5000, SeededRng(3))
    assert a.hits == b.hits


def test_single_and_sum_lemma_agree_for_one_summand():
    a = conc.test_lemma("norm_lower", {"n": 8, "sigma": 1.0}, 4000, SeededRng(5))
    b = conc.test_lemma("sum_norm_lower", {"n": 8, "m": 1, "sigma": 1.0}, 4000, SeededRng(5))
    assert a.hits == b.hits


def test_event_frequency_is_scale_free():
    """The norm events compare against sigma^2 n, so sigma only rescales both sides."""
    a = conc.test_lemma("norm_upper", {"n": 4, "sigma": 1.0}, 20_000, SeededRng(9))
    b = conc.test_lemma("norm_upper", {"n": 4, "sigma": 0.1}, 20_000, SeededRng(9))
    assert a.hits == b.hits


def test_inner_fixed_accepts_given_vector():
    u = np.ones(6)
    r = conc.test_lemma("inner_fixed", {"n": 6, "t": 1.0, "u": u}, 20_000, SeededRng(2))
    exact = conc.exact_probability("inner_fixed", 6, t=1.0)
    assert abs(r.empirical_freq - exact) < 4 * math.sqrt(exact * (1 - exact) / 20_000)
    with pytest.raises(ValueError):
        conc.test_lemma("inner_fixed", {"n": 6, "t": 1.0, "u": np.ones(5)}, 1000, 0)


def test_sweep_names_the_bad_grid_point():
    with pytest.raises(ValueError, match="grid point 1"):
        conc.sweep_lemma("norm_lower", [{"n": 4}, {"n": -1}], 1000, 0)
    with pytest.raises(ValueError, match="empty"):
        conc.sweep_lemma("norm_lower", [], 1000, 0)


def test_default_grid_sizes():
    assert len(conc.default_grid("norm_lower")) == 6
    assert len(conc.default_grid("sum_norm_upper")) == 18
    assert len(conc.default_grid("inner_fixed")) == 18
    assert len(conc.default_grid("inner_two_gaussian")) == 36


def test_chi2_oracle_values():
    # P(chi2_2 <= x) = 1 - e^{-x/2}
    assert conc.chi2_cdf(3.0, 2) == pytest.approx(1 - math.exp(-1.5))
    assert conc.chi2_cdf(0.0, 5) == 0.0
    assert conc.normal_cdf(0.0) == 0.5
    with pytest.raises(ValueError):
        conc.exact_probability("inner_two_gaussian", 4)


def test_csv_output(tmp_path):
    res = conc.sweep_lemma("norm_upper", [{"n": 4}, {"n": 8}], 1000, 0)
    path = tmp_path / "c.csv"
    conc.write_results_csv(res, path)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(conc.CSV_HEADER)
    assert len(lines) == 3 and lines[1].startswith("norm_upper,4,1,")


@pytest.mark.parametrize("lemma", ["sum_norm_lower", "sum_norm_upper"])
def test_direct_sum_sampler_agrees_with_explicit_summands(lemma):
    params = {"n": 4, "m": 5, "sigma": 0.7}
    a = conc.test_lemma(lemma, params, 40_000, SeededRng(1))
    b = conc.test_lemma(lemma, params, 40_000, SeededRng(2), explicit_sum=True)
    p = conc.exact_probability(lemma, 4, 5, 0.7)
    margin = 4 * math.sqrt(p * (1 - p) / 40_000)
    assert abs(a.empirical_freq - p) < margin
    assert abs(b.empirical_freq - p) < margin
