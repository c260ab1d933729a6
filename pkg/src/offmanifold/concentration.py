"""Monte Carlo checks of the Gaussian tail bounds used by the off-subspace theory.

Each lemma is an event on freshly drawn Gaussian vectors together with a
proven upper bound on its probability.  :func:`test_lemma` estimates the
event frequency and compares it with the bound plus a binomial slack.

=====================  ==========================================  ===========================
lemma_id               event                                       bound
=====================  ==========================================  ===========================
norm_lower             ||w||^2 <= sigma^2 n / 2                    e^{-n/16}
sum_norm_lower         ||sum_{i<=m} w_i||^2 <= m sigma^2 n / 2     e^{-n/16}
norm_upper             ||w||^2 >= 2 sigma^2 n                      e^{-n/16}
sum_norm_upper         ||sum_{i<=m} w_i||^2 >= 2 m sigma^2 n       e^{-n/16}
inner_fixed            |<u, v>| >= ||u|| t,  v ~ N(0, sigma^2 I)   2 e^{-t^2 / 2 sigma^2}
inner_two_gaussian     |<u, v>| >= sigma1 sqrt(2n) t               e^{-n/16} + 2 e^{-t^2 / 2 sigma2^2}
=====================  ==========================================  ===========================
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammainc

from . import _jsonio
from .geometry import as_rng

LEMMAS = (
    "norm_lower",
    "sum_norm_lower",
    "norm_upper",
    "sum_norm_upper",
    "inner_fixed",
    "inner_two_gaussian",
)

# Upper limit on Gaussian draws held in memory at once.
_CHUNK_DRAWS = 1 << 22


@dataclass
class TailTestResult:
    lemma_id: str
    n: int
    trials: int
    empirical_freq: float
    bound: float
    m: int = 1
    sigma1: float = 1.0
    sigma2: float = float("nan")
    t: float = float("nan")
    hits: int = field(default=0, repr=False)

    @property
    def slack(self) -> float:
        return binomial_slack(self.bound, self.trials)

    @property
    def passed(self) -> bool:
        return self.empirical_freq <= self.bound + self.slack

    def row(self):
        return [
            self.lemma_id,
            self.n,
            self.m,
            _jsonio.fmt_float(self.sigma1),
            _jsonio.fmt_float(self.sigma2),
            _jsonio.fmt_float(self.t),
            self.trials,
            _jsonio.fmt_float(self.empirical_freq),
            _jsonio.fmt_float(self.bound),
            _jsonio.fmt_float(self.slack),
            "true" if self.passed else "false",
        ]


CSV_HEADER = ["lemma", "n", "m", "sigma1", "sigma2", "t", "trials", "freq", "bound", "slack", "passed"]


def binomial_slack(bound: float, trials: int) -> float:
    """3 sqrt(b (1 - b) / trials) + 10 / trials, with b clipped to [0, 1]."""
    b = min(max(bound, 0.0), 1.0)
    return 3.0 * math.sqrt(b * (1.0 - b) / trials) + 10.0 / trials


def lemma_bound(lemma_id, n, sigma=1.0, sigma2=None, t=None):
    if lemma_id in ("norm_lower", "sum_norm_lower", "norm_upper", "sum_norm_upper"):
        return math.exp(-n / 16.0)
    if lemma_id == "inner_fixed":
        return 2.0 * math.exp(-(t**2) / (2.0 * sigma**2))
    if lemma_id == "inner_two_gaussian":
        return math.exp(-n / 16.0) + 2.0 * math.exp(-(t**2) / (2.0 * sigma2**2))
    raise ValueError(f"unknown lemma {lemma_id!r}")


def _chunks(trials, per_trial):
    size = max(1, _CHUNK_DRAWS // max(per_trial, 1))
    done = 0
    while done < trials:
        c = min(size, trials - done)
        yield c
        done += c


def _count_norm_event(rng, trials, n, m, sigma, lower, explicit_sum=False):
    """Trials where ||sum of m Gaussian n-vectors||^2 falls below m sigma^2 n/2 (lower) or above 2 m sigma^2 n.

    The sum of m independent N(0, sigma^2 I) vectors is exactly N(0, m sigma^2 I),
    so by default it is drawn in one go; ``explicit_sum`` draws every summand.
    """
    thresh = (0.5 if lower else 2.0) * m * sigma**2 * n
    hits = 0
    for c in _chunks(trials, m * n if explicit_sum else n):
        if explicit_sum:
            s = (rng.normal((c, m, n)) * sigma).sum(axis=1)
        else:
            s = rng.normal((c, n)) * (sigma * math.sqrt(m))
        sq = np.einsum("ij,ij->i", s, s)
        hits += int(np.count_nonzero(sq <= thresh if lower else sq >= thresh))
    return hits


def test_lemma(lemma_id: str, params: dict, trials: int, rng, explicit_sum: bool = False) -> TailTestResult:
    """Estimate one lemma's event frequency over ``trials`` independent draws.

    ``params`` keys: ``n`` always; ``sigma`` (or ``sigma1``/``sigma2`` for
    inner_two_gaussian); ``m`` for the sum lemmas; ``t`` for the inner-product
    lemmas; optional fixed ``u`` for inner_fixed (drawn once otherwise).
    ``explicit_sum`` makes the sum lemmas add up all m summands instead of
    sampling their exact joint law.
    """
    if lemma_id not in LEMMAS:
        raise ValueError(f"unknown lemma {lemma_id!r}")
    if trials < 1000:
        raise ValueError("trials must be >= 1000")
    params = dict(params)
    rng = as_rng(rng)
    if "n" not in params:
        raise ValueError(f"{lemma_id} needs parameter 'n'")
    n = int(params["n"])
    if n < 1:
        raise ValueError("n must be positive")

    if lemma_id in ("sum_norm_lower", "sum_norm_upper") and "m" not in params:
        raise ValueError(f"{lemma_id} needs parameter 'm'")
    if lemma_id in ("inner_fixed", "inner_two_gaussian") and "t" not in params:
        raise ValueError(f"{lemma_id} needs parameter 't'")

    if lemma_id == "inner_two_gaussian":
        s1 = float(params.get("sigma1", params.get("sigma", 1.0)))
        s2 = float(params.get("sigma2", params.get("sigma", 1.0)))
    else:
        s1 = float(params.get("sigma", params.get("sigma1", 1.0)))
        s2 = float("nan")
    t = float(params["t"]) if "t" in params else float("nan")
    m = int(params.get("m", 1)) if lemma_id.startswith("sum_") else 1
    if not (s1 > 0 and (math.isnan(s2) or s2 > 0) and m >= 1 and (math.isnan(t) or t > 0)):
        raise ValueError(f"parameters must be positive: {params}")

    if lemma_id in ("norm_lower", "sum_norm_lower"):
        hits = _count_norm_event(rng, trials, n, m, s1, True, explicit_sum)
    elif lemma_id in ("norm_upper", "sum_norm_upper"):
        hits = _count_norm_event(rng, trials, n, m, s1, False, explicit_sum)
    elif lemma_id == "inner_fixed":
        u = params.get("u")
        u = rng.child("u").normal(n) if u is None else np.asarray(u, dtype=np.float64)
        if u.shape != (n,):
            raise ValueError("u must be an n-vector")
        thresh = np.linalg.norm(u) * t
        hits = 0
        stream = rng.child("v")
        for c in _chunks(trials, n):
            v = stream.normal((c, n)) * s1
            hits += int(np.count_nonzero(np.abs(v @ u) >= thresh))
    else:
        thresh = s1 * math.sqrt(2.0 * n) * t
        hits = 0
        for c in _chunks(trials, 2 * n):
            uv = rng.normal((c, 2, n))
            inner = np.einsum("ij,ij->i", uv[:, 0] * s1, uv[:, 1] * s2)
            hits += int(np.count_nonzero(np.abs(inner) >= thresh))

    bound = lemma_bound(lemma_id, n, s1, s2, t)
    return TailTestResult(lemma_id, n, trials, hits / trials, bound, m, s1, s2, t, hits)


test_lemma.__test__ = False  # keep pytest from collecting the library function


def sweep_lemma(lemma_id: str, param_grid, trials: int, rng, explicit_sum: bool = False):
    """Run :func:`test_lemma` at every grid point, each on its own child stream."""
    grid = list(param_grid)
    if not grid:
        raise ValueError("empty parameter grid")
    rng = as_rng(rng)
    out = []
    for idx, point in enumerate(grid):
        try:
            out.append(test_lemma(lemma_id, point, trials, rng.child(f"{lemma_id}/{idx}"), explicit_sum))
        except ValueError as exc:
            raise ValueError(f"{lemma_id} at grid point {idx} {point}: {exc}") from exc
    return out


def default_grid(lemma_id, ns=(16, 64, 256), ms=(1, 8, 32), ts=(1.0, 2.0, 4.0), sigmas=(0.1, 1.0)):
    """The parameters each lemma actually depends on, crossed over the given values."""
    grid = []
    for n in ns:
        for s in sigmas:
            if lemma_id in ("norm_lower", "norm_upper"):
                grid.append({"n": n, "sigma": s})
            elif lemma_id in ("sum_norm_lower", "sum_norm_upper"):
                grid.extend({"n": n, "m": m, "sigma": s} for m in ms)
            elif lemma_id == "inner_fixed":
                grid.extend({"n": n, "sigma": s, "t": t} for t in ts)
            elif lemma_id == "inner_two_gaussian":
                grid.extend({"n": n, "sigma1": s, "sigma2": s2, "t": t} for s2 in sigmas for t in ts)
            else:
                raise ValueError(f"unknown lemma {lemma_id!r}")
    return grid


def write_results_csv(results, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in results:
            w.writerow(r.row())


# Exact reference probabilities, used only to cross-check the samplers.


def chi2_cdf(x, k):
    """P(chi^2_k <= x) via the regularised lower incomplete gamma function."""
    if x <= 0:
        return 0.0
    return float(gammainc(k / 2.0, x / 2.0))


def normal_cdf(x):
    return 0.5 * (1.0 + math.erf(x / math.sqrt(2.0)))


def exact_probability(lemma_id, n, m=1, sigma=1.0, t=None):
    """Exact event probability where a closed form exists (not inner_two_gaussian)."""
    if lemma_id in ("norm_lower", "sum_norm_lower"):
        return chi2_cdf(n / 2.0, n)
    if lemma_id in ("norm_upper", "sum_norm_upper"):
        return 1.0 - chi2_cdf(2.0 * n, n)
    if lemma_id == "inner_fixed":
        return 2.0 * normal_cdf(-t / sigma)
    raise ValueError(f"no closed form for {lemma_id!r}")
