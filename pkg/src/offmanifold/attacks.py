"""Off-subspace attacks and the closed-form bounds they are compared against.

* :func:`universal_perturbation` builds the fixed P-perp direction
  ``-sum_i sign(u_i) Pi_Perp(w_i)``, scaled by y0 * alpha, that should flip
  the prediction at any point of P.
* :func:`gradient_report` measures ``||Pi_Perp(dN/dx)||`` and evaluates the
  lower and upper bounds for it.
* :func:`pgd_attack` walks along the normalised input gradient, optionally
  projected onto P or P-perp, until the sign of N changes.

All logarithms are natural.
"""

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .geometry import Subspace, on_subspace_residual, project
from .network import TwoLayerNet, active_split, forward, input_gradient
from .tolerances import ON_SUBSPACE_RTOL

MODES = ("unprojected", "onto_P", "onto_P_perp")


# ---------------------------------------------------------------- bounds


def grad_lower_bound(k, l, m, d):
    """sqrt(k l / (2 m d)): lower bound on ||Pi_Perp(dN/dx)|| at Kaiming init."""
    _need_positive(m=m, d=d)
    return math.sqrt(k * l / (2.0 * m * d))


def grad_upper_bound(k, l, m, beta):
    """beta * sqrt(2 k l / m) for init N(0, beta^2 I)."""
    _need_positive(m=m)
    return beta * math.sqrt(2.0 * k * l / m)


def grad_upper_bound_reg(k, l, m, d, eta, lam, steps):
    """(1 - eta lambda)^T sqrt(2 k l / (m d)) after T regularized steps from Kaiming init."""
    _need_positive(m=m, d=d)
    return (1.0 - eta * lam) ** steps * math.sqrt(2.0 * k * l / (m * d))


def perturbation_norm_bound(n_x0, k_y0, l, m, d):
    """8 sqrt(2) |N(x0)| (m / k_y0) sqrt(d / l)."""
    if k_y0 <= 0:
        raise ValueError("k_y0 = 0: the perturbation is undefined")
    _need_positive(m=m, d=d, l=l)
    return 8.0 * math.sqrt(2.0) * abs(n_x0) * (m / k_y0) * math.sqrt(d / l)


def perturbation_condition(l, m, d):
    """Whether l >= 32 (m - 1) log(m^2 d)."""
    return l >= 32.0 * (m - 1) * math.log(m * m * d)


def flip_failure_probability(l, m, d):
    """5 (m e^{-l/16} + d^{-1/2}): failure probability attached to the flip guarantee."""
    return 5.0 * (m * math.exp(-l / 16.0) + d**-0.5)


def bound_formulas(k, k_y0, l, m, d, beta, eta, lam, steps, n_x0):
    """All closed-form quantities for one parameter point."""
    if m <= 0:
        raise ValueError("m must be positive")
    return {
        "grad_lower": grad_lower_bound(k, l, m, d),
        "grad_upper": grad_upper_bound(k, l, m, beta),
        "grad_upper_reg": grad_upper_bound_reg(k, l, m, d, eta, lam, steps),
        "z_norm_bound": perturbation_norm_bound(n_x0, k_y0, l, m, d),
        "condition_ell_ok": perturbation_condition(l, m, d),
    }


def _need_positive(**kw):
    for name, v in kw.items():
        if not v > 0:
            raise ValueError(f"{name} must be positive, got {v}")


def _require_on_subspace(x0, subspace):
    if float(on_subspace_residual(x0, subspace)[0]) > ON_SUBSPACE_RTOL:
        raise ValueError("x0 does not lie on the data subspace")


# ---------------------------------------------------------------- universal perturbation


@dataclass
class PerturbationReport:
    z: np.ndarray
    alpha: float
    z_norm: float
    z_norm_bound: float
    output_before: float
    output_after: float
    sign_flipped: bool
    k_y0: int
    guaranteed_gain: float
    condition_met: bool
    y0: int
    failure_probability: float

    @property
    def strong_flip(self) -> bool:
        """y0 * N(x0 + z) <= -|N(x0)|, the conclusion of the proof."""
        return self.y0 * self.output_after <= -abs(self.output_before)

    def to_dict(self):
        out = asdict(self)
        out["strong_flip"] = self.strong_flip
        return out


def perturbation_direction(net: TwoLayerNet, subspace: Subspace) -> np.ndarray:
    """sum_{u_i<0} Pi_Perp(w_i) - sum_{u_i>0} Pi_Perp(w_i); independent of x0."""
    w_hat = project(net.weights_w, subspace, "perp")
    return -(net.signs.astype(np.float64) @ w_hat)


def universal_perturbation(net: TwoLayerNet, x0, subspace: Subspace) -> PerturbationReport:
    """z = y0 * alpha * direction with alpha = 8 sqrt(m) d |N(x0)| / (l k_y0).

    A missing flip is reported (``sign_flipped=False``), not raised.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    _require_on_subspace(x0, subspace)
    d, m, l = net.d, net.m, subspace.codim
    n0 = forward(net, x0)
    if n0 == 0.0:
        raise ValueError("N(x0) = 0: the prediction has no sign")
    y0 = 1 if n0 > 0 else -1
    k_y0 = active_split(net, x0, y0).k_y0
    if k_y0 == 0:
        raise ValueError("k_y0 = 0: no active neuron opposes the prediction")
    alpha = 8.0 * math.sqrt(m) * d * abs(n0) / (l * k_y0)
    z = y0 * alpha * perturbation_direction(net, subspace)
    n1 = forward(net, x0 + z)
    log_term = math.log(m * m * d)
    gain = alpha * l / (2.0 * d) - (alpha / d) * math.sqrt(2.0 * l * (m - 1) * log_term)
    return PerturbationReport(
        z=z,
        alpha=alpha,
        z_norm=float(np.linalg.norm(z)),
        z_norm_bound=perturbation_norm_bound(n0, k_y0, l, m, d),
        output_before=n0,
        output_after=n1,
        sign_flipped=bool(np.sign(n1) != np.sign(n0)),
        k_y0=k_y0,
        guaranteed_gain=gain,
        condition_met=perturbation_condition(l, m, d),
        y0=y0,
        failure_probability=flip_failure_probability(l, m, d),
    )


# ---------------------------------------------------------------- gradient report


@dataclass
class GradientReport:
    full_grad_norm: float
    perp_grad_norm: float
    k: int
    l: int
    m: int
    d: int
    lower_bound: float
    upper_bound: float
    reg_upper_bound: Optional[float] = None

    @property
    def within_bounds(self) -> bool:
        return self.lower_bound <= self.perp_grad_norm <= self.upper_bound


def gradient_report(net: TwoLayerNet, x0, subspace: Subspace, training_meta: dict = None) -> GradientReport:
    """Measured input-gradient norms at x0 next to their closed-form bounds.

    ``training_meta`` may carry ``beta`` (overrides ``net.beta``) and
    ``eta``, ``lam``, ``steps`` to populate the regularized bound.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape != (net.d,):
        raise ValueError(f"dimension mismatch: expected a {net.d}-vector")
    _require_on_subspace(x0, subspace)
    meta = dict(training_meta or {})
    d, m, l = net.d, net.m, subspace.codim
    g = input_gradient(net, x0)
    k = int(np.count_nonzero(net.weights_w @ x0 >= 0))
    beta = meta.get("beta", net.beta)
    reg = None
    if all(key in meta for key in ("eta", "lam", "steps")):
        reg = grad_upper_bound_reg(k, l, m, d, meta["eta"], meta["lam"], meta["steps"])
    return GradientReport(
        full_grad_norm=float(np.linalg.norm(g)),
        perp_grad_norm=float(np.linalg.norm(project(g, subspace, "perp"))),
        k=k,
        l=l,
        m=m,
        d=d,
        lower_bound=grad_lower_bound(k, l, m, d),
        upper_bound=grad_upper_bound(k, l, m, beta),
        reg_upper_bound=reg,
    )


# ---------------------------------------------------------------- PGD


@dataclass
class PgdResult:
    perturbation: np.ndarray
    flipped: bool
    iterations_used: int

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.perturbation))


def _project_mode(g, mode, subspace):
    if mode == "unprojected":
        return g
    if mode == "onto_P":
        return project(g, subspace, "P")
    if mode == "onto_P_perp":
        return project(g, subspace, "perp")
    raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def pgd_attack(net: TwoLayerNet, x0, y0: int, mode: str, subspace: Subspace, step: float = None, max_iters: int = 10_000) -> PgdResult:
    """Fixed-length normalised gradient steps against the label until y0 * N <= 0.

    ``step`` defaults to ||x0|| / 1000.  A vanishing (projected) gradient
    ends the attack with ``flipped=False``.
    """
    batch = pgd_attack_batch(net, np.asarray(x0, dtype=np.float64)[None, :], [y0], mode, subspace, step, max_iters)
    return PgdResult(batch.perturbations[0], bool(batch.flipped[0]), int(batch.iterations_used[0]))


@dataclass
class PgdBatchResult:
    perturbations: np.ndarray
    flipped: np.ndarray
    iterations_used: np.ndarray

    @property
    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.perturbations, axis=1)


def pgd_attack_batch(net, x0, y0, mode, subspace, step=None, max_iters=10_000) -> PgdBatchResult:
    """:func:`pgd_attack` run on every row of ``x0`` at once; each row stops independently."""
    x0 = np.atleast_2d(np.asarray(x0, dtype=np.float64))
    y0 = np.asarray(y0, dtype=np.float64).reshape(-1)
    if x0.shape[1] != net.d or y0.shape[0] != x0.shape[0]:
        raise ValueError("x0 must be (n, d) with one label per row")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    out0 = forward(net, x0)
    if not np.all(np.sign(out0) == y0):
        raise ValueError("y0 must equal sign(N(x0)) for every point")
    if step is None:
        step = np.linalg.norm(x0, axis=1) / 1000.0
    step = np.broadcast_to(np.asarray(step, dtype=np.float64), (x0.shape[0],))

    n = x0.shape[0]
    delta = np.zeros_like(x0)
    flipped = np.zeros(n, dtype=bool)
    used = np.zeros(n, dtype=np.int64)
    live = np.arange(n)
    for it in range(1, max_iters + 1):
        if live.size == 0:
            break
        g = -y0[live, None] * input_gradient(net, x0[live] + delta[live])
        g = _project_mode(g, mode, subspace)
        gn = np.linalg.norm(g, axis=1)
        stuck = gn == 0.0
        if np.any(stuck):
            live = live[~stuck]
            g, gn = g[~stuck], gn[~stuck]
            if live.size == 0:
                break
        delta[live] += (step[live] / gn)[:, None] * g
        used[live] = it
        now = y0[live] * forward(net, x0[live] + delta[live]) <= 0.0
        flipped[live[now]] = True
        live = live[~now]
    return PgdBatchResult(delta, flipped, used)
