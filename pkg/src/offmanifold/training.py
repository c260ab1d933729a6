"""Gradient descent on the logistic loss, first layer only.

The update is ``w <- w - eta * (grad_data + lambda * w)``, where the data
term is summed over the batch (or averaged when ``average_loss`` is set).
Every recorded step also logs how far the off-subspace part of each weight
vector has drifted from ``(1 - eta*lambda)^t`` times its initial value; with
data on P that drift should stay at rounding level.
"""

import csv
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from . import _jsonio
from .data import LabeledDataset
from .geometry import SeededRng, Subspace, project
from .network import TwoLayerNet, logistic_derivative, logistic_loss
from .tolerances import LOSS_CEILING, ON_SUBSPACE_RTOL


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters for :func:`train`.

    step_size       eta > 0 (default 0.05)
    reg_lambda      L2 coefficient on the first layer, >= 0 (default 0)
    max_steps       T, number of updates (default 1000)
    target_margin   stop as soon as min_i y_i N(x_i) reaches this (default: off)
    batch_size      None for full-batch GD, else minibatch SGD without replacement
    seed            drives the SGD batch order (default 0)
    trace_stride    record every n-th step; the final step is always recorded (default 1)
    average_loss    average the data term over the batch instead of summing (default off)
    """

    step_size: float = 0.05
    reg_lambda: float = 0.0
    max_steps: int = 1000
    target_margin: Optional[float] = None
    batch_size: Optional[int] = None
    seed: int = 0
    trace_stride: int = 1
    average_loss: bool = False

    def __post_init__(self):
        if not self.step_size > 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if not self.reg_lambda >= 0:
            raise ValueError(f"reg_lambda must be >= 0, got {self.reg_lambda}")
        if self.reg_lambda > 0 and self.step_size * self.reg_lambda >= 1:
            raise ValueError("step_size * reg_lambda must be < 1")
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.trace_stride < 1:
            raise ValueError("trace_stride must be >= 1")

    @property
    def decay(self) -> float:
        return 1.0 - self.step_size * self.reg_lambda


@dataclass
class TrainTrace:
    step: List[int] = field(default_factory=list)
    loss: List[float] = field(default_factory=list)
    margin: List[float] = field(default_factory=list)
    freeze_residual: List[float] = field(default_factory=list)
    grad_norm: List[float] = field(default_factory=list)
    # Largest ||(1-eta*lambda)^t Pi_Perp(w_i(0))||, for turning residuals into relative errors.
    reference_norm: List[float] = field(default_factory=list)

    COLUMNS = ("step", "loss", "margin", "freeze_residual", "grad_norm")

    def __len__(self):
        return len(self.step)

    def append(self, t, loss, margin, residual, grad_norm, reference):
        if self.step and t <= self.step[-1]:
            raise ValueError("trace steps must increase")
        self.step.append(int(t))
        self.loss.append(float(loss))
        self.margin.append(float(margin))
        self.freeze_residual.append(float(residual))
        self.grad_norm.append(float(grad_norm))
        self.reference_norm.append(float(reference))

    def relative_residuals(self):
        ref = np.asarray(self.reference_norm)
        res = np.asarray(self.freeze_residual)
        return np.divide(res, ref, out=np.zeros_like(res), where=ref > 0)

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.COLUMNS)
            for row in zip(self.step, self.loss, self.margin, self.freeze_residual, self.grad_norm):
                w.writerow([row[0]] + [_jsonio.fmt_float(v) for v in row[1:]])

    @classmethod
    def read_csv(cls, path):
        trace = cls()
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            for rec in reader:
                trace.append(
                    int(rec["step"]),
                    float(rec["loss"]),
                    float(rec["margin"]),
                    float(rec["freeze_residual"]),
                    float(rec["grad_norm"]),
                    float("nan"),
                )
        return trace


def _batch_terms(w, u, x, y):
    """Per-sample outputs and the data-loss gradient over the rows of ``x``."""
    pre = x @ w.T
    act = pre >= 0
    out = np.maximum(pre, 0.0) @ u
    q = y * out
    coef = logistic_derivative(q) * y
    grad = ((coef[:, None] * act) * u).T @ x
    return q, grad


def train(net: TwoLayerNet, data: LabeledDataset, subspace: Subspace, cfg: TrainConfig):
    """Train the first layer of ``net`` on ``data`` and return ``(trained_net, trace)``.

    The data must lie on ``subspace``.  Training stops after ``cfg.max_steps``
    updates, or earlier at the first step whose margin reaches
    ``cfg.target_margin``.
    """
    if data.d != net.d or subspace.ambient_dim != net.d:
        raise ValueError("network, dataset and subspace dimensions differ")
    x = data.points
    off = np.linalg.norm(project(x, subspace, "perp"), axis=1)
    worst = float(np.max(off / np.maximum(1.0, np.linalg.norm(x, axis=1))))
    if worst > ON_SUBSPACE_RTOL:
        raise ValueError(f"training data is off the subspace (relative residual {worst:.3e})")

    y = data.labels.astype(np.float64)
    u = net.signs_u
    eta, lam = cfg.step_size, cfg.reg_lambda
    scale_full = 1.0 / len(y) if cfg.average_loss else 1.0
    w = np.array(net.weights_w)
    w_hat0 = project(w, subspace, "perp")
    hat0_norm = float(np.linalg.norm(w_hat0, axis=1).max())
    trace = TrainTrace()

    order_rng = SeededRng(cfg.seed).child("sgd-order")
    batches = _batch_schedule(len(y), cfg.batch_size, order_rng)

    def record(t, q, grad_full):
        loss = float(np.sum(logistic_loss(q))) * scale_full
        if lam > 0:
            loss += 0.5 * lam * float(np.sum(w * w))
        if not math.isfinite(loss) or loss > LOSS_CEILING:
            raise TrainingDiverged(f"loss {loss!r} at step {t} (eta={eta}, lambda={lam})")
        factor = cfg.decay**t
        resid = project(w, subspace, "perp") - factor * w_hat0
        trace.append(
            t,
            loss,
            float(np.min(q)),
            float(np.linalg.norm(resid, axis=1).max()),
            float(np.linalg.norm(grad_full * scale_full + lam * w)),
            factor * hat0_norm,
        )

    for t in range(cfg.max_steps + 1):
        q, grad_full = _batch_terms(w, u, x, y)
        reached = cfg.target_margin is not None and float(np.min(q)) >= cfg.target_margin
        last = t == cfg.max_steps or reached
        if t % cfg.trace_stride == 0 or last:
            record(t, q, grad_full)
        elif not np.max(np.abs(q)) <= LOSS_CEILING:
            raise TrainingDiverged(f"output {np.max(np.abs(q))!r} at step {t} (eta={eta}, lambda={lam})")
        if last:
            break
        if cfg.batch_size is None:
            grad = grad_full * scale_full
        else:
            idx = next(batches)
            _, grad = _batch_terms(w, u, x[idx], y[idx])
            if cfg.average_loss:
                grad /= len(idx)
        w = w - eta * (grad + lam * w) if lam > 0 else w - eta * grad
    return net.with_weights(w), trace


def _batch_schedule(n, batch_size, rng):
    """Minibatch indices: a fresh permutation each epoch, consumed in order."""
    if batch_size is None:
        return None

    def gen():
        while True:
            perm = rng.permutation(n)
            for start in range(0, n, batch_size):
                yield perm[start : start + batch_size]

    return gen()


@dataclass
class MarginGrowthReport:
    threshold: float
    max_margin: float
    crossing_step: Optional[int]
    pre_median_increment: float
    post_median_increment: float
    post_max_increment: float
    plateau_step: Optional[int]
    post_increments: np.ndarray

    @property
    def plateau_ratio(self) -> float:
        """pre-crossing median increment / post-crossing median increment (inf when post is 0)."""
        if self.crossing_step is None:
            return float("nan")
        if self.post_median_increment <= 0:
            return float("inf")
        return self.pre_median_increment / self.post_median_increment

    def summary(self):
        return {
            "threshold_log2d": self.threshold,
            "max_margin": self.max_margin,
            "crossing_step": "none" if self.crossing_step is None else self.crossing_step,
            "pre_median_increment": self.pre_median_increment,
            "post_median_increment": self.post_median_increment,
            "post_max_increment": self.post_max_increment,
            "plateau_step": "none" if self.plateau_step is None else self.plateau_step,
        }


def margin_growth_report(trace: TrainTrace, d: int, plateau_tol: float = 0.1) -> MarginGrowthReport:
    """Margin growth around the log^2(d) level (natural log).

    Increments are per step (the difference between recorded rows divided by
    the step gap).  ``plateau_step`` is the first recorded step after which
    every increment stays within ``plateau_tol`` times the largest increment.
    """
    if len(trace) == 0:
        raise ValueError("empty trace")
    steps = np.asarray(trace.step, dtype=np.float64)
    gam = np.asarray(trace.margin, dtype=np.float64)
    threshold = math.log(d) ** 2
    inc = np.diff(gam) / np.diff(steps) if len(gam) > 1 else np.zeros(0)

    above = np.flatnonzero(gam > threshold)
    crossing = int(trace.step[above[0]]) if above.size else None
    if crossing is not None:
        j = int(above[0])
        pre, post = inc[:j], inc[j:]
    else:
        pre, post = inc, np.zeros(0)
    pre_med = float(np.median(pre)) if pre.size else float("nan")
    post_med = float(np.median(post)) if post.size else float("nan")
    post_max = float(np.max(post)) if post.size else float("nan")

    plateau = None
    if inc.size:
        big = np.max(np.abs(inc))
        if big > 0:
            loud = np.flatnonzero(np.abs(inc) > plateau_tol * big)
            last_loud = int(loud[-1])
            if last_loud + 1 < inc.size:
                plateau = int(trace.step[last_loud + 1])
    return MarginGrowthReport(
        threshold=threshold,
        max_margin=float(np.max(gam)),
        crossing_step=crossing,
        pre_median_increment=pre_med,
        post_median_increment=post_med,
        post_max_increment=post_max,
        plateau_step=plateau,
        post_increments=post,
    )
