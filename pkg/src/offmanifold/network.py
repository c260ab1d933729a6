"""Two-layer ReLU network with a frozen +-1/sqrt(m) output layer.

    N(x) = sum_i u_i * relu(<w_i, x>)

Only the first layer ``w`` is ever trained.  At a preactivation of exactly
zero a neuron counts as active (relu'(0) = 1), both in the input gradient
and in the parameter gradient.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import _jsonio
from .geometry import as_rng


@dataclass(frozen=True, eq=False)
class TwoLayerNet:
    weights_w: np.ndarray  # (m, d), row i is w_i
    signs: np.ndarray  # (m,), entries +-1; u_i = signs[i] / sqrt(m)
    beta: float

    def __post_init__(self):
        w = np.array(self.weights_w, dtype=np.float64)
        s = np.asarray(self.signs).astype(np.int64)
        if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
            raise ValueError(f"weights must be an (m, d) matrix with m, d >= 1, got shape {w.shape}")
        if s.shape != (w.shape[0],) or not np.all(np.abs(s) == 1):
            raise ValueError("signs must be an m-vector of +-1")
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        w.flags.writeable = False
        s.flags.writeable = False
        object.__setattr__(self, "weights_w", w)
        object.__setattr__(self, "signs", s)
        object.__setattr__(self, "beta", float(self.beta))

    @property
    def m(self) -> int:
        return self.weights_w.shape[0]

    @property
    def d(self) -> int:
        return self.weights_w.shape[1]

    @property
    def signs_u(self) -> np.ndarray:
        """Second-layer weights u_i = +-1/sqrt(m)."""
        return self.signs / np.sqrt(self.m)

    def with_weights(self, w) -> "TwoLayerNet":
        return TwoLayerNet(w, self.signs, self.beta)

    def __call__(self, x):
        return forward(self, x)

    def to_dict(self):
        return {
            "d": self.d,
            "m": self.m,
            "beta": self.beta,
            "u_signs": [int(v) for v in self.signs],
            "w": self.weights_w,
        }

    @classmethod
    def from_dict(cls, doc):
        m, d = int(doc["m"]), int(doc["d"])
        w = np.asarray(doc["w"], dtype=np.float64).reshape(m, d)
        return cls(w, np.asarray(doc["u_signs"], dtype=np.int64), float(doc["beta"]))

    def save(self, path):
        _jsonio.dump(self.to_dict(), path)

    @classmethod
    def load(cls, path):
        return cls.from_dict(_jsonio.load(path))


@dataclass(frozen=True)
class ActiveSplit:
    s: np.ndarray
    i_plus: np.ndarray
    i_minus: np.ndarray
    y0: int

    @property
    def k(self) -> int:
        return len(self.s)

    @property
    def k_plus(self) -> int:
        return len(np.intersect1d(self.s, self.i_plus))

    @property
    def k_minus(self) -> int:
        return len(np.intersect1d(self.s, self.i_minus))

    @property
    def k_y0(self) -> int:
        """Active neurons whose output sign opposes the prediction y0."""
        return self.k_minus if self.y0 == 1 else self.k_plus


def init_network(d: int, m: int, beta: float = None, rng=0) -> TwoLayerNet:
    """w_i ~ N(0, beta^2 I_d) and u_i uniform on {-1/sqrt(m), +1/sqrt(m)}.

    ``beta`` defaults to the Kaiming scale 1/sqrt(d).
    """
    if d < 1 or m < 1:
        raise ValueError(f"d and m must be >= 1, got d={d}, m={m}")
    if beta is None:
        beta = 1.0 / np.sqrt(d)
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    rng = as_rng(rng)
    w = rng.child("w").normal((m, d)) * beta
    signs = rng.child("u").signs(m)
    return TwoLayerNet(w, signs, beta)


def _as_input(net, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.d:
        raise ValueError(f"dimension mismatch: expected {net.d} coordinates, got {x.shape[-1]}")
    return x


def preactivations(net: TwoLayerNet, x):
    return _as_input(net, x) @ net.weights_w.T


def forward(net: TwoLayerNet, x):
    """N(x) for a d-vector (returns a float) or for every row of an (r, d) array."""
    pre = preactivations(net, x)
    out = np.maximum(pre, 0.0) @ net.signs_u
    return float(out) if np.ndim(out) == 0 else out


def input_gradient(net: TwoLayerNet, x):
    """dN/dx = sum over active i of u_i w_i.  Rows in, rows out."""
    pre = preactivations(net, x)
    return ((pre >= 0) * net.signs_u) @ net.weights_w


def logistic_loss(q):
    """L(q) = log(1 + e^{-q})."""
    return np.logaddexp(0.0, -np.asarray(q, dtype=np.float64))


def logistic_derivative(q):
    """L'(q) = -1 / (1 + e^{q}), finite for any q."""
    return -expit(-np.asarray(q, dtype=np.float64))


def _check_labels(y):
    y = np.asarray(y)
    if not np.all(np.isin(y, (-1, 1))):
        raise ValueError("labels must be -1 or +1")
    return y.astype(np.float64)


def param_gradient(net: TwoLayerNet, x, y):
    """Gradient of L(y N(x)) with respect to the first-layer weights, shape (m, d)."""
    x = _as_input(net, x)
    if x.ndim != 1:
        raise ValueError("param_gradient takes a single d-vector")
    y = float(_check_labels(y))
    pre = net.weights_w @ x
    out = np.maximum(pre, 0.0) @ net.signs_u
    coef = logistic_derivative(y * out) * y
    return np.outer(coef * net.signs_u * (pre >= 0), x)


def active_split(net: TwoLayerNet, x0, y0: int) -> ActiveSplit:
    x0 = _as_input(net, x0)
    if y0 not in (-1, 1):
        raise ValueError("y0 must be -1 or +1")
    pre = net.weights_w @ x0
    return ActiveSplit(
        s=np.flatnonzero(pre >= 0),
        i_plus=np.flatnonzero(net.signs > 0),
        i_minus=np.flatnonzero(net.signs < 0),
        y0=int(y0),
    )


def margin(net: TwoLayerNet, data) -> float:
    """min_i y_i N(x_i); negative when some point is misclassified."""
    points, labels = data.points, data.labels
    if len(labels) == 0:
        raise ValueError("empty dataset")
    return float(np.min(labels * forward(net, points)))
