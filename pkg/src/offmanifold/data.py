"""Labeled datasets on a subspace: synthetic generators, CSV I/O and PCA."""

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import _jsonio
from .geometry import Subspace, as_rng, on_subspace_residual
from .tolerances import ON_SUBSPACE_RTOL


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    points: np.ndarray  # (r, d)
    labels: np.ndarray  # (r,), entries +-1
    subspace: Optional[Subspace] = None

    def __post_init__(self):
        x = np.array(self.points, dtype=np.float64)
        y = np.asarray(self.labels)
        if x.ndim != 2 or x.shape[0] < 1:
            raise ValueError("a dataset needs at least one sample")
        if y.shape != (x.shape[0],):
            raise ValueError(f"{x.shape[0]} points but {y.size} labels")
        if not np.all(np.isin(y, (-1, 1))):
            raise ValueError("labels must be -1 or +1")
        if self.subspace is not None:
            if self.subspace.ambient_dim != x.shape[1]:
                raise ValueError("subspace dimension does not match the points")
            worst = float(on_subspace_residual(x, self.subspace).max())
            if worst > ON_SUBSPACE_RTOL:
                raise ValueError(f"points are off the subspace (relative residual {worst:.3e})")
        x.flags.writeable = False
        y = y.astype(np.int64)
        y.flags.writeable = False
        object.__setattr__(self, "points", x)
        object.__setattr__(self, "labels", y)

    def __len__(self):
        return self.points.shape[0]

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def with_subspace(self, subspace):
        return LabeledDataset(self.points, self.labels, subspace)


def _embed(coords, subspace, offset, offset_axis):
    """Map intrinsic coordinates (r, k) into R^d through the first k columns of basis_p."""
    k = coords.shape[1]
    x = coords @ subspace.basis_p[:, :k].T
    if offset:
        x = x + offset * subspace.basis_p[:, offset_axis]
    return x


def generate_grid_dataset(kind: str, subspace: Subspace, params: dict = None, rng=0) -> LabeledDataset:
    """Synthetic datasets lying on P.

    kinds:
      ``line7``  seven equally spaced points on a line through the origin, from
                 -sqrt(2) b_1 to sqrt(2) b_1 (i.e. (-1,-1) to (1,1) when
                 b_1 = (1,1)/sqrt(2)); labels alternate +,-,+,... by default.
      ``grid25`` a 5 x 5 grid on [-1,1]^2 in (b_1, b_2); checkerboard labels.
      ``sphere`` ``n_points`` uniform points on a sphere of radius ``radius``
                 in the first ``sphere_dim`` directions of P; labels are the
                 side of a random hyperplane through the origin.

    ``offset`` (line7/grid25) shifts the whole set along the next unused basis
    vector of P.  A bias-free network is positively homogeneous, so without an
    offset the origin (and opposite-label points on one ray) cannot be fit;
    the offset plays the role of a bias input.  ``labels`` may be
    ``"alternating"``, ``"checkerboard"``, ``"sign"`` or ``"hemisphere"``.
    """
    params = dict(params or {})
    rng = as_rng(rng)
    dim_p = subspace.dim
    offset = float(params.pop("offset", 0.0))
    label_rule = params.pop("labels", None)

    if kind == "line7":
        need = 1 + (offset != 0)
        if dim_p < need:
            raise ValueError(f"line7 needs dim(P) >= {need}, subspace has {dim_p}")
        t = np.linspace(-1.0, 1.0, 7)
        coords = (t * math.sqrt(2.0))[:, None]
        x = _embed(coords, subspace, offset, 1)
        rule = label_rule or "alternating"
        if rule == "alternating":
            y = np.where(np.arange(7) % 2 == 0, 1, -1)
        elif rule == "sign":
            y = np.where(t >= 0, 1, -1)
        else:
            raise ValueError(f"unsupported label rule {rule!r} for line7")
    elif kind == "grid25":
        need = 2 + (offset != 0)
        if dim_p < need:
            raise ValueError(f"grid25 needs dim(P) >= {need}, subspace has {dim_p}")
        g = np.linspace(-1.0, 1.0, 5)
        ii, jj = np.meshgrid(np.arange(5), np.arange(5), indexing="ij")
        coords = np.column_stack([g[ii.ravel()], g[jj.ravel()]])
        x = _embed(coords, subspace, offset, 2)
        rule = label_rule or "checkerboard"
        if rule == "checkerboard":
            y = np.where((ii.ravel() + jj.ravel()) % 2 == 0, 1, -1)
        elif rule == "sign":
            y = np.where(coords[:, 0] >= 0, 1, -1)
        else:
            raise ValueError(f"unsupported label rule {rule!r} for grid25")
    elif kind == "sphere":
        sphere_dim = int(params.pop("sphere_dim", dim_p))
        radius = float(params.pop("radius", 1.0))
        n_points = int(params.pop("n_points", 200))
        if not 2 <= sphere_dim <= dim_p:
            raise ValueError(f"sphere_dim must lie in [2, dim(P)={dim_p}], got {sphere_dim}")
        if n_points < 1 or radius <= 0:
            raise ValueError("n_points must be >= 1 and radius > 0")
        g = rng.child("points").normal((n_points, sphere_dim))
        coords = radius * g / np.linalg.norm(g, axis=1, keepdims=True)
        x = _embed(coords, subspace, 0.0, 0)
        # Renormalise in ambient space so ||x|| = radius to working precision.
        x *= radius / np.linalg.norm(x, axis=1, keepdims=True)
        rule = label_rule or "hemisphere"
        if rule != "hemisphere":
            raise ValueError(f"unsupported label rule {rule!r} for sphere")
        v = rng.child("labels").normal(sphere_dim)
        y = np.where(coords @ v >= 0, 1, -1)
    else:
        raise ValueError(f"unknown dataset kind {kind!r}")
    if params:
        raise ValueError(f"unused dataset parameters: {sorted(params)}")
    return LabeledDataset(x, y, subspace)


def random_on_subspace(subspace: Subspace, norm: float, rng, count: int = None):
    """Points drawn uniformly in direction from P, scaled to a fixed norm."""
    rng = as_rng(rng)
    shape = (subspace.dim,) if count is None else (count, subspace.dim)
    c = rng.normal(shape)
    x = c @ subspace.basis_p.T
    return x * (norm / np.linalg.norm(x, axis=-1, keepdims=True))


@dataclass(frozen=True, eq=False)
class PcaResult:
    components: np.ndarray  # (d, d), column j is the j-th principal direction
    singular_values: np.ndarray  # (d,)
    cumulative_variance: np.ndarray  # (d,)
    centered: bool = False
    mean: Optional[np.ndarray] = None

    def n_components_for(self, fraction: float) -> int:
        """Smallest number of leading components whose cumulative variance reaches ``fraction``."""
        hits = np.flatnonzero(self.cumulative_variance >= fraction - 1e-12)
        return int(hits[0]) + 1

    def to_dict(self):
        return {
            "centered": self.centered,
            "singular_values": self.singular_values,
            "cumulative_variance": self.cumulative_variance,
            "components": self.components,
        }

    @classmethod
    def from_dict(cls, doc):
        return cls(
            components=np.asarray(doc["components"], dtype=np.float64),
            singular_values=np.asarray(doc["singular_values"], dtype=np.float64),
            cumulative_variance=np.asarray(doc["cumulative_variance"], dtype=np.float64),
            centered=bool(doc.get("centered", False)),
        )

    def save(self, path):
        _jsonio.dump(self.to_dict(), path)


def pca(points, center: bool = False) -> PcaResult:
    """SVD-based PCA.  Uncentred by default: squared singular values of the raw data."""
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("points must be an (r, d) matrix")
    r, d = x.shape
    mean = None
    if center:
        if r < 2:
            raise ValueError("centred PCA needs at least two points")
        mean = x.mean(axis=0)
        x = x - mean
    if r >= d:
        _, s, vt = np.linalg.svd(x, full_matrices=False)
    else:
        _, s_short, vt = np.linalg.svd(x, full_matrices=True)
        s = np.zeros(d)
        s[: s_short.size] = s_short
    total = float(np.sum(s**2))
    if total <= 0.0:
        raise ValueError("zero total variance")
    comps = vt.T.copy()
    # Fix signs so the largest-magnitude entry of each component is positive.
    pivots = np.argmax(np.abs(comps), axis=0)
    comps *= np.sign(comps[pivots, np.arange(d)])
    cum = np.cumsum(s**2) / total
    cum = np.minimum(cum, 1.0)
    cum[-1] = 1.0
    return PcaResult(comps, s, cum, center, mean)


def project_dataset(data: LabeledDataset, result: PcaResult, k: int) -> LabeledDataset:
    """Project every point onto the span of the top-k principal components."""
    d = data.d
    if not 1 <= k <= d:
        raise ValueError(f"k must lie in [1, {d}], got {k}")
    top = result.components[:, :k]
    x = (data.points @ top) @ top.T
    if k == d:
        return LabeledDataset(data.points, data.labels, None)
    sub = Subspace(top, result.components[:, k:])
    return LabeledDataset(x, data.labels, sub)


def write_csv(data: LabeledDataset, path, feature_names=None):
    d = data.d
    names = feature_names or [f"x{j}" for j in range(d)]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(names) + ["label"])
        for row, label in zip(data.points, data.labels):
            w.writerow([_jsonio.fmt_float(v) for v in row] + [int(label)])


def read_csv(path) -> LabeledDataset:
    """Read a header + rows CSV whose last column is ``label`` in {-1, 1}."""
    rows, labels = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise DatasetFormatError(f"{path}: no samples")
        if not header or header[-1].strip() != "label":
            raise DatasetFormatError(f"{path}: line 1: last column must be 'label'")
        width = len(header)
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != width:
                raise DatasetFormatError(f"{path}: line {lineno}: expected {width} columns, got {len(row)}")
            try:
                feats = [float(c) for c in row[:-1]]
            except ValueError as exc:
                raise DatasetFormatError(f"{path}: line {lineno}: malformed number ({exc})") from None
            lab = row[-1].strip()
            if lab not in ("1", "-1", "+1", "1.0", "-1.0"):
                raise DatasetFormatError(f"{path}: line {lineno}: label must be -1 or 1, got {lab!r}")
            rows.append(feats)
            labels.append(1 if float(lab) > 0 else -1)
    if not rows:
        raise DatasetFormatError(f"{path}: no samples")
    return LabeledDataset(np.array(rows, dtype=np.float64), np.array(labels))


def read_feature_matrix(path, label_column="last", skip_header=True, return_labels=False):
    """Load a numeric CSV (e.g. an MNIST export) and drop its label column.

    ``label_column`` is ``"first"``, ``"last"`` or ``"none"``.  With
    ``return_labels`` the raw label column (or None) comes back as well.
    """
    x = np.loadtxt(path, delimiter=",", skiprows=1 if skip_header else 0, ndmin=2)
    if label_column == "first":
        feats, labels = x[:, 1:], x[:, 0]
    elif label_column == "last":
        feats, labels = x[:, :-1], x[:, -1]
    elif label_column == "none":
        feats, labels = x, None
    else:
        raise ValueError(f"label_column must be first, last or none, got {label_column!r}")
    return (feats, labels) if return_labels else feats


def diagonal_subspace(d: int, l: int) -> Subspace:
    """P = span{(e_1 + e_2)/sqrt(2), e_3, ..., e_{d-l+1}}.

    For d = 2, l = 1 this is the line y = x; for d = 3, l = 1 it is that line
    plus the e_3 direction used as a constant (bias) coordinate.
    """
    if d < 2 or not 1 <= l <= d - 1:
        raise ValueError(f"need 1 <= l <= d-1 (d={d}, l={l})")
    s = 1.0 / math.sqrt(2.0)
    eye = np.eye(d)
    diag = (eye[:, 0] + eye[:, 1]) * s
    anti = (eye[:, 0] - eye[:, 1]) * s
    rest = eye[:, 2:]
    k = d - l
    basis_p = np.column_stack([diag] + [rest[:, j] for j in range(k - 1)])
    basis_perp = np.column_stack([anti] + [rest[:, j] for j in range(k - 1, d - 2)])
    return Subspace(basis_p, basis_perp)
