"""Subspaces, projections, rotations and seeded Gaussian sampling.

A :class:`Subspace` splits R^d into a data subspace P of dimension d - l and
its orthogonal complement P-perp of dimension l.  Both are stored as explicit
orthonormal bases.

Randomness goes through :class:`SeededRng`, a thin wrapper around numpy's
PCG64 bit generator.  Child streams are derived from ``(seed, label)`` with a
fixed 64-bit mix so sweeps never share state between cells.
"""

from dataclasses import dataclass

import numpy as np

from . import _jsonio
from .tolerances import (
    ORTHONORMAL_ATOL,
    PIVOT_THRESHOLD,
    ROTATION_ATOL,
)

_MASK64 = (1 << 64) - 1


def _fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for byte in data:
        h ^= byte
        h = (h * 0x100000001B3) & _MASK64
    return h


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(seed: int, label) -> int:
    """Child seed for ``label``: splitmix64(seed XOR fnv1a64(str(label)))."""
    return _splitmix64((int(seed) & _MASK64) ^ _fnv1a64(str(label).encode("utf-8")))


class SeededRng:
    """Deterministic random stream backed by ``numpy.random.PCG64``.

    Identical seeds give bit-identical streams.  Use :meth:`child` to hand a
    sub-computation its own independent stream instead of sharing one.
    """

    algorithm = "PCG64"

    def __init__(self, seed: int):
        seed = int(seed)
        if seed < 0 or seed > _MASK64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self._gen = np.random.Generator(np.random.PCG64(seed))

    def __repr__(self):
        return f"SeededRng(seed={self.seed})"

    def child(self, label) -> "SeededRng":
        return SeededRng(derive_seed(self.seed, label))

    def normal(self, size=None, scale=1.0):
        return self._gen.standard_normal(size) * scale

    def signs(self, n):
        """n independent fair +-1 draws."""
        return np.where(self._gen.integers(0, 2, size=n) == 1, 1, -1).astype(np.int64)

    def permutation(self, n):
        return self._gen.permutation(n)

    def choice(self, n, size, replace=False):
        return self._gen.choice(n, size=size, replace=replace)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)


def as_rng(rng) -> SeededRng:
    if isinstance(rng, SeededRng):
        return rng
    return SeededRng(rng)


@dataclass(frozen=True, eq=False)
class Subspace:
    """Orthonormal description of P (``basis_p``, d x (d-l)) and P-perp (``basis_perp``, d x l)."""

    basis_p: np.ndarray
    basis_perp: np.ndarray

    def __post_init__(self):
        bp = np.ascontiguousarray(self.basis_p, dtype=np.float64)
        bq = np.ascontiguousarray(self.basis_perp, dtype=np.float64)
        if bp.ndim != 2 or bq.ndim != 2 or bp.shape[0] != bq.shape[0]:
            raise ValueError("bases must be 2-D with the same number of rows")
        d = bp.shape[0]
        if bp.shape[1] + bq.shape[1] != d:
            raise ValueError(f"column counts {bp.shape[1]} + {bq.shape[1]} must equal d = {d}")
        if d < 2 or not 1 <= bq.shape[1] <= d - 1:
            raise ValueError(f"need d >= 2 and 1 <= l <= d-1, got d={d}, l={bq.shape[1]}")
        bp.flags.writeable = False
        bq.flags.writeable = False
        object.__setattr__(self, "basis_p", bp)
        object.__setattr__(self, "basis_perp", bq)

    @property
    def ambient_dim(self) -> int:
        return self.basis_p.shape[0]

    @property
    def codim(self) -> int:
        return self.basis_perp.shape[1]

    @property
    def dim(self) -> int:
        return self.basis_p.shape[1]

    @property
    def full_basis(self) -> np.ndarray:
        return np.hstack([self.basis_p, self.basis_perp])

    def check(self, atol=ORTHONORMAL_ATOL):
        """Raise ValueError unless the stored bases are orthonormal and complementary."""
        bp, bq = self.basis_p, self.basis_perp
        if not np.allclose(bp.T @ bp, np.eye(bp.shape[1]), rtol=0, atol=atol):
            raise ValueError("basis_p is not orthonormal")
        if not np.allclose(bq.T @ bq, np.eye(bq.shape[1]), rtol=0, atol=atol):
            raise ValueError("basis_perp is not orthonormal")
        if np.abs(bp.T @ bq).max() > atol:
            raise ValueError("basis_p and basis_perp are not orthogonal")
        return self

    def to_dict(self):
        return {
            "d": self.ambient_dim,
            "l": self.codim,
            "basis_p": self.basis_p,
            "basis_perp": self.basis_perp,
        }

    @classmethod
    def from_dict(cls, doc):
        d, l = int(doc["d"]), int(doc["l"])
        bp = np.asarray(doc["basis_p"], dtype=np.float64).reshape(d, d - l)
        bq = np.asarray(doc["basis_perp"], dtype=np.float64).reshape(d, l)
        return cls(bp, bq).check()

    def save(self, path):
        _jsonio.dump(self.to_dict(), path)

    @classmethod
    def load(cls, path):
        return cls.from_dict(_jsonio.load(path))


@dataclass(frozen=True, eq=False)
class Rotation:
    matrix_r: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.matrix_r, dtype=np.float64)
        if r.ndim != 2 or r.shape[0] != r.shape[1]:
            raise ValueError("rotation must be a square matrix")
        if not np.allclose(r.T @ r, np.eye(r.shape[0]), rtol=0, atol=ROTATION_ATOL):
            raise ValueError("matrix is not orthogonal")
        object.__setattr__(self, "matrix_r", r)

    def apply(self, x):
        """Rotate a vector, or every row of a matrix."""
        x = np.asarray(x, dtype=np.float64)
        return x @ self.matrix_r.T

    def __matmul__(self, x):
        return self.apply(x)


def _check_dims(d, l):
    if int(d) != d or int(l) != l:
        raise ValueError("d and l must be integers")
    if d < 2 or not 1 <= l <= d - 1:
        raise ValueError(f"need 1 <= l <= d-1 (d={d}, l={l})")


def make_axis_subspace(d: int, l: int) -> Subspace:
    """P = span{e_1..e_{d-l}}, P-perp = span{e_{d-l+1}..e_d}."""
    _check_dims(d, l)
    eye = np.eye(d)
    return Subspace(eye[:, : d - l], eye[:, d - l :])


def random_subspace(d: int, l: int, rng) -> Subspace:
    """Uniformly oriented subspace from the QR factorisation of a Gaussian d x d matrix."""
    _check_dims(d, l)
    rng = as_rng(rng)
    while True:
        q, r = np.linalg.qr(rng.normal((d, d)))
        diag = np.diag(r)
        if np.min(np.abs(diag)) > PIVOT_THRESHOLD:
            break
    q = q * np.sign(diag)
    return Subspace(q[:, : d - l], q[:, d - l :])


def project(x, subspace: Subspace, onto: str = "perp"):
    """Orthogonal projection of ``x`` (a d-vector or rows of an (n, d) array) onto P or P-perp.

    Computes ``B B^T x`` through whichever of the two bases is narrower,
    using ``x - B' B'^T x`` for the complement when that is cheaper.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != subspace.ambient_dim:
        raise ValueError(f"dimension mismatch: x has {x.shape[-1]} coordinates, subspace has d={subspace.ambient_dim}")
    if onto in ("p", "P"):
        target, other = subspace.basis_p, subspace.basis_perp
    elif onto in ("perp", "P_perp", "p_perp"):
        target, other = subspace.basis_perp, subspace.basis_p
    else:
        raise ValueError(f"onto must be 'P' or 'perp', got {onto!r}")
    if target.shape[1] <= other.shape[1]:
        return (x @ target) @ target.T
    return x - (x @ other) @ other.T


def on_subspace_residual(x, subspace: Subspace):
    """Per-row ||Pi_Perp(x)|| / max(1, ||x||)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    off = np.linalg.norm(project(x, subspace, "perp"), axis=1)
    return off / np.maximum(1.0, np.linalg.norm(x, axis=1))


def rotation_between(src: Subspace, dst: Subspace) -> Rotation:
    """Orthogonal R with R(src.P) = dst.P and R(src.P-perp) = dst.P-perp."""
    if src.ambient_dim != dst.ambient_dim or src.codim != dst.codim:
        raise ValueError(
            f"subspaces differ: (d={src.ambient_dim}, l={src.codim}) vs (d={dst.ambient_dim}, l={dst.codim})"
        )
    return Rotation(dst.full_basis @ src.full_basis.T)


def rotate_subspace(subspace: Subspace, rotation: Rotation) -> Subspace:
    r = rotation.matrix_r
    return Subspace(r @ subspace.basis_p, r @ subspace.basis_perp)


def sample_gaussian_vector(n: int, sigma: float, rng) -> np.ndarray:
    """n i.i.d. N(0, sigma^2) entries."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    return as_rng(rng).normal(n) * sigma
