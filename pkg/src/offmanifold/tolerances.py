"""Numerical tolerances shared across the package.

Every invariant check and default test threshold reads from here so the
numbers live in exactly one place.
"""

# Orthonormality of stored bases (B^T B = I, cross products = 0).
ORTHONORMAL_ATOL = 1e-10

# Diagonal magnitude below which a QR draw counts as rank deficient.
PIVOT_THRESHOLD = 1e-12

# Idempotence of a projection applied twice.
IDEMPOTENCE_ATOL = 1e-12

# x = Pi_P(x) + Pi_Perp(x) and the matching Pythagoras identity.
DECOMPOSITION_ATOL = 1e-10

# Rotations: R^T R = I and norm preservation.
ROTATION_ATOL = 1e-10

# A point counts as lying on P when ||Pi_Perp(x)|| <= ON_SUBSPACE_RTOL * max(1, ||x||).
ON_SUBSPACE_RTOL = 1e-9

# A perturbation counts as lying in P-perp (or P) up to this fraction of its norm.
IN_SUBSPACE_RTOL = 1e-9

# Off-subspace weights without regularization: allowed drift relative to max ||w_i(0)||.
FREEZE_RTOL = 1e-9

# Off-subspace weights under L2 decay: relative residual against (1 - eta*lambda)^t.
DECAY_RTOL = 1e-7

# Matched-seed training on X and on R X: max |N^X(x) - N^{RX}(Rx)|.
ROTATION_OUTPUT_ATOL = 1e-6

# Divergence guard for training.
LOSS_CEILING = 1e12

# Finite-difference checks skip inputs this close to any activation boundary.
FD_BOUNDARY_MARGIN = 1e-3
