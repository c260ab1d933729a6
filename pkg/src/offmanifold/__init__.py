"""Two-layer ReLU networks trained on data that lies on a linear subspace.

The modules here train such networks and measure how fragile they are in
directions orthogonal to the data: input-gradient norms off the subspace, a
closed-form universal perturbation, PGD distances to the decision boundary,
and the effect of initialization scale and L2 regularization.
"""

from .geometry import (
    Rotation,
    SeededRng,
    Subspace,
    make_axis_subspace,
    project,
    random_subspace,
    rotation_between,
    sample_gaussian_vector,
)
from .network import (
    TwoLayerNet,
    active_split,
    forward,
    init_network,
    input_gradient,
    margin,
    param_gradient,
)
from .data import LabeledDataset, generate_grid_dataset, pca, project_dataset, read_csv, write_csv
from .training import TrainConfig, TrainTrace, margin_growth_report, train
from .attacks import bound_formulas, gradient_report, pgd_attack, universal_perturbation

__version__ = "0.1.0"
