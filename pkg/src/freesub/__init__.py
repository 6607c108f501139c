"""Free additive convolution via subordination, plus the random-matrix
ensembles H = A + U B U* and the Monte-Carlo experiments that probe them."""

from freesub.measures import (
    SpectralMeasure,
    make_atoms,
    point_mass,
    two_point,
    semicircle,
    quantile_discretize,
    stieltjes,
    stieltjes_deriv,
    levy_distance,
    measure_from_json,
)

__version__ = "0.1.0"
