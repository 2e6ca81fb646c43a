"""Identification diagnostics and ATE estimation for multi-treatment
heterogeneous-coefficient models with a control variable."""

from .core_algebra import (
    GpsVector,
    MomentMatrix,
    conditional_variance,
    design_vector,
    moment_matrix_from_gps,
    moment_matrix_from_joint,
    null_space_direction,
    schur_complement_of_diag_block,
    smallest_eigenvalue,
)
from .estimation import (
    AsfEstimate,
    CellEstimate,
    Dataset,
    IdentificationReport,
    NotIdentifiedError,
    QuantileBins,
    audit,
    estimate_asf,
    estimate_cell,
    partition_controls,
)
from .identification import (
    CellDistribution,
    IdentificationVerdict,
    QFunction,
    Reason,
    construct_equivalent_q,
    lemma1_inequality_gap,
    observational_distance,
    verdict_theorem1,
    verdict_theorem2,
    verdict_theorem3,
    verdicts_agree,
)
from .io import load_csv, write_csv
from .simulation import (
    DgpSpec,
    DiscreteControl,
    UniformControl,
    continuous_dgp,
    failure_sweep,
    heterogeneous_dgp,
    homogeneous_dgp,
    simulate,
)

__version__ = "0.1.0"
