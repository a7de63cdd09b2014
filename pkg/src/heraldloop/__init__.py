"""Heralded photon-number states from a pumped down-conversion loop.

Exponential-operator state propagation, click-counting detectors, matrix of
moments nonclassicality, a Fock-basis oracle with a Monte Carlo sampler, and
estimators for click-record data.
"""

from .analysis import (
    ClickHistogram,
    FitResult,
    PatternQuery,
    RecordTally,
    condition,
    emit_table,
    estimate_fidelity,
    estimate_negativity,
    estimate_statistics,
    fit_parameters,
    read_records,
    read_table,
    tally_records,
)
from .detector import ClickDistribution, DetectorConfig, bhattacharyya, fock_click_distribution, povm_terms, stirling2
from .errors import (
    CutoffExceeded,
    DivergentTrace,
    FitFailure,
    HeraldError,
    InsufficientData,
    InvalidArgument,
    NonPhysicalMixture,
    NumericalFailure,
)
from .expop import ExpOpMixture, SqueezeParams, gain_from_zeta, squeezing_db
from .mcsim import exact_chain, sample_records
from .moments import click_moments, distribution_negativity, moment_matrix, negativity
from .protocol import (
    HeraldPattern,
    LoopConfig,
    dh_click_closed,
    dh_success_closed,
    fh_click_closed,
    fh_success_closed,
    run_pattern,
    signal_distribution,
    sweep_fp,
)

__version__ = "0.1.0"
