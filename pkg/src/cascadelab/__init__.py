"""Random multiplicative cascades: simulation, scaling exponents and the
arithmetic of commuting generators."""

from ._backend import BACKEND
from .analysis import (
    MomentConsistencyReport,
    TauEstimate,
    estimate_tau,
    lebesgue_test,
    lemma2_moment_check,
    partition_function,
    second_moment_xy_check,
    total_mass_second_moment,
)
from .cascade import CascadeField, EnsembleHandle, coarsen, simulate
from .generators import (
    CriticalExponents,
    Family,
    GeneratorSpec,
    critical_exponents,
    deterministic,
    dirichlet,
    discrete_iid,
    log_poisson,
    lognormal,
    one_hot,
    tau_heuristic,
    tensor_power,
    tensor_product,
)
from .numbertheory import CommutationCertificate, certify_commuting_pair, commutes, remainder_cycle

__version__ = "0.1.0"
