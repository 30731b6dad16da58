"""Joint latent class mixed models with an illness-death event history."""
from .data import (DataError, ModelSpec, ParameterLayout, ParameterSet, SubjectRecord,
                   load_dataset, make_record, paquid_spec, table1_spec, table1_truth,
                   write_dataset)
from .likelihood import JointLikelihood, log_likelihood, log_likelihood_competing
from .optimizer import FitResult, OptimizerConfig, fit
from .simulator import SimulationDesign, generate_dataset, impute_competing

__all__ = [
    "DataError", "ModelSpec", "ParameterLayout", "ParameterSet", "SubjectRecord",
    "load_dataset", "make_record", "paquid_spec", "table1_spec", "table1_truth",
    "write_dataset", "JointLikelihood", "log_likelihood", "log_likelihood_competing",
    "FitResult", "OptimizerConfig", "fit", "SimulationDesign", "generate_dataset",
    "impute_competing",
]
