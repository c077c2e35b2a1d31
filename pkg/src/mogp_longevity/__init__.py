"""Multi-output Gaussian-process models for joint mortality modeling."""
from ._core import BACKEND
from .data import (MortalityPanel, RawRow, RawTable, Scaling, assemble_panel,
                   compute_log_mortality, grid_panel, merge_tables, parse_hmd_table,
                   read_csv_tables, standardize)
from .gp import (MeanSpec, Posterior, PredictionResult, Scenario, log_marginal_likelihood,
                 mean_basis, predict, sample_posterior)
from .kernels import Family, KernelSpec, SEParams, build_cov_matrix, icm_B, se_cov

__version__ = "0.1.0"
