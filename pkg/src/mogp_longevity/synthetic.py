"""Draw synthetic panels from a known GP model (simulation studies, benchmarks)."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .data import MortalityPanel, grid_panel
from .gp import MeanSpec, design
from .kernels import KernelSpec, se_eig


def sample_grid_panel(kernel: KernelSpec, beta: Sequence[float], populations: Sequence[str],
                      ages: Sequence[float], years: Sequence[float], seed: int,
                      mean: MeanSpec = MeanSpec()) -> MortalityPanel:
    """Isotropic panel with ``y = h(x)^T beta + f(x) + noise`` and f ~ GP(0, kernel).

    ``beta`` holds raw-unit coefficients of the free trend columns.  The latent
    field is drawn through the Kronecker square root of ``B (x) K_yr (x) K_ag``.
    """
    rng = np.random.default_rng(seed)
    ages = np.asarray(ages, float)
    years = np.asarray(years, float)
    L = len(populations)
    if kernel.L != L:
        raise ValueError("kernel and population list disagree on L")

    def root(mat):
        s, V = np.linalg.eigh(0.5 * (mat + mat.T))
        return V * np.sqrt(np.clip(s, 0.0, None))

    s_y, V_y = se_eig(years, kernel.theta_yr)
    s_a, V_a = se_eig(ages, kernel.theta_ag)
    R_b = root(kernel.population_matrix())
    z = rng.standard_normal((L, len(years), len(ages)))
    f = np.einsum("lm,mya->lya", R_b, z)
    f = np.einsum("yz,lza->lya", V_y * np.sqrt(s_y), f)
    f = np.einsum("ab,lyb->lya", V_a * np.sqrt(s_a), f)
    eps = rng.standard_normal(f.shape) * np.sqrt(kernel.sigma2)[:, None, None]
    panel = grid_panel(populations, ages, years, np.zeros(f.shape))
    H, off = design(panel.pop, panel.age, panel.year, mean, L)
    trend = (H @ np.asarray(beta, float) + off).reshape(f.shape)
    return grid_panel(populations, ages, years, trend + f + eps)
