"""Covariance functions over (population, age, year) inputs.

All three kernel families share one separable form

    C(x_i, x_j) = P[l_i, l_j] * exp(-dAge^2 / (2 theta_ag^2) - dYear^2 / (2 theta_yr^2))

where the L x L population matrix ``P`` is

* SOGP (L = 1): ``[[eta2]]``
* FULL_RANK:    ``eta2 * Gamma`` with ``Gamma[l1, l2] = exp(-theta_{l1,l2})``
* ICM(Q):       ``B = A A^T`` (unit-variance shared SE kernel)
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.linalg import cho_factor, eigh
from scipy.spatial.distance import squareform

from . import _core
from .errors import ConditioningError, KernelError

JITTER_START = 1e-10
JITTER_STOP = 1e-6


class Family(str, enum.Enum):
    SOGP = "SOGP"
    FULL_RANK = "FULL_RANK"
    ICM = "ICM"


@dataclass(frozen=True)
class SEParams:
    eta2: float
    theta_ag: float
    theta_yr: float

    def __post_init__(self):
        if not (self.eta2 > 0 and self.theta_ag > 0 and self.theta_yr > 0):
            raise KernelError(f"SE parameters must be positive: {self}")


def se_cov(x_i, x_j, p: SEParams) -> float:
    """Squared-exponential covariance between two (age, year) points."""
    da = x_i[0] - x_j[0]
    dt = x_i[1] - x_j[1]
    return p.eta2 * math.exp(-da * da / (2 * p.theta_ag ** 2) - dt * dt / (2 * p.theta_yr ** 2))


def pair_index(l1: int, l2: int, L: int) -> int:
    """Position of the unordered pair {l1, l2} in condensed (scipy squareform) order."""
    i, j = (l1, l2) if l1 < l2 else (l2, l1)
    return L * i - i * (i + 1) // 2 + (j - i - 1)


def cross_factor(l1: int, l2: int, cross_thetas) -> float:
    """Population discount ``exp(-theta_{l1,l2})``; 1 on the diagonal.

    ``cross_thetas`` is either the condensed vector of pair parameters or a
    full symmetric L x L matrix.
    """
    if l1 == l2:
        return 1.0
    ct = np.asarray(cross_thetas, dtype=float)
    theta = ct[l1, l2] if ct.ndim == 2 else ct[pair_index(l1, l2, _n_from_pairs(len(ct)))]
    return math.exp(-theta)


def _n_from_pairs(n_pairs: int) -> int:
    L = int(round((1 + math.sqrt(1 + 8 * n_pairs)) / 2))
    if L * (L - 1) // 2 != n_pairs:
        raise KernelError(f"{n_pairs} is not a valid number of population pairs")
    return L


def gamma_matrix(cross_thetas, L: int | None = None) -> np.ndarray:
    ct = np.asarray(cross_thetas, dtype=float)
    if ct.ndim == 2:
        ct = squareform(ct, checks=False)
    if L is None:
        L = _n_from_pairs(len(ct)) if len(ct) else 1
    if len(ct) != L * (L - 1) // 2:
        raise KernelError(f"expected {L * (L - 1) // 2} cross thetas for L={L}, got {len(ct)}")
    if L == 1:
        return np.ones((1, 1))
    G = squareform(np.exp(-ct), checks=False)
    np.fill_diagonal(G, 1.0)
    return G


def icm_B(A) -> np.ndarray:
    """Coregionalization matrix ``A A^T`` (exactly symmetric)."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = A @ A.T
    return 0.5 * (B + B.T)


def is_psd(G: np.ndarray, tol: float = 1e-10) -> bool:
    return bool(np.linalg.eigvalsh(G).min() >= -tol * max(1.0, float(np.abs(np.diag(G)).max())))


@dataclass(frozen=True, eq=False)
class KernelSpec:
    """Kernel family plus every covariance/noise hyperparameter.

    Lengthscales are in whatever units the panel coordinates use.  ``eta2`` is
    ignored (fixed to 1) for ICM, whose scale lives in ``A``.
    """
    family: Family
    theta_ag: float
    theta_yr: float
    sigma2: np.ndarray
    eta2: float = 1.0
    cross_thetas: np.ndarray | None = None
    A: np.ndarray | None = None

    def __post_init__(self):
        fam = Family(self.family)
        object.__setattr__(self, "family", fam)
        sigma2 = np.atleast_1d(np.asarray(self.sigma2, dtype=float)).copy()
        sigma2.setflags(write=False)
        object.__setattr__(self, "sigma2", sigma2)
        if not (self.theta_ag > 0 and self.theta_yr > 0):
            raise KernelError("lengthscales must be positive")
        if not np.all(sigma2 > 0):
            raise KernelError("noise variances must be positive")
        L = len(sigma2)
        if fam is Family.SOGP:
            if L != 1:
                raise KernelError("SOGP kernel takes exactly one population")
            if not self.eta2 > 0:
                raise KernelError("eta2 must be positive")
        elif fam is Family.FULL_RANK:
            if not self.eta2 > 0:
                raise KernelError("eta2 must be positive")
            ct = np.asarray(self.cross_thetas if self.cross_thetas is not None else [], float)
            if ct.ndim == 2:
                ct = squareform(ct, checks=False)
            if len(ct) != L * (L - 1) // 2:
                raise KernelError(f"FULL_RANK needs {L * (L - 1) // 2} cross thetas")
            if np.any(ct < 0):
                raise KernelError("cross thetas must be nonnegative")
            ct = ct.copy()
            ct.setflags(write=False)
            object.__setattr__(self, "cross_thetas", ct)
            if not is_psd(gamma_matrix(ct, L)):
                raise KernelError("cross-population matrix Gamma is not positive semidefinite")
        else:
            if self.A is None:
                raise KernelError("ICM kernel needs loadings A")
            A = np.atleast_2d(np.asarray(self.A, dtype=float)).copy()
            if A.shape[0] != L or A.shape[1] < 1:
                raise KernelError(f"loadings must be L x Q with L={L}, got {A.shape}")
            if not np.all(np.isfinite(A)):
                raise KernelError("non-finite loadings")
            A.setflags(write=False)
            object.__setattr__(self, "A", A)
            object.__setattr__(self, "eta2", 1.0)

    @property
    def L(self) -> int:
        return len(self.sigma2)

    @property
    def rank(self) -> int | None:
        return self.A.shape[1] if self.family is Family.ICM else None

    def se(self) -> SEParams:
        return SEParams(self.eta2, self.theta_ag, self.theta_yr)

    def population_matrix(self) -> np.ndarray:
        if self.family is Family.SOGP:
            return np.array([[self.eta2]])
        if self.family is Family.FULL_RANK:
            return self.eta2 * gamma_matrix(self.cross_thetas, self.L)
        return icm_B(self.A)

    def rescaled(self, age_scale: float, year_scale: float) -> "KernelSpec":
        """Same kernel with lengthscales divided by the given coordinate scales."""
        return KernelSpec(self.family, self.theta_ag / age_scale, self.theta_yr / year_scale,
                          self.sigma2, self.eta2, self.cross_thetas, self.A)


def full_rank_cov(x_i, x_j, spec: KernelSpec) -> float:
    """Covariance of two ``(population, age, year)`` inputs under the FULL_RANK kernel."""
    if spec.family is not Family.FULL_RANK:
        raise KernelError("full_rank_cov needs a FULL_RANK spec")
    base = se_cov(x_i[1:], x_j[1:], spec.se())
    return base * cross_factor(x_i[0], x_j[0], spec.cross_thetas)


def cross_cov(pop1, age1, year1, pop2, age2, year2, spec: KernelSpec) -> np.ndarray:
    """Covariance block between two sets of inputs (latent f, no noise)."""
    P = np.ascontiguousarray(spec.population_matrix())
    return _core.cov_cross(np.ascontiguousarray(age1, dtype=float),
                           np.ascontiguousarray(year1, dtype=float),
                           np.ascontiguousarray(pop1, dtype=np.intp),
                           np.ascontiguousarray(age2, dtype=float),
                           np.ascontiguousarray(year2, dtype=float),
                           np.ascontiguousarray(pop2, dtype=np.intp),
                           1.0 / spec.theta_ag ** 2, 1.0 / spec.theta_yr ** 2, P)


def build_cov_matrix(panel, spec: KernelSpec) -> tuple[np.ndarray, np.ndarray]:
    """Training covariance ``C`` and ``C + Sigma`` for a panel.

    Rows follow the panel ordering (population, year, age).  Non-isotropic
    panels need no special handling: every entry is formed pointwise as
    ``P[l_i, l_j] * k(x_i, x_j)``, which is exactly the selection of the
    observed rows from the complete-data Kronecker covariance.
    """
    if spec.L != panel.L:
        raise KernelError(f"kernel has {spec.L} populations, panel has {panel.L}")
    P = np.ascontiguousarray(spec.population_matrix())
    C = _core.cov_sym(np.ascontiguousarray(panel.age, dtype=float),
                      np.ascontiguousarray(panel.year, dtype=float),
                      np.ascontiguousarray(panel.pop, dtype=np.intp),
                      1.0 / spec.theta_ag ** 2, 1.0 / spec.theta_yr ** 2, P)
    K = C.copy()
    K[np.diag_indices_from(K)] += spec.sigma2[panel.pop]
    return C, K


def stable_cholesky(K: np.ndarray):
    """``cho_factor`` with escalating diagonal jitter.

    Tries the matrix as given, then adds ``1e-10 * mean(diag)`` multiplied by
    10 each attempt up to ``1e-6 * mean(diag)``.  Returns ``(factor, jitter)``.
    """
    scale = float(np.mean(np.diag(K))) if K.size else 1.0
    jitter = 0.0
    level = JITTER_START
    while True:
        try:
            A = K if jitter == 0.0 else K + jitter * np.eye(len(K))
            return cho_factor(A, lower=True, check_finite=False), jitter
        except np.linalg.LinAlgError:
            pass
        if level > JITTER_STOP * (1 + 1e-9):
            raise ConditioningError(
                f"Cholesky failed with jitter up to {JITTER_STOP:g} * mean(diag)")
        jitter = level * scale
        level *= 10


def se_eig(coords: np.ndarray, theta: float):
    """Eigendecomposition of the unit-variance 1-D SE kernel matrix on ``coords``."""
    d = np.subtract.outer(coords, coords)
    K = np.exp(-0.5 * (d / theta) ** 2)
    s, V = eigh(K)
    return np.clip(s, 0.0, None), V


def population_pairs(L: int):
    return list(combinations(range(L), 2))
