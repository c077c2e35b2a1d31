"""Exact GP inference: trend basis, universal kriging, marginal likelihood.

Two interchangeable linear-algebra back ends implement solves and
log-determinants of ``C + Sigma``:

* :class:`DenseSolver` - Cholesky of the full M x M matrix, any panel.
* :class:`KroneckerSolver` - isotropic panels only.  Whitening by the noise
  gives ``D^-1/2 B D^-1/2 (x) K + I``; eigendecompositions of the small
  population matrix and of the Age and Year SE factors diagonalize it.
"""
from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigh

from .data import MortalityPanel, Scaling
from .errors import ConditioningError, ContractError, DomainError, RankDeficientError
from .kernels import KernelSpec, build_cov_matrix, cross_cov, se_eig, stable_cholesky

LOG_2PI = math.log(2 * math.pi)


class Scenario(enum.IntEnum):
    """Trend scenarios for long-term forecasts.

    S1: intercept + age + population dummies (no long-run improvement).
    S2: S1 + estimated year slope.
    S3: S1 + year slope fixed by the modeler (``beta_yr_fixed``).
    """
    S1 = 1
    S2 = 2
    S3 = 3


@dataclass(frozen=True, eq=False)
class MeanSpec:
    scenario: Scenario = Scenario.S1
    beta_yr_fixed: float | None = None
    beta: np.ndarray | None = None  # fixed raw-scale coefficients of the free columns

    def __post_init__(self):
        sc = Scenario(self.scenario)
        object.__setattr__(self, "scenario", sc)
        if sc is Scenario.S3 and self.beta_yr_fixed is None:
            raise ValueError("scenario S3 needs beta_yr_fixed")
        if sc is not Scenario.S3 and self.beta_yr_fixed is not None:
            raise ValueError("beta_yr_fixed only applies to scenario S3")
        if self.beta is not None:
            b = np.atleast_1d(np.asarray(self.beta, dtype=float)).copy()
            b.setflags(write=False)
            object.__setattr__(self, "beta", b)

    @property
    def has_year(self) -> bool:
        return self.scenario is not Scenario.S1

    def n_basis(self, L: int) -> int:
        return (3 if self.has_year else 2) + (L - 1)

    def n_free(self, L: int) -> int:
        return self.n_basis(L) - (1 if self.scenario is Scenario.S3 else 0)

    def free_names(self, populations: Sequence[str]) -> list[str]:
        names = ["beta_0", "beta_ag"]
        if self.scenario is Scenario.S2:
            names.append("beta_yr")
        return names + [f"beta_pop:{p}" for p in populations[1:]]

    def fixed(self, beta) -> "MeanSpec":
        return MeanSpec(self.scenario, self.beta_yr_fixed, beta)


def mean_basis(pop, age, year, scenario=Scenario.S1, L: int = 1) -> np.ndarray:
    """Trend basis rows ``h(x)``: (1, age, [year], dummies for populations 2..L).

    Scalar inputs return a vector, array inputs an ``(n, p)`` matrix.
    """
    scalar = np.ndim(age) == 0
    pop = np.atleast_1d(np.asarray(pop, dtype=np.intp))
    age = np.atleast_1d(np.asarray(age, dtype=float))
    year = np.atleast_1d(np.asarray(year, dtype=float))
    if np.any(pop < 0) or np.any(pop >= L):
        raise DomainError(f"population index outside 0..{L - 1}")
    cols = [np.ones_like(age), age]
    if Scenario(scenario) is not Scenario.S1:
        cols.append(year)
    dummies = (pop[:, None] == np.arange(1, L)[None, :]).astype(float)
    H = np.column_stack(cols + [dummies]) if L > 1 else np.column_stack(cols)
    return H[0] if scalar else H


def design(pop, age, year, mean: MeanSpec, L: int, year_scale: float = 1.0):
    """Free-column design matrix and fixed offset.

    For S3 the year column leaves the basis and ``beta_yr_fixed * year`` becomes
    an offset; ``year_scale`` converts standardized years back to year units.
    """
    H = mean_basis(pop, age, year, mean.scenario, L)
    H = np.atleast_2d(H)
    if mean.scenario is Scenario.S3:
        offset = mean.beta_yr_fixed * year_scale * H[:, 2]
        H = np.delete(H, 2, axis=1)
    else:
        offset = np.zeros(len(H))
    return H, offset


def beta_to_raw(b_std: np.ndarray, mean: MeanSpec, scaling: Scaling) -> np.ndarray:
    """Back-transform free coefficients fitted on standardized Age/Year."""
    b = np.array(b_std, dtype=float)
    out = b.copy()
    out[1] = b[1] / scaling.sigma_ag
    out[0] = b[0] - out[1] * scaling.mu_ag
    if mean.scenario is Scenario.S2:
        out[2] = b[2] / scaling.sigma_yr
        out[0] -= out[2] * scaling.mu_yr
    elif mean.scenario is Scenario.S3:
        out[0] -= mean.beta_yr_fixed * scaling.mu_yr
    return out


def beta_to_std(b_raw: np.ndarray, mean: MeanSpec, scaling: Scaling) -> np.ndarray:
    b = np.array(b_raw, dtype=float)
    out = b.copy()
    out[1] = b[1] * scaling.sigma_ag
    out[0] = b[0] + b[1] * scaling.mu_ag
    if mean.scenario is Scenario.S2:
        out[2] = b[2] * scaling.sigma_yr
        out[0] += b[2] * scaling.mu_yr
    elif mean.scenario is Scenario.S3:
        out[0] += mean.beta_yr_fixed * scaling.mu_yr
    return out


def check_full_rank(H: np.ndarray, names: Sequence[str] | None = None) -> None:
    """Raise RankDeficientError naming the columns that add nothing to the span."""
    names = list(names) if names is not None else [f"col{j}" for j in range(H.shape[1])]
    if H.shape[0] < H.shape[1]:
        raise RankDeficientError(f"{H.shape[0]} rows cannot identify {H.shape[1]} trend coefficients")
    if np.linalg.matrix_rank(H) == H.shape[1]:
        return
    bad, kept = [], []
    for j in range(H.shape[1]):
        trial = kept + [j]
        if np.linalg.matrix_rank(H[:, trial]) < len(trial):
            bad.append(names[j])
        else:
            kept = trial
    if bad:
        raise RankDeficientError(f"trend basis is rank deficient; collinear columns: {bad}")


# ---------------------------------------------------------------------------
# Solvers


class DenseSolver:
    """Cholesky-based solves with ``C + Sigma`` (jitter policy applied)."""

    def __init__(self, K: np.ndarray):
        self.M = len(K)
        self.factor, self.jitter = stable_cholesky(K)
        self.logdet = 2.0 * float(np.sum(np.log(np.diag(self.factor[0]))))

    def solve(self, R: np.ndarray) -> np.ndarray:
        return cho_solve(self.factor, R, check_finite=False)


def _apply(mat: np.ndarray, X: np.ndarray, axis: int) -> np.ndarray:
    return np.moveaxis(np.tensordot(mat, X, axes=(1, axis)), 0, axis)


class KroneckerSolver:
    """Solves with ``B (x) K + diag(sigma2) (x) I`` via eigendecompositions.

    ``factors`` is a list of ``(eigenvalues, eigenvectors)`` whose Kronecker
    product is ``K`` (one dense factor, or Year then Age for a grid).
    Cost per right-hand side is O(L N (L + sum of factor sizes)).
    """

    def __init__(self, B: np.ndarray, sigma2: np.ndarray, factors):
        B = np.asarray(B, dtype=float)
        sigma2 = np.asarray(sigma2, dtype=float)
        if np.any(sigma2 <= 0):
            raise ContractError("Kronecker path needs positive noise variances")
        self.L = len(sigma2)
        self.shape = (self.L,) + tuple(len(s) for s, _ in factors)
        self.N = int(np.prod(self.shape[1:]))
        self.M = self.L * self.N
        self.d_isqrt = 1.0 / np.sqrt(sigma2)
        Bt = B * np.outer(self.d_isqrt, self.d_isqrt)
        lam, self.U = eigh(0.5 * (Bt + Bt.T))
        self.factors = [V for _, V in factors]
        ev = lam
        for s, _ in factors:
            ev = np.multiply.outer(ev, s)
        self.ev = ev + 1.0
        if np.any(self.ev <= 0):
            raise ConditioningError("coregionalization matrix is not positive semidefinite")
        self.logdet = float(np.sum(np.log(self.ev))) + self.N * float(np.sum(np.log(sigma2)))

    @classmethod
    def from_dense(cls, B, K, sigma2):
        s, V = eigh(0.5 * (K + K.T))
        return cls(B, sigma2, [(np.clip(s, 0.0, None), V)])

    def _rotate(self, X, transpose: bool):
        X = _apply(self.U.T if transpose else self.U, X, 0)
        for ax, V in enumerate(self.factors, start=1):
            X = _apply(V.T if transpose else V, X, ax)
        return X

    def solve(self, R: np.ndarray) -> np.ndarray:
        R = np.asarray(R, dtype=float)
        vec = R.ndim == 1
        k = 1 if vec else R.shape[1]
        if R.shape[0] != self.M:
            raise ContractError(f"right-hand side has {R.shape[0]} rows, expected {self.M}")
        X = R.reshape(self.shape + (k,))
        scale = self.d_isqrt.reshape((-1,) + (1,) * len(self.shape))
        X = X * scale
        X = self._rotate(X, transpose=True)
        X = X / self.ev[..., None]
        X = self._rotate(X, transpose=False)
        X = X * scale
        X = X.reshape(self.M, k)
        return X[:, 0] if vec else X


def grid_solver(panel: MortalityPanel, spec: KernelSpec) -> KroneckerSolver:
    """Kronecker solver for an isotropic panel (ordering population, year, age)."""
    if not panel.isotropic:
        raise ContractError("Kronecker fast path requires an isotropic panel; use the dense path")
    if spec.L != panel.L:
        raise ContractError(f"kernel has {spec.L} populations, panel has {panel.L}")
    f_yr = se_eig(panel.years, spec.theta_yr)
    f_ag = se_eig(panel.ages, spec.theta_ag)
    return KroneckerSolver(spec.population_matrix(), spec.sigma2, [f_yr, f_ag])


def make_solver(panel: MortalityPanel, spec: KernelSpec, method: str = "auto"):
    if method == "auto":
        method = "kronecker" if panel.isotropic else "dense"
    if method == "kronecker":
        return grid_solver(panel, spec)
    if method == "dense":
        return DenseSolver(build_cov_matrix(panel, spec)[1])
    raise ValueError(f"unknown solver method {method!r}")


# ---------------------------------------------------------------------------
# GLS and likelihood


@dataclass(frozen=True)
class BetaPrior:
    """Independent Gaussian prior on (some) trend coefficients; precision 0 = flat."""
    mean: np.ndarray
    precision: np.ndarray

    def logpdf(self, beta: np.ndarray) -> float:
        m = self.precision > 0
        if not np.any(m):
            return 0.0
        p = self.precision[m]
        r = beta[m] - self.mean[m]
        return float(0.5 * np.sum(np.log(p)) - 0.5 * m.sum() * LOG_2PI - 0.5 * np.sum(p * r * r))


@dataclass
class GLSResult:
    beta: np.ndarray
    cov: np.ndarray  # (H^T K^-1 H + prior precision)^-1
    KiH: np.ndarray
    cov_factor: tuple
    residual: np.ndarray
    alpha: np.ndarray  # K^-1 residual
    loglik: float


def gls_fit(solver, H: np.ndarray, y: np.ndarray, prior: BetaPrior | None = None,
            beta_fixed: np.ndarray | None = None) -> GLSResult:
    """GLS (or fixed) trend coefficients, residual solve and Gaussian log-likelihood.

    The log-likelihood is the MVN density of ``y`` with mean ``H beta`` at the
    returned beta, i.e. the profile likelihood when beta is estimated.
    """
    KiH = solver.solve(H) if H.shape[1] else np.zeros_like(H)
    if beta_fixed is not None:
        beta = np.asarray(beta_fixed, dtype=float)
        cov = np.zeros((H.shape[1], H.shape[1]))
        cf = None
    else:
        A = H.T @ KiH
        b = KiH.T @ y
        if prior is not None:
            A = A + np.diag(prior.precision)
            b = b + prior.precision * prior.mean
        try:
            cf = cho_factor(0.5 * (A + A.T), lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            raise RankDeficientError("H^T (C+Sigma)^-1 H is singular") from None
        beta = cho_solve(cf, b, check_finite=False)
        cov = cho_solve(cf, np.eye(len(b)), check_finite=False)
    r = y - H @ beta
    alpha = solver.solve(r)
    loglik = -0.5 * float(r @ alpha) - 0.5 * solver.logdet - 0.5 * len(y) * LOG_2PI
    return GLSResult(beta, cov, KiH, cf, r, alpha, loglik)


def gls_beta(H: np.ndarray, y: np.ndarray, K: np.ndarray, names=None):
    """GLS estimate ``(H^T K^-1 H)^-1 H^T K^-1 y`` and its covariance, by Cholesky solves."""
    H = np.atleast_2d(np.asarray(H, dtype=float))
    if H.shape[0] == 1 and len(y) != 1:
        H = H.T
    check_full_rank(H, names)
    res = gls_fit(DenseSolver(np.asarray(K, dtype=float)), H, np.asarray(y, dtype=float))
    return res.beta, res.cov


def kronecker_loglik_and_solve(B, K, D, y, H=None):
    """Profile log-likelihood and solves for ``B (x) K + D (x) I``.

    ``y`` must be ordered population-major with each block matching ``K``'s
    row order; ``D`` is the vector (or diagonal matrix) of per-population noise
    variances.  Returns ``(loglik, GLSResult)``.
    """
    B = np.atleast_2d(np.asarray(B, dtype=float))
    K = np.atleast_2d(np.asarray(K, dtype=float))
    D = np.asarray(D, dtype=float)
    if D.ndim == 2:
        D = np.diag(D)
    y = np.asarray(y, dtype=float)
    if B.shape[0] != len(D) or len(y) != B.shape[0] * K.shape[0]:
        raise ContractError("y is not an isotropic L x N stack matching B and K")
    solver = KroneckerSolver.from_dense(B, K, D)
    if H is None:
        H = np.zeros((len(y), 0))
    res = gls_fit(solver, np.asarray(H, dtype=float), y)
    return res.loglik, res


class LikelihoodEvaluator:
    """Repeated likelihood evaluations on one (already scaled) panel.

    Precomputes the trend design so the optimizer only pays for the solver.
    """

    def __init__(self, panel: MortalityPanel, mean: MeanSpec, year_scale: float = 1.0,
                 beta_prior: BetaPrior | None = None, method: str = "auto",
                 beta_fixed_std: np.ndarray | None = None):
        self.panel = panel
        self.mean = mean
        self.method = "kronecker" if method == "auto" and panel.isotropic else (
            "dense" if method == "auto" else method)
        self.H, self.offset = design(panel.pop, panel.age, panel.year, mean, panel.L, year_scale)
        self.y = panel.y - self.offset
        self.beta_prior = beta_prior
        self.beta_fixed = beta_fixed_std
        if beta_fixed_std is None and (beta_prior is None or np.any(beta_prior.precision == 0)):
            check_full_rank(self.H, mean.free_names(panel.populations))

    def fit(self, spec: KernelSpec) -> tuple[GLSResult, object]:
        solver = make_solver(self.panel, spec, self.method)
        return gls_fit(solver, self.H, self.y, self.beta_prior, self.beta_fixed), solver

    def loglik(self, spec: KernelSpec) -> float:
        return self.fit(spec)[0].loglik


def log_marginal_likelihood(panel: MortalityPanel, kernel: KernelSpec, mean: MeanSpec = MeanSpec(),
                            scaling: Scaling | None = None, method: str = "auto") -> float:
    """Gaussian log marginal likelihood of the panel.

    Trend coefficients are profiled out by GLS unless ``mean.beta`` fixes them.
    With ``scaling`` the computation runs on standardized coordinates (kernel
    and trend given in original units); the value is unchanged.
    """
    post = Posterior(panel, kernel, mean, scaling=scaling, method=method)
    return post.loglik


# ---------------------------------------------------------------------------
# Prediction


@dataclass
class PredictionResult:
    populations: tuple[str, ...]
    pop: np.ndarray
    age: np.ndarray
    year: np.ndarray
    mean: np.ndarray
    sd_f: np.ndarray
    sd_y: np.ndarray
    noise: np.ndarray
    cov_f: np.ndarray | None = None
    samples: np.ndarray | None = None

    @property
    def cov_y(self) -> np.ndarray | None:
        if self.cov_f is None:
            return None
        return self.cov_f + np.diag(self.noise)

    def interval(self, z: float = 1.96, observed: bool = True):
        sd = self.sd_y if observed else self.sd_f
        return self.mean - z * sd, self.mean + z * sd

    def rows(self):
        lo, hi = self.interval()
        for i in range(len(self.mean)):
            yield {"population": self.populations[self.pop[i]], "age": self.age[i],
                   "year": self.year[i], "mean": self.mean[i], "sd_f": self.sd_f[i],
                   "sd_y": self.sd_y[i], "lo95": lo[i], "hi95": hi[i]}

    def to_csv(self, dest) -> None:
        """Write ``population,age,year,mean,sd_f,sd_y,lo95,hi95`` rows."""
        if isinstance(dest, (str, Path)):
            with open(dest, "w", newline="", encoding="utf-8") as fh:
                return self.to_csv(fh)
        cols = ["population", "age", "year", "mean", "sd_f", "sd_y", "lo95", "hi95"]
        w = csv.writer(dest, lineterminator="\n")
        w.writerow(cols)
        for r in self.rows():
            w.writerow([r["population"], _fmt_num(r["age"]), _fmt_num(r["year"])]
                       + [repr(float(r[c])) for c in cols[3:]])

    def samples_to_csv(self, paths: np.ndarray, dest) -> None:
        """Write sample paths in long form: ``path,population,age,year,value``."""
        if isinstance(dest, (str, Path)):
            with open(dest, "w", newline="", encoding="utf-8") as fh:
                return self.samples_to_csv(paths, fh)
        w = csv.writer(dest, lineterminator="\n")
        w.writerow(["path", "population", "age", "year", "value"])
        labels = [(self.populations[self.pop[i]], _fmt_num(self.age[i]), _fmt_num(self.year[i]))
                  for i in range(len(self.mean))]
        for k, row in enumerate(np.asarray(paths)):
            for lab, v in zip(labels, row):
                w.writerow([k, *lab, repr(float(v))])


def _fmt_num(v) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


class Posterior:
    """Conditioned GP: caches the factorization, trend estimate and residual solve.

    Inputs are in original units.  With ``scaling`` all computations run on
    standardized Age/Year; the kernel lengthscales are rescaled accordingly.
    ``mean.beta`` (raw units) fixes the trend; otherwise it is estimated by GLS
    (optionally with a Gaussian ``beta_prior`` on the standardized scale) and
    its uncertainty enters the predictive variance.
    """

    def __init__(self, panel: MortalityPanel, kernel: KernelSpec, mean: MeanSpec = MeanSpec(),
                 scaling: Scaling | None = None, beta_prior: BetaPrior | None = None,
                 method: str = "auto"):
        if kernel.L != panel.L:
            raise ContractError(f"kernel has {kernel.L} populations, panel has {panel.L}")
        self.panel = panel
        self.kernel = kernel
        self.mean = mean
        self.scaling = scaling or Scaling.identity()
        sc = self.scaling
        a, t = sc.standardize(panel.age, panel.year)
        self._panel_s = panel.with_coords(a, t)
        self._kernel_s = kernel.rescaled(sc.sigma_ag, sc.sigma_yr)
        beta_fixed = None if mean.beta is None else beta_to_std(mean.beta, mean, sc)
        self._ev = LikelihoodEvaluator(self._panel_s, mean, sc.sigma_yr, beta_prior, method,
                                       beta_fixed)
        self._gls, self._solver = self._ev.fit(self._kernel_s)
        self.estimated = beta_fixed is None
        self.loglik = self._gls.loglik
        self.beta_std = self._gls.beta
        self.beta = beta_to_raw(self._gls.beta, mean, sc)
        self.beta_names = mean.free_names(panel.populations)
        self._P = kernel.population_matrix()

    @property
    def method(self) -> str:
        return self._ev.method

    def beta_dict(self) -> dict[str, float]:
        return dict(zip(self.beta_names, map(float, self.beta)))

    def trend(self, pop, age, year) -> np.ndarray:
        """Prior mean ``h(x)^T beta`` (plus the S3 offset) in original units."""
        pop = np.atleast_1d(np.asarray(pop, dtype=np.intp))
        a, t = self.scaling.standardize(age, year)
        H, off = design(pop, np.atleast_1d(a), np.atleast_1d(t), self.mean, self.panel.L,
                        self.scaling.sigma_yr)
        return H @ self.beta_std + off

    def _resolve_pop(self, pop) -> np.ndarray:
        out = []
        for p in np.atleast_1d(pop):
            if isinstance(p, (str, np.str_)):
                if p not in self.panel.populations:
                    raise DomainError(f"unknown population {p!r}")
                out.append(self.panel.populations.index(p))
            else:
                if not 0 <= int(p) < self.panel.L:
                    raise DomainError(f"unknown population index {p}")
                out.append(int(p))
        return np.asarray(out, dtype=np.intp)

    def predict(self, pop, age, year, want_joint: bool = False) -> PredictionResult:
        """Posterior mean and standard deviations of f* and y* at the given cells."""
        pop = self._resolve_pop(pop)
        age = np.atleast_1d(np.asarray(age, dtype=float))
        year = np.atleast_1d(np.asarray(year, dtype=float))
        if not (len(pop) == len(age) == len(year)):
            raise ValueError("pop, age and year must have equal length")
        a_s, t_s = self.scaling.standardize(age, year)
        ps, ks = self._panel_s, self._kernel_s
        c = cross_cov(ps.pop, ps.age, ps.year, pop, a_s, t_s, ks)
        Kic = self._solver.solve(c) if len(c) else c
        Hs, off = design(pop, a_s, t_s, self.mean, ps.L, self.scaling.sigma_yr)
        m = Hs @ self._gls.beta + off + c.T @ self._gls.alpha
        prior_var = self._P[pop, pop]
        var = prior_var - np.einsum("ij,ij->j", c, Kic)
        U = None
        if self.estimated and Hs.shape[1]:
            U = Hs.T - self._gls.KiH.T @ c
            var = var + np.einsum("ij,ij->j", U, self._gls.cov @ U)
        var = np.maximum(var, 0.0)
        noise = self.kernel.sigma2[pop]
        cov = None
        if want_joint:
            cov = cross_cov(pop, a_s, t_s, pop, a_s, t_s, ks) - c.T @ Kic
            if U is not None:
                cov = cov + U.T @ self._gls.cov @ U
            cov = 0.5 * (cov + cov.T)
        return PredictionResult(self.panel.populations, pop, age, year, m, np.sqrt(var),
                                np.sqrt(var + noise), noise, cov)

    def predict_grid(self, population, ages, years, want_joint: bool = False) -> PredictionResult:
        ages = np.asarray(list(ages), float)
        years = np.asarray(list(years), float)
        A, T = np.meshgrid(ages, years)
        pop = self._resolve_pop([population] * A.size)
        return self.predict(pop, A.ravel(), T.ravel(), want_joint)


def predict(posterior: Posterior, cells, want_joint: bool = False, want_y: bool = True):
    """Predict at ``cells``, a sequence of ``(population, age, year)`` triples."""
    cells = list(cells)
    pop = [c[0] for c in cells]
    res = posterior.predict(pop, [c[1] for c in cells], [c[2] for c in cells], want_joint)
    if not want_y:
        res.sd_y = res.sd_f.copy()
    return res


def sample_posterior(result: PredictionResult, n_paths: int, seed: int,
                     observed: bool = False) -> np.ndarray:
    """Joint draws ``(n_paths, n_cells)`` from the predictive MVN.

    ``observed`` samples y* (adds noise) instead of the latent f*.
    """
    if result.cov_f is None:
        raise ValueError("prediction has no joint covariance; use want_joint=True")
    cov = result.cov_y if observed else result.cov_f
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_paths, len(result.mean)))
    if not np.any(cov):
        return np.tile(result.mean, (n_paths, 1))
    (Lf, _), _ = stable_cholesky(cov)
    Lf = np.tril(Lf)
    return result.mean + z @ Lf.T
