"""Hyperparameter estimation, BIC and ICM rank selection, model persistence.

Fitting always runs on standardized Age/Year.  The trend coefficients are
profiled out by (penalized) GLS inside every objective evaluation, so the
optimizer only sees covariance and noise parameters:

    SOGP       log theta_ag, log theta_yr, log eta2, log sigma2
    FULL_RANK  log theta_ag, log theta_yr, log eta2, log theta_{l1,l2} (pairs), log sigma2_l
    ICM(Q)     log theta_ag, log theta_yr, A (L x Q, row-major), log sigma2_l
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.special import gammaln
from scipy.stats import qmc

from .data import MortalityPanel, Scaling, standardize
from .errors import (ConditioningError, FitError, KernelError, ModelFormatError,
                     RankDeficientError)
from .gp import BetaPrior, LikelihoodEvaluator, MeanSpec, Posterior, Scenario, beta_to_raw
from .kernels import Family, KernelSpec

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
PENALTY = 1e30


@dataclass(frozen=True)
class OptimizerConfig:
    """Multi-start optimizer settings.

    Bounds are on the standardized scale: ``theta`` for Age/Year lengthscales,
    ``sigma2`` for noise, ``eta2`` for the FULL_RANK/SOGP process variance,
    ``cross_theta`` for FULL_RANK pair parameters and ``loading`` for ICM.
    """
    n_starts: int = 10
    max_iters: int = 20000
    tolerance: float = 1e-8
    seed: int = 0
    method: str = "nelder-mead"
    theta_bounds: tuple[float, float] = (0.05, 10.0)
    sigma2_bounds: tuple[float, float] = (1e-8, 1.0)
    eta2_bounds: tuple[float, float] = (1e-6, 10.0)
    cross_theta_bounds: tuple[float, float] = (1e-4, 10.0)
    loading_bounds: tuple[float, float] = (-3.0, 3.0)
    record_trace: bool = False

    def __post_init__(self):
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")
        for name in ("theta_bounds", "sigma2_bounds", "eta2_bounds", "cross_theta_bounds",
                     "loading_bounds"):
            lo, hi = getattr(self, name)
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise ValueError(f"{name} must be finite and ordered")
        if self.method not in ("nelder-mead", "l-bfgs-b"):
            raise ValueError(f"unknown optimizer method {self.method!r}")


@dataclass(frozen=True)
class PriorSpec:
    """Priors for MAP estimation (standardized inputs).  ``None`` = flat.

    Normal priors are given as ``(mean, sd)``, inverse-gamma as ``(shape, scale)``.
    """
    beta0: tuple[float, float] | None = (-4.0, 0.5)
    beta_ag: tuple[float, float] | None = (0.0, 0.5)
    theta_ag: tuple[float, float] | None = (9.0, 12.0)
    theta_yr: tuple[float, float] | None = (9.0, 12.0)
    log_eta2: tuple[float, float] | None = (-3.0, 1.0)
    sigma2_sd: float | None = 0.5
    log_cross_theta: tuple[float, float] | None = (-1.0, 1.0)

    @classmethod
    def flat(cls) -> "PriorSpec":
        return cls(None, None, None, None, None, None, None)

    def beta_prior(self, n_free: int) -> BetaPrior | None:
        mean = np.zeros(n_free)
        prec = np.zeros(n_free)
        for j, p in ((0, self.beta0), (1, self.beta_ag)):
            if p is not None:
                mean[j], prec[j] = p[0], 1.0 / p[1] ** 2
        return BetaPrior(mean, prec) if np.any(prec) else None

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def _norm_logpdf(x, mean, sd):
    return -0.5 * ((x - mean) / sd) ** 2 - math.log(sd) - 0.5 * math.log(2 * math.pi)


def _invgamma_logpdf(x, a, b):
    return a * math.log(b) - gammaln(a) - (a + 1) * math.log(x) - b / x


def log_prior(spec_std: KernelSpec, priors: PriorSpec) -> float:
    """Log prior density of the covariance/noise parameters (standardized scale)."""
    lp = 0.0
    if priors.theta_ag is not None:
        lp += _invgamma_logpdf(spec_std.theta_ag, *priors.theta_ag)
    if priors.theta_yr is not None:
        lp += _invgamma_logpdf(spec_std.theta_yr, *priors.theta_yr)
    if spec_std.family is not Family.ICM and priors.log_eta2 is not None:
        lp += _norm_logpdf(math.log(spec_std.eta2), *priors.log_eta2)
    if priors.sigma2_sd is not None:
        sd = priors.sigma2_sd
        lp += float(np.sum(_norm_logpdf(spec_std.sigma2, 0.0, sd) + math.log(2.0)))
    if spec_std.family is Family.FULL_RANK and priors.log_cross_theta is not None:
        ct = np.maximum(spec_std.cross_thetas, 1e-300)
        lp += float(np.sum(_norm_logpdf(np.log(ct), *priors.log_cross_theta)))
    return lp


# ---------------------------------------------------------------------------
# Parameter layout


class ParamLayout:
    """Maps the unconstrained optimizer vector to a standardized KernelSpec."""

    def __init__(self, family: Family, L: int, Q: int | None, config: OptimizerConfig):
        self.family = Family(family)
        self.L = L
        self.Q = Q
        if self.family is Family.SOGP and L != 1:
            raise FitError("SOGP needs a single-population panel")
        if self.family is Family.ICM and (Q is None or not 1 <= Q <= L):
            raise FitError(f"ICM rank must satisfy 1 <= Q <= L={L}, got {Q}")
        c = config
        lt = tuple(map(math.log, c.theta_bounds))
        ls = tuple(map(math.log, c.sigma2_bounds))
        self.names = ["log_theta_ag", "log_theta_yr"]
        self.bounds = [lt, lt]
        if self.family is not Family.ICM:
            self.names.append("log_eta2")
            self.bounds.append(tuple(map(math.log, c.eta2_bounds)))
        if self.family is Family.FULL_RANK:
            n_pairs = L * (L - 1) // 2
            self.names += [f"log_cross_theta[{i}]" for i in range(n_pairs)]
            self.bounds += [tuple(map(math.log, c.cross_theta_bounds))] * n_pairs
        if self.family is Family.ICM:
            self.names += [f"A[{l},{q}]" for l in range(L) for q in range(Q)]
            self.bounds += [tuple(c.loading_bounds)] * (L * Q)
        self.names += [f"log_sigma2[{l}]" for l in range(L)]
        self.bounds += [ls] * L

    @property
    def dim(self) -> int:
        return len(self.names)

    def to_spec(self, x: np.ndarray) -> KernelSpec:
        x = np.asarray(x, dtype=float)
        L = self.L
        sigma2 = np.exp(x[-L:])
        th_a, th_y = math.exp(x[0]), math.exp(x[1])
        if self.family is Family.ICM:
            A = x[2:2 + L * self.Q].reshape(L, self.Q)
            return KernelSpec(Family.ICM, th_a, th_y, sigma2, A=A)
        eta2 = math.exp(x[2])
        ct = np.exp(x[3:3 + L * (L - 1) // 2]) if self.family is Family.FULL_RANK else None
        return KernelSpec(self.family, th_a, th_y, sigma2, eta2=eta2, cross_thetas=ct)

    def from_spec(self, spec: KernelSpec) -> np.ndarray:
        """Inverse of :meth:`to_spec`, clipped into the bounds."""
        x = [math.log(spec.theta_ag), math.log(spec.theta_yr)]
        if self.family is Family.ICM:
            x += list(np.asarray(spec.A, float).ravel())
        else:
            x.append(math.log(spec.eta2))
            if self.family is Family.FULL_RANK:
                x += list(np.log(np.maximum(spec.cross_thetas, 1e-300)))
        x += list(np.log(spec.sigma2))
        b = np.array(self.bounds, dtype=float)
        return np.clip(np.array(x, dtype=float), b[:, 0], b[:, 1])

    def init_box(self, v: float) -> np.ndarray:
        """Box (dim x 2) for starting points, scaled by the residual variance ``v``."""
        lo_hi = [(math.log(0.3), math.log(2.0))] * 2
        if self.family is not Family.ICM:
            lo_hi.append((math.log(0.2 * v), math.log(2.0 * v)))
        if self.family is Family.FULL_RANK:
            lo_hi += [(math.log(0.01), math.log(1.0))] * (self.L * (self.L - 1) // 2)
        if self.family is Family.ICM:
            s = math.sqrt(v)
            for _ in range(self.L):
                lo_hi.append((0.3 * s, 1.0 * s))
                lo_hi += [(-0.5 * s, 0.5 * s)] * (self.Q - 1)
        lo_hi += [(math.log(1e-3 * v), math.log(0.3 * v))] * self.L
        box = np.array(lo_hi, dtype=float)
        b = np.array(self.bounds, dtype=float)
        return np.column_stack([np.clip(box[:, 0], b[:, 0], b[:, 1]),
                                np.clip(box[:, 1], b[:, 0], b[:, 1])])


def canonicalize_loadings(A: np.ndarray) -> np.ndarray:
    """Fix the sign/order indeterminacy of ICM loadings (B = A A^T is unchanged).

    Columns are ordered by descending norm and each column's first entry that
    is not negligible is made positive.
    """
    A = np.array(A, dtype=float)
    norms = np.linalg.norm(A, axis=0)
    A = A[:, np.argsort(-norms, kind="stable")]
    for q in range(A.shape[1]):
        col = A[:, q]
        tol = 1e-12 * max(1.0, np.abs(col).max())
        nz = np.flatnonzero(np.abs(col) > tol)
        if len(nz) and col[nz[0]] < 0:
            A[:, q] = -col
    return A


# ---------------------------------------------------------------------------
# Fitted model


def count_params(family: Family, L: int, Q: int | None, mean: MeanSpec) -> int:
    """Free continuous parameters: lengthscales, cross-population parameters,
    eta2 where free, L noise variances and the estimated trend coefficients."""
    family = Family(family)
    k = 2 + L + mean.n_free(L)
    if family is Family.SOGP:
        k += 1
    elif family is Family.FULL_RANK:
        k += 1 + L * (L - 1) // 2
    else:
        k += L * Q
    return k


def bic(model_or_loglik, k: int | None = None, M: int | None = None) -> float:
    """``k log(M) - 2 loglik``; smaller is better.

    Accepts a :class:`FittedModel` or explicit ``(loglik, k, M)``.
    """
    if isinstance(model_or_loglik, FittedModel):
        m = model_or_loglik
        return m.k * math.log(m.M) - 2.0 * m.loglik
    if k == 0:
        return -2.0 * float(model_or_loglik)
    return k * math.log(M) - 2.0 * float(model_or_loglik)


@dataclass(frozen=True, eq=False)
class FittedModel:
    """Immutable result of a fit.  Kernel lengthscales and trend coefficients
    are in original Age/Year units; ``scaling`` records the standardization."""
    populations: tuple[str, ...]
    kernel: KernelSpec
    mean: MeanSpec
    scaling: Scaling
    loglik: float
    k: int
    M: int
    panel_digest: str
    objective: str = "mle"
    log_prior: float | None = None
    priors: PriorSpec | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def family(self) -> Family:
        return self.kernel.family

    @property
    def Q(self) -> int | None:
        return self.kernel.rank

    @property
    def bic(self) -> float:
        return bic(self)

    @property
    def beta(self) -> dict[str, float]:
        return dict(zip(self.mean.free_names(self.populations), map(float, self.mean.beta)))

    def beta_prior(self) -> BetaPrior | None:
        if self.priors is None:
            return None
        return self.priors.beta_prior(self.mean.n_free(len(self.populations)))

    def posterior(self, panel: MortalityPanel, check_digest: bool = True) -> Posterior:
        """Universal-kriging posterior on the training panel (trend re-estimated)."""
        if check_digest and panel.digest() != self.panel_digest:
            raise ModelFormatError(
                f"panel digest {panel.digest()} does not match model ({self.panel_digest})")
        mean = MeanSpec(self.mean.scenario, self.mean.beta_yr_fixed)
        return Posterior(panel, self.kernel, mean, scaling=self.scaling,
                         beta_prior=self.beta_prior())

    def recompute_loglik(self, panel: MortalityPanel) -> float:
        """Log-likelihood of the panel at the stored kernel and trend coefficients."""
        return Posterior(panel, self.kernel, self.mean, scaling=self.scaling).loglik


@dataclass
class _StartResult:
    index: int
    x0: np.ndarray
    x: np.ndarray | None
    fun: float
    nfev: int = 0
    success: bool = False
    message: str = ""
    trace: list = field(default_factory=list)


class _Objective:
    def __init__(self, evaluator: LikelihoodEvaluator, layout: ParamLayout,
                 priors: PriorSpec | None):
        self.ev = evaluator
        self.layout = layout
        self.priors = priors

    def terms(self, x):
        spec = self.layout.to_spec(x)
        res, _ = self.ev.fit(spec)
        lp = 0.0
        if self.priors is not None:
            lp = log_prior(spec, self.priors)
            if self.ev.beta_prior is not None:
                lp += self.ev.beta_prior.logpdf(res.beta)
        return spec, res, lp

    def __call__(self, x) -> float:
        try:
            _, res, lp = self.terms(x)
        except (KernelError, ConditioningError, RankDeficientError, np.linalg.LinAlgError,
                FloatingPointError):
            return PENALTY
        val = -(res.loglik + lp)
        return val if math.isfinite(val) else PENALTY


def _starting_points(layout: ParamLayout, v: float, config: OptimizerConfig) -> np.ndarray:
    box = layout.init_box(v)
    sampler = qmc.Halton(d=layout.dim, scramble=True, seed=config.seed)
    u = sampler.random(config.n_starts)
    return box[:, 0] + u * (box[:, 1] - box[:, 0])


def _run_start(obj: _Objective, i: int, x0: np.ndarray, layout: ParamLayout,
               config: OptimizerConfig) -> _StartResult:
    f0 = obj(x0)
    if not math.isfinite(f0) or f0 >= PENALTY:
        return _StartResult(i, x0, None, math.inf, 1, False, "non-finite objective at start")
    trace = [f0]
    callback = None
    if config.record_trace:
        def callback(xk):
            trace.append(obj(xk))
    if config.method == "nelder-mead":
        res = minimize(obj, x0, method="Nelder-Mead", bounds=layout.bounds, callback=callback,
                       options={"maxiter": config.max_iters, "maxfev": config.max_iters,
                                "xatol": 1e-6, "fatol": config.tolerance, "adaptive": True})
    else:
        res = minimize(obj, x0, method="L-BFGS-B", bounds=layout.bounds, callback=callback,
                       options={"maxiter": config.max_iters, "ftol": config.tolerance,
                                "maxfun": config.max_iters})
    return _StartResult(i, x0, res.x, float(res.fun), int(res.nfev), bool(res.success),
                        str(res.message), trace)


def _residual_variance(evaluator: LikelihoodEvaluator) -> float:
    H, y = evaluator.H, evaluator.y
    coef, *_ = np.linalg.lstsq(H, y, rcond=None)
    v = float(np.var(y - H @ coef))
    return v if v > 0 else 1e-4


def fit(panel: MortalityPanel, family: Family | str, mean: MeanSpec | int = Scenario.S1,
        config: OptimizerConfig | None = None, priors: PriorSpec | None = None,
        Q: int | None = None, method: str = "auto",
        warm_start: FittedModel | None = None) -> FittedModel:
    """Fit kernel hyperparameters by multi-start optimization.

    ``priors=None`` gives maximum likelihood; a :class:`PriorSpec` gives MAP.
    ``warm_start`` adds one extra start at a previous fit on the same panel;
    for ICM a lower-rank fit is padded with a small extra loading column.
    """
    config = config or OptimizerConfig()
    family = Family(family)
    if not isinstance(mean, MeanSpec):
        mean = MeanSpec(mean)
    if mean.beta is not None:
        raise FitError("mean.beta must be unset; trend coefficients are estimated")
    panel_s, scaling = standardize(panel)
    beta_prior = priors.beta_prior(mean.n_free(panel.L)) if priors is not None else None
    ev = LikelihoodEvaluator(panel_s, mean, scaling.sigma_yr, beta_prior, method)
    layout = ParamLayout(family, panel.L, Q, config)
    obj = _Objective(ev, layout, priors)
    v = _residual_variance(ev)
    starts = _starting_points(layout, v, config)
    if warm_start is not None:
        starts = np.vstack([starts, _warm_point(warm_start, layout, scaling, v)])

    results = [_run_start(obj, i, x0, layout, config) for i, x0 in enumerate(starts)]
    ok = [r for r in results if r.x is not None and r.fun < PENALTY]
    if not ok:
        raise FitError(f"all {len(results)} optimizer starts failed: "
                       + "; ".join(f"start {r.index}: {r.message}" for r in results))
    best = min(ok, key=lambda r: (r.fun, r.index))
    spec_std, res, lp = obj.terms(best.x)
    if family is Family.ICM:
        spec_std = replace_loadings(spec_std, canonicalize_loadings(spec_std.A))
    kernel = spec_std.rescaled(1.0 / scaling.sigma_ag, 1.0 / scaling.sigma_yr)
    beta_raw = beta_to_raw(res.beta, mean, scaling)
    k = count_params(family, panel.L, Q, mean)
    meta = {"n_starts": len(results), "n_ok": len(ok), "best_start": best.index,
            "converged": best.success, "method": config.method, "seed": config.seed,
            "starts": [{"index": r.index, "objective": r.fun if math.isfinite(r.fun) else None,
                        "nfev": r.nfev, "success": r.success} for r in results]}
    if config.record_trace:
        meta["traces"] = [r.trace for r in results]
    logger.info("fit %s Q=%s: loglik=%.4f best start %d/%d", family.value, Q, res.loglik,
                best.index, len(results))
    return FittedModel(panel.populations, kernel, mean.fixed(beta_raw), scaling, res.loglik, k,
                       panel.M, panel.digest(), "map" if priors is not None else "mle",
                       lp if priors is not None else None, priors, meta)


def _warm_point(model: FittedModel, layout: ParamLayout, scaling: Scaling, v: float):
    if model.family is not layout.family or len(model.kernel.sigma2) != layout.L:
        raise FitError("warm start must be a fit of the same family on the same populations")
    spec = model.kernel.rescaled(scaling.sigma_ag, scaling.sigma_yr)
    if layout.family is Family.ICM:
        A = np.asarray(spec.A, float)
        extra = layout.Q - A.shape[1]
        if extra < 0:
            raise FitError("warm start has higher ICM rank than the requested fit")
        sign = np.where(np.arange(layout.L) % 2 == 0, 1.0, -1.0)
        pad = 0.1 * math.sqrt(v) * np.repeat(sign[:, None], extra, axis=1)
        spec = replace_loadings(spec, np.hstack([A, pad]))
    return layout.from_spec(spec)


def replace_loadings(spec: KernelSpec, A: np.ndarray) -> KernelSpec:
    return KernelSpec(spec.family, spec.theta_ag, spec.theta_yr, spec.sigma2, A=A)


def fit_mle(panel, family, mean=Scenario.S1, config=None, Q=None, method="auto") -> FittedModel:
    return fit(panel, family, mean, config, None, Q, method)


def fit_map(panel, family, mean=Scenario.S1, priors: PriorSpec | None = None, config=None, Q=None,
            method="auto") -> FittedModel:
    return fit(panel, family, mean, config, priors if priors is not None else PriorSpec(), Q,
               method)


@dataclass
class RankScan:
    best_Q: int
    rows: list[dict]
    models: dict[int, FittedModel]

    def to_csv(self, dest) -> None:
        import csv
        if isinstance(dest, (str, Path)):
            with open(dest, "w", newline="") as fh:
                return self.to_csv(fh)
        w = csv.writer(dest, lineterminator="\n")
        w.writerow(["Q", "loglik", "k", "bic", "n_loadings", "selected", "status"])
        for r in self.rows:
            w.writerow([r["Q"], _num(r["loglik"]), r["k"], _num(r["bic"]), r["n_loadings"],
                        int(r["Q"] == self.best_Q), r["status"]])
        dest.write("# k counts all fitted parameters (lengthscales, loadings, noise, trend);"
                   " n_loadings is the L*Q kernel-hyperparameter count\n")


def _num(v):
    return "" if v is None else repr(float(v))


def select_rank(panel: MortalityPanel, Q_candidates: Sequence[int],
                config: OptimizerConfig | None = None, mean: MeanSpec | int = Scenario.S1,
                priors: PriorSpec | None = None) -> RankScan:
    """Fit ICM for each candidate rank and pick the minimum-BIC one.

    Ranks are fitted in increasing order and each fit also starts from the
    previous rank's optimum, so the maximized likelihood cannot drop as Q grows.
    """
    rows, models = [], {}
    prev = None
    for Q in sorted(Q_candidates):
        if not 1 <= Q <= panel.L:
            raise FitError(f"rank Q={Q} outside 1..L={panel.L}")
        try:
            m = fit(panel, Family.ICM, mean, config, priors, Q, warm_start=prev)
        except (FitError, ConditioningError, RankDeficientError) as exc:
            logger.warning("rank Q=%d failed: %s", Q, exc)
            rows.append({"Q": Q, "loglik": None, "k": None, "bic": None,
                         "n_loadings": panel.L * Q, "status": f"failed: {exc}"})
            continue
        models[Q] = prev = m
        rows.append({"Q": Q, "loglik": m.loglik, "k": m.k, "bic": m.bic,
                     "n_loadings": panel.L * Q, "status": "ok"})
    if not models:
        raise FitError("every candidate rank failed")
    best = min(models, key=lambda q: (models[q].bic, q))
    return RankScan(best, rows, models)


# ---------------------------------------------------------------------------
# Persistence


def model_to_dict(model: FittedModel) -> dict:
    k = model.kernel
    d = {
        "schema_version": SCHEMA_VERSION,
        "family": k.family.value,
        "populations": list(model.populations),
        "theta_ag": float(k.theta_ag),
        "theta_yr": float(k.theta_yr),
        "sigma2": [float(s) for s in k.sigma2],
        "beta": model.beta,
        "scenario": int(model.mean.scenario),
        "scaling": model.scaling.to_dict(),
        "loglik": float(model.loglik),
        "k": int(model.k),
        "M": int(model.M),
        "bic": float(model.bic),
        "panel_digest": model.panel_digest,
        "objective": model.objective,
        "metadata": model.metadata,
    }
    if model.mean.beta_yr_fixed is not None:
        d["beta_yr_fixed"] = float(model.mean.beta_yr_fixed)
    if k.family is Family.ICM:
        d["Q"] = int(k.rank)
        d["A"] = [[float(v) for v in row] for row in k.A]
    else:
        d["eta2"] = float(k.eta2)
    if k.family is Family.FULL_RANK:
        d["cross_thetas"] = [float(v) for v in k.cross_thetas]
    if model.objective == "map":
        d["log_prior"] = float(model.log_prior)
        d["priors"] = model.priors.to_dict()
    return d


def dumps_model(model: FittedModel) -> str:
    return json.dumps(model_to_dict(model), sort_keys=True, indent=2) + "\n"


def save_model(model: FittedModel, path) -> None:
    Path(path).write_text(dumps_model(model), encoding="utf-8")


def model_from_dict(d: dict) -> FittedModel:
    if d.get("schema_version") != SCHEMA_VERSION:
        raise ModelFormatError(f"unsupported schema_version {d.get('schema_version')!r}; "
                               f"expected {SCHEMA_VERSION}")
    try:
        family = Family(d["family"])
        pops = tuple(d["populations"])
        mean = MeanSpec(Scenario(d["scenario"]), d.get("beta_yr_fixed"))
        names = mean.free_names(pops)
        beta = d["beta"]
        if sorted(beta) != sorted(names):
            raise ModelFormatError(f"beta keys {sorted(beta)} do not match {sorted(names)}")
        mean = mean.fixed([beta[n] for n in names])
        kernel = KernelSpec(family, d["theta_ag"], d["theta_yr"], d["sigma2"],
                            eta2=d.get("eta2", 1.0), cross_thetas=d.get("cross_thetas"),
                            A=d.get("A"))
        if len(kernel.sigma2) != len(pops):
            raise ModelFormatError("sigma2 length does not match populations")
        priors = None
        if d.get("objective", "mle") == "map":
            priors = PriorSpec(**{k: (tuple(v) if isinstance(v, list) else v)
                                  for k, v in d["priors"].items()})
        model = FittedModel(pops, kernel, mean, Scaling(**d["scaling"]), float(d["loglik"]),
                            int(d["k"]), int(d["M"]), d["panel_digest"], d.get("objective", "mle"),
                            d.get("log_prior"), priors, d.get("metadata", {}))
    except KernelError as exc:
        raise ModelFormatError(f"invalid hyperparameters: {exc}") from None
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"malformed model document: {exc}") from None
    if abs(model.bic - float(d["bic"])) > 1e-6 * max(1.0, abs(model.bic)):
        raise ModelFormatError("stored bic inconsistent with loglik and k")
    return model


def loads_model(text: str) -> FittedModel:
    try:
        d = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file is not JSON: {exc}") from None
    return model_from_dict(d)


def load_model(path, panel: MortalityPanel | None = None, atol: float = 1e-8) -> FittedModel:
    """Load a model; with ``panel`` also verify its digest and recomputed log-likelihood."""
    model = loads_model(Path(path).read_text(encoding="utf-8"))
    if panel is not None:
        if panel.digest() != model.panel_digest:
            raise ModelFormatError("panel digest does not match model")
        ll = model.recompute_loglik(panel)
        if abs(ll - model.loglik) > atol * max(1.0, abs(model.loglik)):
            raise ModelFormatError(f"recomputed loglik {ll} differs from stored {model.loglik}")
    return model
