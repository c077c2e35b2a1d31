"""Forecast scoring, improvement factors, correlations and trend clustering."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.spatial.distance import squareform
from scipy.special import ndtr

from .data import MortalityPanel
from .errors import DomainError, KernelError, RankDeficientError
from .gp import PredictionResult, sample_posterior
from .kernels import Family, KernelSpec, gamma_matrix, icm_B

INV_SQRT_PI = 1.0 / math.sqrt(math.pi)


# ---------------------------------------------------------------------------
# Scores


def smape_cells(observed, predicted) -> np.ndarray:
    y = np.asarray(observed, dtype=float)
    m = np.asarray(predicted, dtype=float)
    if y.shape != m.shape or y.size == 0:
        raise ValueError("observed and predicted must be nonempty and equally shaped")
    denom = (np.abs(y) + np.abs(m)) / 2.0
    bad = np.flatnonzero(denom == 0)
    if len(bad):
        raise DomainError(f"SMAPE undefined at cell(s) {bad.tolist()}: |y| = |m| = 0")
    return 100.0 * np.abs(y - m) / denom


def smape(observed, predicted) -> float:
    """Symmetric mean absolute percentage error, in percent (0 to 200)."""
    return float(np.mean(smape_cells(observed, predicted)))


def crps_gaussian(mu, sigma, y):
    """CRPS of a normal forecast N(mu, sigma^2) against outcome ``y`` (closed form)."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(~(sigma > 0)):
        raise DomainError("CRPS needs sigma > 0")
    z = (y - mu) / sigma
    pdf = np.exp(-0.5 * z * z) / math.sqrt(2 * math.pi)
    out = sigma * (z * (2.0 * ndtr(z) - 1.0) + 2.0 * pdf - INV_SQRT_PI)
    return out if out.ndim else float(out)


def improvement_percent(baseline: float, new: float) -> float:
    """Relative improvement of a score, ``100 (baseline - new) / baseline``."""
    if baseline == 0:
        raise DomainError("baseline score is zero")
    return 100.0 * (baseline - new) / baseline


@dataclass
class ScoreReport:
    populations: list[str]
    years: np.ndarray
    ages: np.ndarray
    observed: np.ndarray
    mean: np.ndarray
    sd: np.ndarray
    smape_cells: np.ndarray
    crps_cells: np.ndarray

    @property
    def smape(self) -> float:
        return float(np.mean(self.smape_cells))

    @property
    def crps(self) -> float:
        return float(np.mean(self.crps_cells))

    def by_age(self) -> dict[float, float]:
        return {float(a): float(np.mean(self.smape_cells[self.ages == a]))
                for a in np.unique(self.ages)}

    def to_csv(self, dest, baseline: "ScoreReport | dict | None" = None) -> None:
        if isinstance(dest, (str, Path)):
            with open(dest, "w", newline="", encoding="utf-8") as fh:
                return self.to_csv(fh, baseline)
        w = csv.writer(dest, lineterminator="\n")
        w.writerow(["population", "year", "age", "observed", "mean", "sd", "smape_cell",
                    "crps_cell"])
        for i in range(len(self.observed)):
            w.writerow([self.populations[i], _fmt(self.years[i]), _fmt(self.ages[i]),
                        repr(float(self.observed[i])), repr(float(self.mean[i])),
                        repr(float(self.sd[i])), repr(float(self.smape_cells[i])),
                        repr(float(self.crps_cells[i]))])
        dest.write(f"# smape,{self.smape!r}\n# crps,{self.crps!r}\n")
        if baseline is not None:
            b = baseline if isinstance(baseline, dict) else {"smape": baseline.smape,
                                                             "crps": baseline.crps}
            dest.write(f"# smape_improvement_pct,{improvement_percent(b['smape'], self.smape)!r}\n")
            dest.write(f"# crps_improvement_pct,{improvement_percent(b['crps'], self.crps)!r}\n")


def _fmt(v) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


def read_score_footer(path) -> dict[str, float]:
    """Aggregate values from the ``# name,value`` footer of a score report CSV."""
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.startswith("# ") and "," in line:
            k, v = line[2:].split(",", 1)
            out[k] = float(v)
    return out


def score_predictions(result: PredictionResult, holdout: MortalityPanel,
                      observed_sd: bool = True) -> ScoreReport:
    """Join predictions with held-out observations and score each cell.

    CRPS uses the predictive distribution of y* (``sd_y``) unless
    ``observed_sd`` is False.
    """
    pred = {}
    for i in range(len(result.mean)):
        pred[(result.populations[result.pop[i]], float(result.year[i]), float(result.age[i]))] = i
    keys = [(holdout.populations[l], float(t), float(a))
            for l, t, a in zip(holdout.pop, holdout.year, holdout.age)]
    missing = [k for k in keys if k not in pred]
    if missing:
        shown = ", ".join(f"{p}:{int(t)}/{int(a)}" for p, t, a in missing[:10])
        raise DomainError(f"{len(missing)} holdout cells have no prediction: {shown}")
    idx = np.array([pred[k] for k in keys], dtype=int)
    mean = result.mean[idx]
    sd = (result.sd_y if observed_sd else result.sd_f)[idx]
    y = holdout.y
    return ScoreReport([k[0] for k in keys], holdout.year.copy(), holdout.age.copy(), y.copy(),
                       mean, sd, smape_cells(y, mean), np.asarray(crps_gaussian(mean, sd, y)))


# ---------------------------------------------------------------------------
# Improvement factors


def improvement_factors(surface, years) -> np.ndarray:
    """Year-over-year improvement ``1 - exp(m(yr)) / exp(m(yr-1))``.

    ``surface`` has years along axis 0.  Returns values for ``years[1:]``;
    every year must have its predecessor present.
    """
    surface = np.asarray(surface, dtype=float)
    years = np.asarray(years, dtype=float)
    if surface.shape[0] != len(years):
        raise ValueError("surface rows must match years")
    if len(years) < 2 or np.any(np.diff(years) != 1):
        gaps = [float(years[i + 1]) for i in range(len(years) - 1) if years[i + 1] - years[i] != 1]
        raise DomainError(f"missing predecessor year for {gaps or list(years)}")
    return -np.expm1(np.diff(surface, axis=0))


def raw_improvement(panel: MortalityPanel, population: str):
    """Improvement factors from observed log-mortality of one population.

    Returns ``(years[1:], ages, factors)``; the population must cover a full
    Age x Year rectangle.
    """
    l = panel.population_index(population)
    sub = panel.subset(panel.pop == l)
    ages, years = sub.ages, sub.years
    if sub.M != len(ages) * len(years):
        raise DomainError(f"{population} does not cover a full Age x Year grid")
    grid = sub.y.reshape(len(years), len(ages))
    return years[1:], ages, improvement_factors(grid, years)


def improvement_bands(posterior, population, ages, years, n_samples: int = 1000, seed: int = 0,
                      level: float = 0.95):
    """Smoothed improvement factors with sampling bands.

    Draws joint posterior paths of the latent surface on ``years[0]-1 .. years[-1]``
    and returns ``(mean_factor, lo, hi)`` arrays of shape (len(years), len(ages)).
    """
    ages = np.asarray(list(ages), float)
    years = np.asarray(list(years), float)
    all_years = np.arange(years.min() - 1, years.max() + 1)
    res = posterior.predict_grid(population, ages, all_years, want_joint=True)
    shape = (len(all_years), len(ages))
    mean_f = improvement_factors(res.mean.reshape(shape), all_years)
    paths = sample_posterior(res, n_samples, seed).reshape((n_samples,) + shape)
    draws = -np.expm1(np.diff(paths, axis=1))
    q = (1 - level) / 2
    lo, hi = np.quantile(draws, [q, 1 - q], axis=0)
    sel = np.isin(all_years[1:], years)
    return mean_f[sel], lo[sel], hi[sel]


# ---------------------------------------------------------------------------
# Correlations


@dataclass
class CorrelationMatrix:
    populations: tuple[str, ...]
    r: np.ndarray
    source: str

    def pairs(self):
        L = len(self.populations)
        for i in range(L):
            for j in range(i + 1, L):
                yield self.populations[i], self.populations[j], float(self.r[i, j])

    def to_csv(self, dest) -> None:
        if isinstance(dest, (str, Path)):
            with open(dest, "w", newline="", encoding="utf-8") as fh:
                return self.to_csv(fh)
        w = csv.writer(dest, lineterminator="\n")
        w.writerow(["population"] + list(self.populations))
        for p, row in zip(self.populations, self.r):
            w.writerow([p] + [repr(float(v)) for v in row])


def correlation_from_B(B: np.ndarray) -> np.ndarray:
    B = np.asarray(B, dtype=float)
    d = np.sqrt(np.diag(B))
    if np.any(d == 0):
        raise KernelError("a population has zero process variance; correlation undefined")
    r = B / np.outer(d, d)
    r = np.clip(0.5 * (r + r.T), -1.0, 1.0)
    np.fill_diagonal(r, 1.0)
    return r


def extract_correlations(model, populations: Sequence[str] | None = None) -> CorrelationMatrix:
    """Cross-population correlations of a fitted FULL_RANK or ICM model.

    Accepts a FittedModel or a bare KernelSpec.
    """
    kernel = model if isinstance(model, KernelSpec) else model.kernel
    pops = tuple(populations if populations is not None
                 else getattr(model, "populations", range(kernel.L)))
    if kernel.family is Family.SOGP:
        raise KernelError("correlations are undefined for a single-output model")
    if kernel.family is Family.FULL_RANK:
        return CorrelationMatrix(pops, gamma_matrix(kernel.cross_thetas, kernel.L), "FULL_RANK")
    return CorrelationMatrix(pops, correlation_from_B(icm_B(kernel.A)), "ICM")


# ---------------------------------------------------------------------------
# Trend clustering


@dataclass
class TrendCoefficients:
    populations: tuple[str, ...]
    coef: np.ndarray  # (L, 3): beta_0, beta_ag, beta_yr

    def row(self, name: str) -> np.ndarray:
        return self.coef[self.populations.index(name)]


def trend_coefficients(panel: MortalityPanel) -> TrendCoefficients:
    """Per-population OLS of log-mortality on (1, age, year)."""
    coefs = []
    for l, name in enumerate(panel.populations):
        m = panel.pop == l
        X = np.column_stack([np.ones(m.sum()), panel.age[m], panel.year[m]])
        if np.linalg.matrix_rank(X) < 3:
            raise RankDeficientError(f"{name}: need non-collinear ages and years for a trend fit")
        beta, *_ = np.linalg.lstsq(X, panel.y[m], rcond=None)
        coefs.append(beta)
    return TrendCoefficients(panel.populations, np.array(coefs))


def trend_distance(c1, c2, age_bounds=(50.0, 84.0), year_bounds=(1990.0, 2012.0)) -> float:
    """Root integrated squared difference of two affine trends over an Age x Year box.

    With g = d0 + da*age + dy*year and independent uniform age/year on the box,
    the integral equals area * (E[g]^2 + Var[g]).
    """
    a0, a1 = map(float, age_bounds)
    t0, t1 = map(float, year_bounds)
    if a1 < a0 or t1 < t0:
        raise ValueError("bounds must be ordered")
    d0, da, dt = np.asarray(c1, float) - np.asarray(c2, float)
    wa, wt = a1 - a0, t1 - t0
    eg = d0 + da * 0.5 * (a0 + a1) + dt * 0.5 * (t0 + t1)
    var = (da * wa) ** 2 / 12.0 + (dt * wt) ** 2 / 12.0
    return math.sqrt(wa * wt * (eg * eg + var))


def trend_distance_matrix(trends: TrendCoefficients, age_bounds=(50.0, 84.0),
                          year_bounds=(1990.0, 2012.0)) -> np.ndarray:
    L = len(trends.populations)
    D = np.zeros((L, L))
    for i in range(L):
        for j in range(i + 1, L):
            D[i, j] = D[j, i] = trend_distance(trends.coef[i], trends.coef[j], age_bounds,
                                               year_bounds)
    return D


@dataclass(frozen=True)
class Merge:
    step: int
    a: int
    b: int
    height: float
    size: int


@dataclass
class Dendrogram:
    """Agglomerative merge list.  Leaves are 0..n-1; merge ``s`` creates cluster ``n + s``."""
    n_leaves: int
    merges: list[Merge]
    linkage: str
    labels: tuple[str, ...] | None = None

    @property
    def heights(self) -> np.ndarray:
        return np.array([m.height for m in self.merges])

    def linkage_matrix(self) -> np.ndarray:
        """scipy-compatible ``(n-1, 4)`` linkage matrix."""
        return np.array([[m.a, m.b, m.height, m.size] for m in self.merges], dtype=float)

    def newick(self) -> str:
        labels = self.labels or tuple(str(i) for i in range(self.n_leaves))
        n = self.n_leaves
        if n == 1:
            return f"{labels[0]};"
        height = {i: 0.0 for i in range(n)}
        children = {}
        for m in self.merges:
            children[n + m.step] = (m.a, m.b)
            height[n + m.step] = m.height

        def render(node: int) -> str:
            if node < n:
                return labels[node]
            a, b = children[node]
            return (f"({render(a)}:{height[node] - height[a]:.6g},"
                    f"{render(b)}:{height[node] - height[b]:.6g})")

        return render(2 * n - 2) + ";"

    def to_csv(self, dest) -> None:
        if isinstance(dest, (str, Path)):
            with open(dest, "w", newline="", encoding="utf-8") as fh:
                return self.to_csv(fh)
        labels = self.labels or tuple(str(i) for i in range(self.n_leaves))
        names = list(labels)
        w = csv.writer(dest, lineterminator="\n")
        w.writerow(["step", "cluster_a", "cluster_b", "height", "size", "members_a", "members_b"])
        members = {i: [names[i]] for i in range(self.n_leaves)}
        for m in self.merges:
            w.writerow([m.step, m.a, m.b, repr(float(m.height)), m.size,
                        " ".join(members[m.a]), " ".join(members[m.b])])
            members[self.n_leaves + m.step] = members[m.a] + members[m.b]


def hierarchical_cluster(distances, linkage: str = "single",
                         labels: Sequence[str] | None = None) -> Dendrogram:
    """Agglomerative clustering with single or complete linkage.

    ``distances`` is a condensed vector or a square symmetric matrix.  Ties
    are broken by the lowest (cluster_a, cluster_b) id pair.
    """
    if linkage not in ("single", "complete"):
        raise ValueError("linkage must be 'single' or 'complete'")
    D = np.asarray(distances, dtype=float)
    if np.any(np.isnan(D)):
        raise DomainError("distance matrix contains NaN")
    if D.ndim == 1:
        D = squareform(D)
    if D.shape[0] != D.shape[1] or not np.allclose(D, D.T, rtol=0, atol=0) \
            or np.any(np.diag(D) != 0) or np.any(D < 0):
        raise DomainError("distances must be symmetric, nonnegative with zero diagonal")
    n = D.shape[0]
    combine = min if linkage == "single" else max
    dist = {(i, j): D[i, j] for i in range(n) for j in range(i + 1, n)}
    size = {i: 1 for i in range(n)}
    active = list(range(n))
    merges = []
    for step in range(n - 1):
        (a, b), h = min(dist.items(), key=lambda kv: (kv[1], kv[0]))
        new = n + step
        active.remove(a)
        active.remove(b)
        for c in active:
            da = dist.pop((min(a, c), max(a, c)))
            db = dist.pop((min(b, c), max(b, c)))
            dist[(c, new)] = combine(da, db)
        del dist[(a, b)]
        size[new] = size[a] + size[b]
        merges.append(Merge(step, a, b, float(h), size[new]))
        active.append(new)
    return Dendrogram(n, merges, linkage, tuple(labels) if labels is not None else None)
