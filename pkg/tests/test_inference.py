import json
import math

import numpy as np
import pytest

from mogp_longevity.errors import FitError, ModelFormatError
from mogp_longevity.gp import MeanSpec, Scenario, log_marginal_likelihood
from mogp_longevity.inference import (FittedModel, OptimizerConfig, ParamLayout, PriorSpec, bic,
                                      canonicalize_loadings, count_params, dumps_model, fit,
                                      fit_map, fit_mle, load_model, loads_model, log_prior,
                                      save_model, select_rank)
from mogp_longevity.kernels import Family, KernelSpec, icm_B
from mogp_longevity.synthetic import sample_grid_panel

FAST = OptimizerConfig(n_starts=2, seed=1)


@pytest.fixture(scope="module")
def panel2():
    k = KernelSpec(Family.ICM, 8.0, 5.0, [2e-3, 3e-3], A=[[0.2, 0.05], [0.18, -0.04]])
    return sample_grid_panel(k, [-8.0, 0.07, 0.15], ["A", "B"], np.arange(70.0, 78),
                             np.arange(1995.0, 2005), seed=3)


@pytest.fixture(scope="module")
def sogp_panel():
    k = KernelSpec(Family.SOGP, 8.0, 5.0, [2e-3], eta2=0.04)
    return sample_grid_panel(k, [-8.0, 0.07], ["A"], np.arange(70.0, 78),
                             np.arange(1995.0, 2005), seed=4)


@pytest.fixture(scope="module")
def icm_model(panel2):
    return fit_mle(panel2, Family.ICM, Scenario.S1, FAST, Q=1)


# --- BIC -------------------------------------------------------------------

def test_bic_examples():
    assert bic(14036.5, 20, 5832) == pytest.approx(20 * math.log(5832) - 28073.0, abs=1e-9)
    # quoted as -27899.5 (truncated); exact arithmetic gives -27899.578
    assert bic(14036.5, 20, 5832) == pytest.approx(-27899.5, abs=0.1)
    assert bic(-10.0, 7, 100) > bic(-10.0, 5, 100)
    assert bic(0.0, 0, 10) == 0.0


def test_count_params():
    s1 = MeanSpec(Scenario.S1)
    assert count_params(Family.SOGP, 1, None, s1) == 2 + 1 + 1 + 2
    assert count_params(Family.FULL_RANK, 4, None, s1) == 2 + 1 + 6 + 4 + 5
    assert count_params(Family.ICM, 8, 2, MeanSpec(Scenario.S2)) == 2 + 16 + 8 + 10
    assert count_params(Family.ICM, 8, 2, MeanSpec(Scenario.S3, beta_yr_fixed=-0.01)) == 2 + 16 + 8 + 9


def test_fitted_model_bic_identity(icm_model):
    assert icm_model.bic == pytest.approx(icm_model.k * math.log(icm_model.M)
                                          - 2 * icm_model.loglik, abs=1e-10)


# --- parameter plumbing ----------------------------------------------------

def test_canonicalize_loadings():
    A = np.array([[-0.1, 0.3], [0.2, -0.4], [0.0, 0.1]])
    C = canonicalize_loadings(A)
    np.testing.assert_allclose(C @ C.T, A @ A.T, atol=1e-15)
    assert np.all(np.diff(np.linalg.norm(C, axis=0)) <= 0)
    assert C[0, 0] > 0 and C[0, 1] > 0
    np.testing.assert_array_equal(canonicalize_loadings(-A), C)
    Z = canonicalize_loadings([[0.0, 1.0], [-1.0, 0.0]])
    assert Z[1, 0] == 1.0 or Z[1, 1] == 1.0


@pytest.mark.parametrize("spec", [
    KernelSpec(Family.SOGP, 1.3, 0.7, [0.01], eta2=0.2),
    KernelSpec(Family.FULL_RANK, 1.3, 0.7, [0.01, 0.02, 0.03], eta2=0.2,
               cross_thetas=[0.2, 0.3, 0.25]),
    KernelSpec(Family.ICM, 1.3, 0.7, [0.01, 0.02, 0.03], A=[[0.3, 0.1], [0.2, -0.1], [0.1, 0.0]]),
])
def test_param_layout_roundtrip(spec):
    layout = ParamLayout(spec.family, len(spec.sigma2), spec.rank, OptimizerConfig())
    x = layout.from_spec(spec)
    assert len(x) == layout.dim
    back = layout.to_spec(x)
    np.testing.assert_allclose(back.population_matrix(), spec.population_matrix(), atol=1e-12)
    np.testing.assert_allclose(back.sigma2, spec.sigma2, rtol=1e-12)
    assert back.theta_ag == pytest.approx(1.3) and back.theta_yr == pytest.approx(0.7)


def test_optimizer_config_validation():
    with pytest.raises(ValueError):
        OptimizerConfig(n_starts=0)
    with pytest.raises(ValueError):
        OptimizerConfig(theta_bounds=(0.1, math.inf))
    with pytest.raises(ValueError):
        OptimizerConfig(method="genetic")


def test_flat_prior_contributes_nothing():
    k = KernelSpec(Family.FULL_RANK, 1.0, 1.0, [0.01, 0.02], eta2=0.1, cross_thetas=[0.3])
    assert log_prior(k, PriorSpec.flat()) == 0.0
    assert PriorSpec.flat().beta_prior(3) is None
    assert math.isfinite(log_prior(k, PriorSpec()))


# --- fitting ---------------------------------------------------------------

def test_fit_deterministic(panel2, icm_model):
    again = fit_mle(panel2, Family.ICM, Scenario.S1, FAST, Q=1)
    assert dumps_model(again) == dumps_model(icm_model)


def test_back_transform_preserves_loglik(panel2, icm_model):
    assert icm_model.recompute_loglik(panel2) == pytest.approx(icm_model.loglik, abs=1e-8)
    raw = log_marginal_likelihood(panel2, icm_model.kernel, icm_model.mean)
    assert raw == pytest.approx(icm_model.loglik, abs=1e-8)


def test_fit_beats_its_starts(sogp_panel):
    cfg = OptimizerConfig(n_starts=3, seed=2, record_trace=True)
    m = fit_mle(sogp_panel, Family.SOGP, Scenario.S1, cfg)
    for start in m.metadata["starts"]:
        assert start["objective"] >= -m.loglik - 1e-9
    # the simplex best point never gets worse within a start
    for trace in m.metadata["traces"]:
        assert np.all(np.diff(trace) <= 1e-9)


def test_flat_map_equals_mle(sogp_panel):
    mle = fit_mle(sogp_panel, Family.SOGP, Scenario.S1, FAST)
    flat = fit_map(sogp_panel, Family.SOGP, Scenario.S1, PriorSpec.flat(), FAST)
    assert flat.loglik + flat.log_prior == pytest.approx(mle.loglik, abs=1e-6)
    assert flat.objective == "map"


def test_tight_prior_shrinks_lengthscale(sogp_panel):
    mle = fit_mle(sogp_panel, Family.SOGP, Scenario.S1, FAST)
    tight = PriorSpec(None, None, (1000.0, 1001.0), (1000.0, 1001.0), None, None, None)
    mp = fit_map(sogp_panel, Family.SOGP, Scenario.S1, tight, FAST)

    def dist(m):
        sc = m.scaling
        return abs(m.kernel.theta_ag / sc.sigma_ag - 1), abs(m.kernel.theta_yr / sc.sigma_yr - 1)

    d_map, d_mle = dist(mp), dist(mle)
    assert d_map[0] < d_mle[0] and d_map[1] < d_mle[1]
    assert max(d_map) < 0.05


def test_map_default_priors_run(panel2):
    m = fit_map(panel2, Family.FULL_RANK, Scenario.S1, config=FAST)
    assert m.objective == "map" and math.isfinite(m.log_prior)
    assert len(m.kernel.cross_thetas) == 1


def test_fit_rejects_fixed_beta(panel2):
    with pytest.raises(FitError):
        fit(panel2, Family.SOGP, MeanSpec(beta=[0.0, 0.0, 0.0]), FAST)


def test_select_rank_single_candidate(panel2):
    scan = select_rank(panel2, [1], FAST)
    assert scan.best_Q == 1 and len(scan.rows) == 1
    assert scan.rows[0]["status"] == "ok"
    with pytest.raises(FitError):
        select_rank(panel2, [3], FAST)


def test_select_rank_loglik_nondecreasing(panel2, tmp_path):
    scan = select_rank(panel2, [2, 1], OptimizerConfig(n_starts=1, seed=0))
    assert [r["Q"] for r in scan.rows] == [1, 2]
    assert scan.models[2].loglik >= scan.models[1].loglik - 1e-6
    assert scan.best_Q == min(scan.models, key=lambda q: scan.models[q].bic)
    scan.to_csv(tmp_path / "scan.csv")
    lines = (tmp_path / "scan.csv").read_text().splitlines()
    assert lines[0] == "Q,loglik,k,bic,n_loadings,selected,status"
    assert sum(line.split(",")[5] == "1" for line in lines[1:3]) == 1


# --- persistence -----------------------------------------------------------

def test_save_load_byte_identical(icm_model, tmp_path):
    p = tmp_path / "m.json"
    save_model(icm_model, p)
    again = load_model(p)
    assert dumps_model(again) == p.read_text()
    d = json.loads(p.read_text())
    for key in ("schema_version", "family", "Q", "theta_ag", "theta_yr", "A", "sigma2", "beta",
                "scenario", "scaling", "loglik", "k", "bic", "panel_digest"):
        assert key in d


def test_loaded_model_predicts_identically(panel2, icm_model, tmp_path):
    p = tmp_path / "m.json"
    save_model(icm_model, p)
    loaded = load_model(p, panel=panel2)
    cells = ([0, 1, 1], [71.0, 74.0, 77.0], [2006.0, 2008.0, 2004.0])
    a = icm_model.posterior(panel2).predict(*cells)
    b = loaded.posterior(panel2).predict(*cells)
    np.testing.assert_array_equal(a.mean, b.mean)
    np.testing.assert_array_equal(a.sd_f, b.sd_f)


def test_map_model_roundtrip(sogp_panel):
    m = fit_map(sogp_panel, Family.SOGP, Scenario.S1, config=OptimizerConfig(n_starts=1))
    text = dumps_model(m)
    assert dumps_model(loads_model(text)) == text
    assert loads_model(text).priors == m.priors


def _tamper(model, **changes):
    d = json.loads(dumps_model(model))
    d.update(changes)
    return json.dumps(d)


def test_load_rejects_bad_documents(icm_model, panel2, tmp_path):
    with pytest.raises(ModelFormatError, match="invalid hyperparameters"):
        loads_model(_tamper(icm_model, theta_ag=-3.0))
    with pytest.raises(ModelFormatError, match="schema_version"):
        loads_model(_tamper(icm_model, schema_version=99))
    with pytest.raises(ModelFormatError, match="bic"):
        loads_model(_tamper(icm_model, loglik=icm_model.loglik + 1.0))
    with pytest.raises(ModelFormatError):
        loads_model("{not json")
    with pytest.raises(ModelFormatError, match="beta"):
        loads_model(_tamper(icm_model, beta={"beta_0": 1.0}))
    # consistent document whose loglik does not match the panel
    d = json.loads(dumps_model(icm_model))
    d["theta_ag"] *= 2
    p = tmp_path / "m.json"
    p.write_text(json.dumps(d))
    assert isinstance(load_model(p), FittedModel)
    with pytest.raises(ModelFormatError, match="recomputed loglik"):
        load_model(p, panel=panel2)


def test_posterior_checks_panel_digest(icm_model, sogp_panel):
    with pytest.raises(ModelFormatError, match="digest"):
        icm_model.posterior(sogp_panel)


def test_icm_fit_is_canonical(icm_model):
    A = np.asarray(icm_model.kernel.A)
    np.testing.assert_array_equal(A, canonicalize_loadings(A))
    assert np.all(np.linalg.eigvalsh(icm_B(A)) >= -1e-12)
