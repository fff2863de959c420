import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.utils.estimator_checks import check_estimator

from wavesbl.estimator import SparseBayesianRegression, SwitchingWaveIdentifier
from wavesbl.solver import manufactured_forcing
from wavesbl.synth import add_noise

from conftest import CASE1_VALUES, CASE3_VALUES


def test_sklearn_contract():
    check_estimator(SparseBayesianRegression())


def test_sparse_recovery():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((200, 6))
    coef = np.array([0.0, 2.0, 0.0, 0.0, -1.5, 0.0])
    y = X @ coef + 0.01 * rng.standard_normal(200)
    est = SparseBayesianRegression().fit(X, y)
    assert {1, 4} <= set(np.flatnonzero(est.coef_).tolist())
    # anything else kept is at the noise level
    assert np.abs(est.coef_[[0, 2, 3, 5]]).max() < 0.01
    assert np.allclose(est.coef_, coef, atol=0.01)
    assert est.converged_ and est.n_iter_ >= 1
    assert est.score(X, y) > 0.999
    assert np.all(np.diff(est.loss_trace_) <= 1e-10)


def test_feature_names_label_result():
    pd = pytest.importorskip("pandas")
    rng = np.random.default_rng(1)
    X = pd.DataFrame(rng.standard_normal((50, 2)), columns=["a", "b"])
    est = SparseBayesianRegression().fit(X, X["a"] * 3.0)
    assert list(est.result_.coefficients()) == ["a", "b"]


def test_fixed_sigma2_and_clone():
    est = SparseBayesianRegression(sigma2=1e-4, tol=1e-10)
    twin = clone(est)
    assert twin.get_params()["sigma2"] == 1e-4
    rng = np.random.default_rng(2)
    X = rng.standard_normal((40, 3))
    twin.fit(X, X[:, 0])
    assert twin.sigma2_ == 1e-4


def test_predict_before_fit():
    with pytest.raises(NotFittedError):
        SparseBayesianRegression().predict(np.ones((2, 2)))


def test_identifier_case1(case1_snapshot, case1_path):
    y = add_noise(case1_snapshot, 1e-6, seed=20240101)
    truth = [{"u_xx": m, "sin(u)": -1.0} for m in CASE1_VALUES]
    ident = SwitchingWaveIdentifier(n_jobs=2).fit(y, case1_path, truth=truth)
    assert ident.coef_.shape == (7, 6)
    assert ident.labels_[:2] == ["u_xx", "sin(u)"]
    assert np.allclose(ident.coef_[:, 0], CASE1_VALUES, rtol=5e-3)
    assert np.all(ident.coef_[:, 2:] == 0)
    assert max(r.max_error for r in ident.reports_) <= 5.0
    assert [s.value for s in ident.states_] == [0.1, 0.5, 1.0]


def test_identifier_predict_2d(case3_snapshot, case3_path):
    ident = SwitchingWaveIdentifier(library=("lap(u)", "1"), forcing=manufactured_forcing)
    ident.fit(case3_snapshot, case3_path)
    assert np.allclose(ident.coef_[:, 0], CASE3_VALUES, rtol=1e-6)
    x = case3_snapshot.x
    v0 = -np.sin(x)[:, None] * np.sin(x)[None, :]
    u = ident.predict(case3_snapshot, initial_velocity=v0)
    assert np.abs(u - case3_snapshot.u).max() < 1e-6


def test_identifier_params_round_trip():
    ident = SwitchingWaveIdentifier(smooth_window=3, step_tol=1e-12)
    assert clone(ident).get_params()["smooth_window"] == 3
    assert clone(ident).get_params()["step_tol"] == 1e-12
