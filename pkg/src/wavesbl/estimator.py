"""scikit-learn style estimators around :func:`wavesbl.sbl.run_sbl`."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

try:
    from sklearn.utils.validation import validate_data
except ImportError:  # scikit-learn < 1.6
    def validate_data(est, *args, **kw):
        return est._validate_data(*args, **kw)

from .dictionary import DesignSystem, TermLibrary
from .dsbl import aggregate_by_state, run_dsbl, segment_data, simulate_identified
from .sbl import SblConfig, run_sbl
from .synth import derivative_fields

FALLBACK_NOISE_FRACTION = 1e-2


def _sbl_config(est) -> SblConfig:
    return SblConfig(sigma2=est.sigma2, tol=est.tol, max_iter=est.max_iter,
                     gamma_floor=est.gamma_floor, normalize=est.normalize,
                     step_tol=est.step_tol)


class SparseBayesianRegression(RegressorMixin, BaseEstimator):
    """Sparse Bayesian linear regression solved by reweighted l1 steps.

    No intercept is fitted; add a constant column if one is wanted.

    Parameters
    ----------
    sigma2 : float or "estimate", default="estimate"
        Noise variance, fixed, or estimated from a ridge residual.
    tol : float, default=1e-8
        Relative loss change that stops the outer loop.
    max_iter : int, default=200
    gamma_floor : float, default=1e-12
        Prior variances below this are pruned to exact zeros.
    normalize : bool, default=True
        Fit on unit-norm columns and map the coefficients back.
    step_tol : float, optional
        Also require the coefficient step to settle before stopping.

    Attributes
    ----------
    coef_ : ndarray of shape (n_features,)
    gamma_ : ndarray of shape (n_features,)
    sigma2_ : float
    loss_trace_ : list of float
    n_iter_ : int
    converged_ : bool
    kkt_residual_ : float
    result_ : SblResult
    """

    def __init__(self, sigma2="estimate", tol=1e-8, max_iter=200, gamma_floor=1e-12,
                 normalize=True, step_tol=None):
        self.sigma2 = sigma2
        self.tol = tol
        self.max_iter = max_iter
        self.gamma_floor = gamma_floor
        self.normalize = normalize
        self.step_tol = step_tol

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64, y_numeric=True)
        cfg = _sbl_config(self)
        sigma2 = None
        if X.shape[0] <= X.shape[1] and self.sigma2 == "estimate":
            # no residual degrees of freedom: fall back to a fraction of var(y)
            sigma2 = max(FALLBACK_NOISE_FRACTION * float(np.var(y)), 1e-30)
        names = getattr(self, "feature_names_in_", None)
        labels = list(names) if names is not None else [f"x{i}" for i in range(X.shape[1])]
        sys = DesignSystem(y, X, labels, np.arange(len(y))[:, None])
        res = run_sbl(sys, cfg, sigma2=sigma2)
        self.result_ = res
        self.coef_ = res.theta
        self.gamma_ = res.gamma
        self.sigma2_ = res.sigma2
        self.loss_trace_ = res.loss_trace
        self.n_iter_ = res.iterations
        self.converged_ = res.converged
        self.kkt_residual_ = res.kkt_residual
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = validate_data(self, X, dtype=np.float64, reset=False)
        return X @ self.coef_


class SwitchingWaveIdentifier(BaseEstimator):
    """Recover per-segment PDE coefficients from a snapshot and its path.

    Parameters
    ----------
    library : sequence of str
        Candidate terms in the grammar of :func:`wavesbl.dictionary.parse_term`.
    forcing : callable, optional
        Known source term, ``f(x, t, m)`` or ``f(x, y, t, m)``.
    smooth_window : int, optional
        Odd moving-average window along time; off by default.
    n_jobs : int, optional
        Worker threads across segments.
    sigma2, tol, max_iter, gamma_floor, normalize, step_tol
        As in :class:`SparseBayesianRegression`.

    Attributes
    ----------
    coef_ : ndarray of shape (n_segments, n_terms)
    labels_ : list of str
    reports_ : list of SegmentReport
    states_ : list of StateReport
    """

    def __init__(self, library=("u_xx", "sin(u)", "1", "u", "u_x", "u^2"), forcing=None,
                 smooth_window=None, n_jobs=None, sigma2="estimate", tol=1e-8,
                 max_iter=200, gamma_floor=1e-12, normalize=True, step_tol=None):
        self.library = library
        self.forcing = forcing
        self.smooth_window = smooth_window
        self.n_jobs = n_jobs
        self.sigma2 = sigma2
        self.tol = tol
        self.max_iter = max_iter
        self.gamma_floor = gamma_floor
        self.normalize = normalize
        self.step_tol = step_tol

    def fit(self, snapshot, path, truth=None):
        """Fit every segment of ``path`` on ``snapshot``.

        ``truth`` is an optional list of ``{label: value}`` per segment.
        """
        lib = TermLibrary(list(self.library))
        fields = derivative_fields(snapshot, lib.required_derivatives(), self.smooth_window)
        segs = segment_data(fields, path, lib, self.forcing)
        self.reports_ = run_dsbl(segs, _sbl_config(self), truth=truth, n_jobs=self.n_jobs)
        self.labels_ = lib.labels
        self.states_ = aggregate_by_state(self.reports_)
        self.coef_ = np.array([[r.estimate.get(lab, np.nan) for lab in lib.labels]
                               for r in self.reports_])
        return self

    def predict(self, snapshot, initial_velocity=None):
        """Re-simulate the identified model on ``snapshot``'s grid."""
        check_is_fitted(self, "coef_")
        coeffs = [dict(zip(self.labels_, row)) for row in self.coef_]
        return simulate_identified(snapshot, self.labels_, coeffs, self.forcing,
                                   initial_velocity)
