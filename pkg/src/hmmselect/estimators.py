"""Scikit-learn style estimators wrapping the two order-selection pipelines.

Both estimators consume a 1-D observation sequence with values in [0, 1]
(the raw HMM output, not windowed) and expose the selected order and the
recovered parameters as fitted attributes.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import least_squares as ls
from . import spectral as sp
from .errors import InvalidParams
from .hmm import ObservationRecord


def _as_record(y, L: int) -> ObservationRecord:
    y = np.asarray(y, dtype=float).ravel()
    if y.size < L:
        raise InvalidParams(f"need at least L={L} observations")
    if np.any(y < 0) or np.any(y > 1) or not np.all(np.isfinite(y)):
        raise InvalidParams("observations must be finite values in [0, 1]")
    return ObservationRecord(values=y, L=L)


class SpectralOrderHMM(BaseEstimator):
    """Order selection from the singular spectrum of the cross-moment matrix,
    with optional method-of-moments parameter recovery.

    Parameters
    ----------
    M : basis dimension used for the moment matrices.
    method : 'regression' (default) or 'threshold'.
    M_reg, tau : regression heuristic parameters (smallest M_reg singular
        values fit the noise line; significance factor tau > 1).
    C : threshold constant, required when method='threshold'.
    estimate_params : when True, also run the full spectral parameter
        recovery at the selected order.
    """

    def __init__(
        self,
        M=40,
        method="regression",
        M_reg=35,
        tau=1.3,
        C=None,
        estimate_params=False,
        scheme="disjoint",
        random_state=None,
    ):
        self.M = M
        self.method = method
        self.M_reg = M_reg
        self.tau = tau
        self.C = C
        self.estimate_params = estimate_params
        self.scheme = scheme
        self.random_state = random_state

    def fit(self, y, X=None):
        obs = _as_record(y, L=3)
        moments = sp.compute_moments(obs, self.M, scheme=self.scheme)
        if self.method == "regression":
            report = sp.order_by_regression(moments, self.M_reg, self.tau)
        elif self.method == "threshold":
            if self.C is None:
                raise InvalidParams("method='threshold' requires the constant C")
            report = sp.order_by_threshold(moments, self.C)
        else:
            raise InvalidParams(f"unknown method {self.method!r}")

        self.report_ = report
        self.singular_values_ = report.singular_values
        self.n_states_ = report.K_hat

        if self.estimate_params and report.K_hat >= 1:
            params = sp.spectral_params_from_moments(
                moments, report.K_hat, self.random_state
            )
            self.params_ = params
            self.transition_ = params.Q_hat
            self.stationary_ = params.pi_hat
            self.emission_coeffs_ = params.O_hat
        return self

    def predict(self, y=None):
        check_is_fitted(self, "n_states_")
        return self.n_states_


class PenalizedLSHMM(BaseEstimator):
    """Penalized least-squares order selection over a (K, M) model grid.

    The contrast is minimized per cell by CMA-ES with chained
    initializations; the penalty constant is calibrated by the
    dimension-jump heuristic (default) or the slope heuristic unless
    ``rho`` is given explicitly.
    """

    def __init__(
        self,
        K_max=5,
        M_values=tuple(range(3, 26, 2)),
        budget=ls.DEFAULT_BUDGET,
        calibration="jump",
        rho=None,
        sigma0=ls.DEFAULT_SIGMA0,
        random_state=0,
    ):
        self.K_max = K_max
        self.M_values = M_values
        self.budget = budget
        self.calibration = calibration
        self.rho = rho
        self.sigma0 = sigma0
        self.random_state = random_state

    def fit(self, y, X=None):
        obs = _as_record(y, L=3)
        grid = ls.ModelGrid(K_max=self.K_max, M_values=tuple(self.M_values))
        data = ls.ContrastData(obs, grid.M_max)
        fits = ls.run_grid(
            data, grid, budget=self.budget, seed=self.random_state, sigma0=self.sigma0
        )
        self.fits_ = fits

        if self.rho is not None:
            rho_hat = float(self.rho)
            self.calibration_ = None
        elif self.calibration == "jump":
            cal = ls.calibrate_dimension_jump(fits, obs.n)
            rho_hat, self.calibration_ = cal.rho_hat, cal
        elif self.calibration == "slope":
            cal = ls.calibrate_slope(fits, obs.n)
            rho_hat, self.calibration_ = cal.rho_hat, cal
        else:
            raise InvalidParams(f"unknown calibration {self.calibration!r}")

        K, M, fit = ls.select_model(fits, obs.n, rho_hat)
        self.rho_hat_ = rho_hat
        self.n_states_ = K
        self.M_ = M
        self.best_fit_ = fit
        self.transition_ = fit.model.Q
        self.stationary_ = fit.model.pi
        self.emission_coeffs_ = fit.model.coeffs
        return self

    def predict(self, y=None):
        check_is_fitted(self, "n_states_")
        return self.n_states_
