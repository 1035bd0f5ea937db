"""scikit-learn style wrappers around PFNN training.

Targets are ``y = [G, v]`` per row; rows whose targets are all NaN are
treated as unlabeled and only enter the power-flow term of the loss.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .dataset import ENRICHMENT, LHS, TRAIN, Dataset
from .enrich import EnrichConfig, run_wc_pfnn
from .grid import InputDomain, NetworkCase, build_quadratic_forms
from .nn import TrainingConfig, init_pfnn, train
from .nn.training import TrainHistory


class PFNNRegressor(RegressorMixin, BaseEstimator):
    """Power-flow informed network pair trained on labels plus physics."""

    def __init__(self, case: NetworkCase | None = None, hidden=(20, 20, 20),
                 learning_rate=1e-3, epochs=600, lambda_0=1.0, lambda_pf=0.1,
                 domain: InputDomain | None = None, seed=0):
        self.case = case
        self.hidden = hidden
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.lambda_0 = lambda_0
        self.lambda_pf = lambda_pf
        self.domain = domain
        self.seed = seed

    def _setup(self, X, y):
        if self.case is None:
            raise ValueError("a NetworkCase is required")
        X = check_array(X)
        y = check_array(y, ensure_all_finite="allow-nan")
        if len(X) != len(y):
            raise ValueError("X and y differ in length")
        self.qf_ = build_quadratic_forms(self.case)
        qf = self.qf_
        ng2, nb2 = 2 * qf.n_gen, 2 * qf.n_bus
        if X.shape[1] != 2 * qf.n_load or y.shape[1] != ng2 + nb2:
            raise ValueError(f"expected X with {2 * qf.n_load} and y with "
                             f"{ng2 + nb2} columns for this case")
        self.domain_ = self.domain or InputDomain.from_case(self.case)
        labeled = ~np.isnan(y).all(axis=1)
        if np.isnan(y[labeled]).any():
            raise ValueError("labeled rows must have no missing targets")
        n = len(X)
        data = Dataset(X, y[:, :ng2], y[:, ng2:], labeled,
                       np.where(labeled, LHS, ENRICHMENT).astype(object),
                       np.full(n, TRAIN, object), self.domain_)
        self.pair_ = init_pfnn(qf.n_load, qf.n_gen, qf.n_bus, qf.slack, qf.gen_lower,
                               qf.gen_upper, self.domain_.lower, self.domain_.upper,
                               tuple(self.hidden), self.seed)
        self.n_features_in_ = X.shape[1]
        return data

    def _train_cfg(self):
        return TrainingConfig(learning_rate=self.learning_rate, epochs=self.epochs,
                              lambda_0=self.lambda_0, lambda_pf=self.lambda_pf,
                              seed=self.seed)

    def fit(self, X, y):
        data = self._setup(X, y)
        self.history_ = TrainHistory()
        train(self.pair_, data, self.qf_, self._train_cfg(), history=self.history_)
        return self

    def predict(self, X):
        check_is_fitted(self, "pair_")
        X = check_array(X)
        G, v = self.pair_.predict(X)
        return np.hstack([G, v])

    def predict_generation(self, X):
        check_is_fitted(self, "pair_")
        return self.pair_.predict(check_array(X))[0]


class WCPFNNRegressor(PFNNRegressor):
    """PFNN trained with worst-case driven enrichment of its training set."""

    def __init__(self, case: NetworkCase | None = None, hidden=(20, 20, 20),
                 learning_rate=1e-3, epochs=600, lambda_0=1.0, lambda_pf=0.1,
                 domain: InputDomain | None = None, seed=0, T_int=200, T_enr=200,
                 points_per_round=1000, alpha_wc=0.8, gaussian_sigma=0.5, top_k=1):
        super().__init__(case, hidden, learning_rate, epochs, lambda_0, lambda_pf,
                         domain, seed)
        self.T_int = T_int
        self.T_enr = T_enr
        self.points_per_round = points_per_round
        self.alpha_wc = alpha_wc
        self.gaussian_sigma = gaussian_sigma
        self.top_k = top_k

    def fit(self, X, y):
        data = self._setup(X, y)
        cfg = EnrichConfig(T=self.epochs, T_int=self.T_int, T_enr=self.T_enr,
                           points_per_round=self.points_per_round,
                           alpha_wc=self.alpha_wc, gaussian_sigma=self.gaussian_sigma,
                           baseline_extra_points=0, top_k=self.top_k, seed=self.seed)
        _, self.run_log_ = run_wc_pfnn(self.case, self.qf_, data, self.pair_,
                                       self._train_cfg(), cfg)
        return self
