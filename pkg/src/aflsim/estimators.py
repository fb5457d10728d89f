"""scikit-learn estimators that train a linear model by simulated AFL.

``fit`` splits ``(X, y)`` across ``n_clients`` with the Dirichlet partitioner
and runs the federation; the fitted trace stays on ``trace_`` for inspection.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_is_fitted, validate_data

from .data import Dataset, dirichlet_partition
from .orchestrator import ExperimentConfig, run


class _AFLBase(BaseEstimator):
    _model = "regression"

    def __init__(
        self,
        n_clients: int = 10,
        rounds: int = 400,
        local_epochs: int = 50,
        gamma0: float = 0.001,
        alpha: float = 0.01,
        batch_size: int = 32,
        fraction: float = 0.5,
        tau_max: int = 2,
        zeta: float = 0.5,
        l2_mu: float = 0.0,
        mode: str = "afl",
        random_state: Optional[int] = None,
    ):
        self.n_clients = n_clients
        self.rounds = rounds
        self.local_epochs = local_epochs
        self.gamma0 = gamma0
        self.alpha = alpha
        self.batch_size = batch_size
        self.fraction = fraction
        self.tau_max = tau_max
        self.zeta = zeta
        self.l2_mu = l2_mu
        self.mode = mode
        self.random_state = random_state

    def _config(self, n: int, d: int) -> ExperimentConfig:
        seed = 0 if self.random_state is None else int(self.random_state)
        return ExperimentConfig(
            C=self.n_clients, rounds=self.rounds, I=self.local_epochs, gamma0=self.gamma0,
            alpha=self.alpha, batch=self.batch_size, d=d, n=n, fraction=self.fraction,
            tau_max=self.tau_max, zeta=self.zeta, model=self._model, l2_mu=self.l2_mu,
            seed=seed, mode=self.mode,
        )

    def _fit_dataset(self, data: Dataset):
        config = self._config(data.n, data.d)
        if data.n < config.C:
            raise ValueError(f"{data.n} samples cannot be split across {config.C} clients")
        # a quarter of an even share keeps Dirichlet redraws cheap on small inputs
        min_per_client = max(1, min(config.batch, data.n // (4 * config.C)))
        plan = dirichlet_partition(data, config.C, config.zeta, config.seed, min_per_client=min_per_client)
        self.trace_ = run(config, data=data, plan=plan)
        final = self.trace_.final
        self.coef_ = np.array(final.weights)
        self.intercept_ = float(final.bias)
        self.loss_curve_ = self.trace_.server_losses
        return self

    def _decision(self, X) -> np.ndarray:
        check_is_fitted(self, ("coef_", "intercept_"))
        X = validate_data(self, X, reset=False)
        return X @ self.coef_ + self.intercept_


class AFLRegressor(RegressorMixin, _AFLBase):
    """Linear least-squares regression trained by simulated asynchronous FL."""

    _model = "regression"

    def fit(self, X, y):
        X, y = validate_data(self, X, y, y_numeric=True, dtype=np.float64)
        return self._fit_dataset(Dataset(X, y, "regression"))

    def predict(self, X) -> np.ndarray:
        return self._decision(X)


class AFLClassifier(ClassifierMixin, _AFLBase):
    """Binary linear SVM (hinge loss) trained by simulated asynchronous FL."""

    _model = "svm"

    def __init__(self, n_clients: int = 10, rounds: int = 1000, local_epochs: int = 100,
                 gamma0: float = 0.0005, alpha: float = 0.01, batch_size: int = 32,
                 fraction: float = 0.5, tau_max: int = 2, zeta: float = 0.5, l2_mu: float = 0.0,
                 mode: str = "afl", random_state: Optional[int] = None):
        super().__init__(n_clients, rounds, local_epochs, gamma0, alpha, batch_size, fraction,
                         tau_max, zeta, l2_mu, mode, random_state)

    def fit(self, X, y):
        X, y = validate_data(self, X, y, dtype=np.float64)
        check_classification_targets(y)
        self.classes_ = np.unique(y)
        if len(self.classes_) != 2:
            raise ValueError(f"binary classification only; got {len(self.classes_)} classes")
        signs = np.where(y == self.classes_[1], 1.0, -1.0)
        return self._fit_dataset(Dataset(X, signs, "classification"))

    def decision_function(self, X) -> np.ndarray:
        return self._decision(X)

    def predict(self, X) -> np.ndarray:
        return self.classes_[(self.decision_function(X) > 0).astype(int)]
