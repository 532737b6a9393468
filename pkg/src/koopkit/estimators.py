"""scikit-learn style estimators around the functional fitting API.

Data follow the scikit-learn convention: ``X`` is ``(n_samples, n_features)``
with consecutive rows being consecutive time steps. A list of such arrays is
treated as independent episodes; snapshot pairs never cross episodes.
"""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import koopfit
from .embed import identity_dictionary
from .exceptions import InsufficientDataError
from .systems import Trajectory

__all__ = ["DMD", "EDMD", "GeneratorEDMD", "HankelDMD"]


def _check_episodes(X):
    """Validate ``X`` as one array or a list of episode arrays."""
    if isinstance(X, (list, tuple)) and len(X) and np.ndim(X[0]) == 2:
        episodes = [check_array(x) for x in X]
    else:
        episodes = [check_array(X)]
    if not episodes:
        raise InsufficientDataError("no data")
    n = episodes[0].shape[1]
    if any(e.shape[1] != n for e in episodes):
        raise ValueError("all episodes must have the same number of features")
    return episodes


class _KoopmanRegressorBase(RegressorMixin, BaseEstimator):
    """Shared predict/simulate/spectrum for fitted lifted models."""

    def _set_model(self, model, n_features):
        self.model_ = model
        self.A_ = model.A
        self.C_ = model.C
        self.dictionary_ = model.dictionary
        self.n_features_in_ = n_features
        self.spectrum_ = None
        return self

    def lift(self, X):
        check_is_fitted(self, "model_")
        return self.dictionary_.transform(check_array(X))

    def predict(self, X):
        """One-step-ahead outputs ``C A psi(x)`` for every row of ``X``."""
        check_is_fitted(self, "model_")
        X = check_array(X)
        return self.dictionary_.transform(X) @ self.A_.T @ self.C_.T

    def simulate(self, x0, n_steps):
        """Outputs ``y_0 .. y_n_steps`` from the initial state ``x0``."""
        check_is_fitted(self, "model_")
        return koopfit.predict(self.model_, x0, n_steps)

    def spectrum(self):
        check_is_fitted(self, "model_")
        if self.spectrum_ is None:
            self.spectrum_ = koopfit.extract_spectrum(self.model_)
        return self.spectrum_

    @property
    def eigenvalues_(self):
        return self.spectrum().eigenvalues

    def eigenfunctions(self, X):
        return self.spectrum().eigenfunctions(check_array(X))


class EDMD(_KoopmanRegressorBase):
    """Extended DMD with a fixed dictionary and linear output map.

    Parameters
    ----------
    dictionary : Dictionary, optional
        Lifting. Defaults to the identity, which reduces to plain DMD.
    ts : float, optional
        Sampling time recorded on the fitted model.

    Attributes
    ----------
    model_ : KoopmanModel
    A_ : ndarray of shape (D, D)
    C_ : ndarray of shape (n_outputs, D)
    dictionary_ : Dictionary
    n_features_in_ : int
    """

    def __init__(self, dictionary=None, ts=None):
        self.dictionary = dictionary
        self.ts = ts

    def fit(self, X, y=None):
        """Fit on episodes ``X``; ``y`` optionally gives outputs per sample."""
        episodes = _check_episodes(X)
        n = episodes[0].shape[1]
        dictionary = self.dictionary if self.dictionary is not None else identity_dictionary(n)
        trajs = [Trajectory(np.arange(len(e)), e) for e in episodes]
        outputs = None
        if y is not None:
            ys = _check_episodes(y)
            outputs = np.vstack([yy[:-1] for yy in ys])
        model = koopfit.fit_edmd(trajs, dictionary, outputs, self.ts)
        return self._set_model(model, n)


class DMD(_KoopmanRegressorBase):
    """Exact DMD ``A = X+ pinv(X)`` with optional SVD rank truncation."""

    def __init__(self, rank=None, ts=None):
        self.rank = rank
        self.ts = ts

    def fit(self, X, y=None):
        episodes = _check_episodes(X)
        trajs = [Trajectory(np.arange(len(e)), e) for e in episodes]
        model = koopfit.fit_dmd(trajs, self.rank)
        model.ts = self.ts
        return self._set_model(model, episodes[0].shape[1])


class GeneratorEDMD(_KoopmanRegressorBase):
    """Continuous-time EDMD fitting the generator from states and derivatives.

    ``fit(X, X_dot)``; when ``X_dot`` is omitted it is estimated from ``X``
    by second-order finite differences with spacing ``ts``.
    """

    def __init__(self, dictionary=None, ts=None):
        self.dictionary = dictionary
        self.ts = ts

    def fit(self, X, X_dot=None):
        X = check_array(X)
        if X_dot is None:
            if self.ts is None:
                raise ValueError("ts is required to estimate derivatives")
            X_dot = np.gradient(X, self.ts, axis=0, edge_order=2)
        X_dot = check_array(X_dot)
        dictionary = self.dictionary if self.dictionary is not None else identity_dictionary(X.shape[1])
        model = koopfit.fit_generator_edmd(X, X_dot, dictionary, ts=self.ts)
        return self._set_model(model, X.shape[1])

    def predict(self, X):
        """Time derivative of the outputs ``C G psi(x)``."""
        return super().predict(X)


class HankelDMD(_KoopmanRegressorBase):
    """DMD on a depth-``depth`` Hankel (delay) embedding of a scalar series."""

    def __init__(self, depth=2, rank=None):
        self.depth = depth
        self.rank = rank

    def fit(self, X, y=None):
        series = np.asarray(X, dtype=float).ravel()
        model = koopfit.hankel_dmd(series, self.depth, self.rank)
        return self._set_model(model, self.depth)
