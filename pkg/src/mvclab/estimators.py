"""scikit-learn style wrappers: ``X`` is a list of per-view matrices."""

from __future__ import annotations

from dataclasses import replace
from typing import List, Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin, TransformerMixin
from sklearn.utils import check_array
from sklearn.utils.validation import check_is_fitted

from . import networks as nets
from .data import FormatError, ViewSet
from .losses import LossConfig
from .training import TrainConfig, biview_embeddings, predict_biview, train_biview, \
    train_mcmvc_plus_plus, soft_assignments
from .cluster import fuse_assignments


def check_views(X, n_views: Optional[int] = None, min_views: int = 2) -> List[np.ndarray]:
    """Validate a list of row-aligned 2-D float matrices."""
    if isinstance(X, ViewSet):
        X = X.views
    if isinstance(X, np.ndarray) and X.ndim == 2:
        raise FormatError("expected a list of per-view matrices, got a single matrix")
    views = [check_array(x, dtype=np.float64) for x in X]
    if len(views) < min_views:
        raise FormatError(f"need at least {min_views} views, got {len(views)}")
    if n_views is not None and len(views) != n_views:
        raise FormatError(f"fitted on {n_views} views, got {len(views)}")
    if len({x.shape[0] for x in views}) != 1:
        raise FormatError("views must have the same number of rows")
    return views


def _check_mask(mask, m: int, n_views: int) -> Optional[np.ndarray]:
    if mask is None:
        return None
    mask = np.asarray(mask).astype(bool)
    if mask.shape != (m, n_views):
        raise FormatError(f"mask must have shape {(m, n_views)}")
    return mask


class _Base(ClusterMixin, TransformerMixin, BaseEstimator):

    def _config(self) -> TrainConfig:
        cfg = self.config if self.config is not None else TrainConfig()
        return replace(cfg, n_clusters=self.n_clusters, seed=self.random_state)

    def _scale(self, views):
        # apply the min-max map learned at fit time
        if not self.normalize:
            return views
        return [np.where(span > 0, (x - lo) / np.where(span > 0, span, 1.0), 0.0)
                for x, (lo, span) in zip(views, self.scaling_)]

    def _learn_scale(self, views):
        self.scaling_ = [(x.min(axis=0), x.max(axis=0) - x.min(axis=0)) for x in views]


class MCMVC(_Base):
    """Bi-view clustering with the cluster, instance, reconstruction, variance
    and view-label terms trained jointly.

    Parameters
    ----------
    n_clusters : int
    variant : {"mcmvc-m", "mcmvc-i", "baseline"}
    epochs, lr, batch_size : training schedule
    config : TrainConfig, optional
        Full configuration; the explicit arguments above override it.
    """

    def __init__(self, n_clusters=3, variant="mcmvc-m", epochs=200, lr=1e-3, batch_size=256,
                 normalize=True, config=None, random_state=0):
        self.n_clusters = n_clusters
        self.variant = variant
        self.epochs = epochs
        self.lr = lr
        self.batch_size = batch_size
        self.normalize = normalize
        self.config = config
        self.random_state = random_state

    def fit(self, X, y=None, mask=None):
        views = check_views(X, n_views=2)
        mask = _check_mask(mask, views[0].shape[0], 2)
        self._learn_scale(views)
        cfg = replace(self._config(), epochs=self.epochs, lr=self.lr, batch_size=self.batch_size,
                      normalize=False)
        vs = ViewSet(self._scale(views), labels=y, mask=mask)
        self.model_, self.history_, self.labels_ = train_biview(
            vs, cfg, self.variant, incomplete=mask is not None and not mask.all())
        self.config_ = cfg
        return self

    def transform(self, X, mask=None):
        """Concatenated per-view embeddings, shape (m, 2 * D)."""
        check_is_fitted(self, "model_")
        views = self._scale(check_views(X, n_views=2))
        mask = _check_mask(mask, views[0].shape[0], 2)
        if mask is not None and not self.model_.has("dual0"):
            if not mask.all():
                raise FormatError("model was fitted without dual predictors; cannot fill views")
            mask = None
        return np.hstack(biview_embeddings(self.model_, views, mask))

    def predict(self, X, mask=None):
        check_is_fitted(self, "model_")
        views = self._scale(check_views(X, n_views=2))
        mask = _check_mask(mask, views[0].shape[0], 2)
        if mask is not None and mask.all():
            mask = None
        return predict_biview(self.model_, views, self.n_clusters, self.random_state, mask,
                              self.config_.kmeans_n_init)

    def fit_predict(self, X, y=None, mask=None):
        return self.fit(X, y, mask=mask).labels_


class MCMVCPlusPlus(_Base):
    """Staged multi-view clustering (any V ≥ 2) with optional assignment enhancement."""

    def __init__(self, n_clusters=3, enhance=True, variant="mcmvc-plus-plus", lr=1e-3,
                 batch_size=256, normalize=True, config=None, random_state=0):
        self.n_clusters = n_clusters
        self.enhance = enhance
        self.variant = variant
        self.lr = lr
        self.batch_size = batch_size
        self.normalize = normalize
        self.config = config
        self.random_state = random_state

    def fit(self, X, y=None):
        views = check_views(X)
        self._learn_scale(views)
        cfg = replace(self._config(), lr=self.lr, batch_size=self.batch_size, normalize=False)
        vs = ViewSet(self._scale(views), labels=y)
        self.model_, self.history_, self.result_ = train_mcmvc_plus_plus(
            vs, cfg, enhance=self.enhance, variant=self.variant)
        self.labels_ = self.result_.labels
        self.n_views_ = len(views)
        self.config_ = cfg
        return self

    def transform(self, X):
        """View-averaged soft cluster assignments, shape (m, K)."""
        check_is_fitted(self, "model_")
        views = self._scale(check_views(X, n_views=self.n_views_))
        return np.mean(soft_assignments(self.model_, views), axis=0)

    def predict(self, X):
        check_is_fitted(self, "model_")
        views = self._scale(check_views(X, n_views=self.n_views_))
        return fuse_assignments(soft_assignments(self.model_, views))

    def fit_predict(self, X, y=None):
        return self.fit(X, y).labels_
