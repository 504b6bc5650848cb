"""scikit-learn style front end.

``fit`` meta-trains on a labeled source pool, ``transform`` embeds inputs
with the meta-trained encoder, and ``predict`` fine-tunes a copy of the
encoder on one target task: the rows passed to ``predict`` are the unlabeled
query set and ``X_support``/``y_support`` the labeled support set.
"""

from __future__ import annotations

from types import SimpleNamespace

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .adapt import finetune_episode
from .autodiff import Tensor
from .checkpoint import check_compatible
from .config import RunConfig, from_flat
from .episodes import AdaptTask, derive_seed
from .meta_train import meta_train
from .models import encoder_forward


class PoolDomain:
    """Episode source backed by a finite labeled pool (draws rows without replacement)."""

    def __init__(self, X: np.ndarray, y: np.ndarray, seed: int, name: str = "pool"):
        self.class_ids, inverse = np.unique(y, return_inverse=True)
        self.class_ids = list(self.class_ids)
        self.input_dim = X.shape[1]
        self.seed = seed
        self.spec = SimpleNamespace(name=name)
        self._rows = [X[inverse == c] for c in range(len(self.class_ids))]

    @property
    def n_classes(self) -> int:
        return len(self.class_ids)

    def class_size(self, class_index: int) -> int:
        return len(self._rows[class_index])

    def sample(self, class_index: int, n: int, rng: np.random.Generator) -> np.ndarray:
        rows = self._rows[class_index]
        return rows[rng.choice(len(rows), size=n, replace=False)]


class APPLClassifier(TransformerMixin, BaseEstimator):
    """Few-shot classifier with parametric prototypes and transductive fine-tuning.

    Defaults are the desk-scale settings of the committed benchmark; the
    learning rates are lower than the ones usually quoted because all losses
    are sums over instances.
    """

    def __init__(self, *, hidden=(64, 64), embed_dim=16, n_way=5, k_shot=5, q_per_class=15,
                 meta_iters=2000, inner_steps=5, inner_lr=1e-3, outer_lr=1e-4,
                 weight_decay=1e-2, lambda_dis=0.1, lambda_coh=1e-3, use_pcn=True,
                 adapt_iters=100, adapt_lr=1e-3, alpha0=0.5, gamma=0.99, epsilon=0.4,
                 clustering=True, use_wma=True, random_state=0):
        self.hidden = hidden
        self.embed_dim = embed_dim
        self.n_way = n_way
        self.k_shot = k_shot
        self.q_per_class = q_per_class
        self.meta_iters = meta_iters
        self.inner_steps = inner_steps
        self.inner_lr = inner_lr
        self.outer_lr = outer_lr
        self.weight_decay = weight_decay
        self.lambda_dis = lambda_dis
        self.lambda_coh = lambda_coh
        self.use_pcn = use_pcn
        self.adapt_iters = adapt_iters
        self.adapt_lr = adapt_lr
        self.alpha0 = alpha0
        self.gamma = gamma
        self.epsilon = epsilon
        self.clustering = clustering
        self.use_wma = use_wma
        self.random_state = random_state

    def to_config(self, input_dim: int | None = None) -> RunConfig:
        """The equivalent :class:`RunConfig` (validated)."""
        flat = {
            "seed": int(self.random_state),
            "model.hidden": [int(h) for h in self.hidden],
            "model.embed_dim": int(self.embed_dim),
            "meta.n_way": int(self.n_way),
            "meta.k_shot": int(self.k_shot),
            "meta.q_per_class": int(self.q_per_class),
            "meta.max_iters": int(self.meta_iters),
            "meta.max_initers": int(self.inner_steps),
            "meta.inner_lr": float(self.inner_lr),
            "meta.outer_lr": float(self.outer_lr),
            "meta.weight_decay": float(self.weight_decay),
            "meta.lambda_dis": float(self.lambda_dis),
            "meta.lambda_coh": float(self.lambda_coh),
            "meta.use_pcn": bool(self.use_pcn),
            "adapt.max_iters": int(self.adapt_iters),
            "adapt.lr": float(self.adapt_lr),
            "adapt.alpha0": float(self.alpha0),
            "adapt.gamma": float(self.gamma),
            "adapt.epsilon": float(self.epsilon),
            "adapt.lambda_dis": float(self.lambda_dis),
            "adapt.lambda_coh": float(self.lambda_coh),
            "adapt.use_pcn": bool(self.use_pcn),
            "adapt.clustering": bool(self.clustering),
            "adapt.n_clusters": int(self.k_shot),
            "adapt.use_wma": bool(self.use_wma),
        }
        if input_dim is not None:
            flat["data.input_dim"] = int(input_dim)
        return from_flat(flat)

    def fit(self, X, y):
        """Meta-train on a labeled source pool with at least ``n_way`` classes."""
        X, y = check_X_y(X, y, dtype=np.float64)
        cfg = self.to_config(X.shape[1])
        pool = PoolDomain(X, y, derive_seed(cfg.seed, "pool"))
        if pool.n_classes < cfg.meta.n_way:
            raise ValueError(f"need at least n_way={cfg.meta.n_way} classes, got {pool.n_classes}")
        need = cfg.meta.k_shot + cfg.meta.q_per_class
        small = [c for i, c in enumerate(pool.class_ids) if pool.class_size(i) < need]
        if small:
            raise ValueError(f"every class needs k_shot + q_per_class = {need} rows; "
                             f"too few for classes {small[:5]}")
        result = meta_train(cfg, pool)
        self.encoder_, self.pcn_ = result.encoder, result.pcn
        self.curve_ = result.curve
        self.n_features_in_ = X.shape[1]
        self.source_classes_ = np.asarray(pool.class_ids)
        return self

    def transform(self, X):
        """Embed rows with the meta-trained encoder."""
        check_is_fitted(self, "encoder_")
        X = self._check_features(X)
        return encoder_forward(X, self.encoder_.map(Tensor)).data

    def _check_features(self, X):
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    def _task(self, X, X_support, y_support):
        check_is_fitted(self, "encoder_")
        X = self._check_features(X)
        X_support, y_support = check_X_y(X_support, y_support, dtype=np.float64)
        if X_support.shape[1] != self.n_features_in_:
            raise ValueError(f"X_support has {X_support.shape[1]} features, "
                             f"expected {self.n_features_in_}")
        classes, labels = np.unique(y_support, return_inverse=True)
        counts = np.bincount(labels)
        if len(classes) < 2:
            raise ValueError("the support set needs at least two classes")
        if not (counts == counts[0]).all():
            raise ValueError(f"support classes must be balanced, got counts {counts.tolist()}")
        cfg = self.to_config(self.n_features_in_)
        if cfg.adapt.use_pcn:
            check_compatible(self.encoder_, self.pcn_, input_dim=self.n_features_in_,
                             k_shot=int(counts[0]), clustering=cfg.adapt.clustering,
                             n_clusters=self.pcn_.k_in)
        order = np.argsort(labels, kind="stable")
        task = AdaptTask(len(classes), int(counts[0]), X_support[order], labels[order], X,
                         seed=derive_seed(cfg.seed, "predict"))
        return task, classes, cfg

    def predict_proba(self, X, *, X_support, y_support):
        """Soft pseudo-labels after fine-tuning; columns follow ``np.unique(y_support)``."""
        task, _, cfg = self._task(X, X_support, y_support)
        return finetune_episode(self.encoder_, self.pcn_, task, cfg.adapt).probabilities

    def predict(self, X, *, X_support, y_support):
        task, classes, cfg = self._task(X, X_support, y_support)
        result = finetune_episode(self.encoder_, self.pcn_, task, cfg.adapt)
        return classes[result.predictions]

    def score(self, X, y, *, X_support, y_support):
        """Query accuracy for one task."""
        pred = self.predict(X, X_support=X_support, y_support=y_support)
        return float(np.mean(pred == np.asarray(y)))
