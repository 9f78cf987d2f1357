"""scikit-learn style wrapper around the training loop and the clean inference path."""

from __future__ import annotations

from dataclasses import fields

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from biclip.config import TrainConfig
from biclip.data.dataset import Dataset, Sample
from biclip.metrics import binarize, score_masks
from biclip.validation import check_images, check_masks, check_text

_DEFAULTS = TrainConfig()


class BiCLIPSegmenter(BaseEstimator):
    """Text-guided binary segmenter.

    ``fit(X, y, text=...)`` trains on images ``X`` [N,3,H,W], masks ``y``
    and raw text embeddings ``text`` [N,D]. ``image_side`` and ``d_raw`` are
    taken from the data. Hyper-parameters mirror :class:`TrainConfig`.
    """

    def __init__(
        self,
        batch_size=_DEFAULTS.batch_size,
        epochs=_DEFAULTS.epochs,
        max_steps=_DEFAULTS.max_steps,
        lr_initial=_DEFAULTS.lr_initial,
        lr_min=_DEFAULTS.lr_min,
        weight_decay=_DEFAULTS.weight_decay,
        lambda_gen=_DEFAULTS.lambda_gen,
        lambda_iac=_DEFAULTS.lambda_iac,
        lambda_cycle=_DEFAULTS.lambda_cycle,
        d_t=_DEFAULTS.d_t,
        d_i=_DEFAULTS.d_i,
        d_p=_DEFAULTS.d_p,
        base_width=_DEFAULTS.base_width,
        depth=_DEFAULTS.depth,
        seed=_DEFAULTS.seed,
    ):
        self.batch_size = batch_size
        self.epochs = epochs
        self.max_steps = max_steps
        self.lr_initial = lr_initial
        self.lr_min = lr_min
        self.weight_decay = weight_decay
        self.lambda_gen = lambda_gen
        self.lambda_iac = lambda_iac
        self.lambda_cycle = lambda_cycle
        self.d_t = d_t
        self.d_i = d_i
        self.d_p = d_p
        self.base_width = base_width
        self.depth = depth
        self.seed = seed

    def _config(self, side: int, d_raw: int) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        params = {k: v for k, v in self.get_params().items() if k in names}
        return TrainConfig(image_side=side, d_raw=d_raw, **params)

    def fit(self, X, y, text=None):
        from biclip.train import train

        X = check_images(X)
        n, side = X.shape[0], X.shape[2]
        y = check_masks(y, n, side)
        text = check_text(text, n)
        cfg = self._config(side, text.shape[1])
        data = Dataset(tuple(Sample(f"fit-{k:06d}", X[k], y[k], text[k]) for k in range(n)))
        result = train(cfg, data)
        self.model_ = result.model
        self.history_ = result.history
        self.n_steps_ = result.steps
        self.image_side_ = side
        self.n_features_in_ = text.shape[1]
        return self

    def predict_proba(self, X, text=None) -> np.ndarray:
        """Foreground probabilities [N,1,H,W]."""
        check_is_fitted(self, "model_")
        X = check_images(X, self.image_side_)
        text = check_text(text, X.shape[0], self.n_features_in_)
        return self.model_.predict_proba(X, text)

    def predict(self, X, text=None) -> np.ndarray:
        """Binary masks [N,1,H,W] (probability strictly above 0.5)."""
        return binarize(self.predict_proba(X, text))

    def score(self, X, y, text=None) -> float:
        """Mean per-sample Dice."""
        pred = self.predict(X, text)
        y = check_masks(y, pred.shape[0], self.image_side_)
        return score_masks(pred, y).dice
