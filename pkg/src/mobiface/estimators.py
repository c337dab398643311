"""scikit-learn style wrappers.

``MobiFaceEmbedder`` turns face images into embeddings (a transformer);
``PairVerifier`` learns a same/different threshold on pair similarities (a
classifier). Both follow the usual ``fit`` / ``transform`` / ``predict``
contract, so they work with ``get_params``, ``clone`` and model selection.
"""

from __future__ import annotations

import os
from collections.abc import Mapping

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import graph, pipeline, weights as wio
from .tensor import DTYPE


def check_faces(X, raw: bool = True) -> np.ndarray:
    """Validate a batch of faces shaped ``[N, 3, 112, 112]`` (a single face is promoted).

    With ``raw=True`` values must be 0-255 pixels; otherwise they must already
    be normalised to [-1, 1].
    """
    X = check_array(X, dtype=DTYPE, allow_nd=True, ensure_2d=False)
    if X.ndim == 3:
        X = X[None]
    size = pipeline.FACE_SIZE
    if X.ndim != 4 or X.shape[1:] != (3, size, size):
        raise ValueError(f"expected faces of shape [N, 3, {size}, {size}], got {X.shape}")
    lo, hi = (0.0, 255.0) if raw else (-1.0, 1.0)
    if X.min() < lo or X.max() > hi:
        raise ValueError(f"face values must lie in [{lo}, {hi}]")
    return X


def check_pairs(X) -> np.ndarray:
    """Reduce pair input to one similarity per pair.

    Accepts embedding pairs ``[n, 2, d]`` (cosine similarity is taken) or
    precomputed similarities ``[n]`` / ``[n, 1]``.
    """
    X = check_array(X, dtype=np.float64, allow_nd=True, ensure_2d=False)
    if X.ndim == 3 and X.shape[1] == 2:
        a, b = X[:, 0], X[:, 1]
        norms = np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
        if np.any(norms == 0):
            raise ValueError("zero embedding in pair input")
        return np.clip(np.einsum("ij,ij->i", a, b) / norms, -1.0, 1.0)
    if X.ndim == 2 and X.shape[1] == 1:
        return X[:, 0]
    if X.ndim == 1:
        return X
    raise ValueError(f"expected [n, 2, d] embedding pairs or [n] similarities, got shape {X.shape}")


class MobiFaceEmbedder(TransformerMixin, BaseEstimator):
    """Face images in, embeddings out.

    Parameters
    ----------
    arch : {"mobiface", "mobiface-flipped"}
    weights : None, path or mapping
        ``None`` draws seeded random weights; a path is read as an MBFW file.
    use_flip_head : bool
        Average the embedding with the flip head's mirror prediction.
    preprocess : bool
        Inputs are raw 0-255 pixels to be normalised (``True``) or already
        normalised faces.
    normalize : bool
        L2-normalise each output row.
    fold_bn : bool
        Fold batch norm into the preceding convolutions before inference.
    """

    def __init__(self, arch="mobiface", weights=None, use_flip_head=False, preprocess=True,
                 normalize=True, fold_bn=False, seed=42, batch_size=16):
        self.arch = arch
        self.weights = weights
        self.use_flip_head = use_flip_head
        self.preprocess = preprocess
        self.normalize = normalize
        self.fold_bn = fold_bn
        self.seed = seed
        self.batch_size = batch_size

    def fit(self, X=None, y=None):
        arch = "mobiface-flipped" if self.use_flip_head and self.arch == "mobiface" else self.arch
        net, head = graph.build_architecture(arch)
        if self.weights is None:
            store = wio.init_random(net, self.seed, head)
        elif isinstance(self.weights, (str, os.PathLike)):
            store = wio.load(self.weights)
        elif isinstance(self.weights, Mapping):
            store = wio.WeightStore(self.weights)
        else:
            raise TypeError(f"weights must be None, a path or a mapping, not {type(self.weights).__name__}")
        wio.validate(store, net, head, allow_extra=head is None)
        if self.fold_bn:
            folded_net, folded = graph.fold_network(net, store)
            for name in wio.weight_shapes(net, head):
                if name.startswith("flip."):
                    folded[name] = store[name]
            net, store = folded_net, folded
        self.net_ = net
        self.head_ = head
        self.weights_ = store
        self.n_features_out_ = net.embedding_dim
        return self

    def transform(self, X):
        check_is_fitted(self, "weights_")
        X = check_faces(X, raw=self.preprocess)
        if self.preprocess:
            X = pipeline.preprocess(X)
        out = np.empty((len(X), self.n_features_out_), dtype=DTYPE)
        step = max(1, int(self.batch_size))
        for start in range(0, len(X), step):
            out[start:start + step] = pipeline.embed_faces(
                self.net_, self.weights_, X[start:start + step], self.head_, self.use_flip_head)
        if self.normalize:
            norms = np.linalg.norm(out.astype(np.float64), axis=1, keepdims=True)
            if np.any(norms == 0):
                raise ValueError("zero embedding cannot be normalised")
            out = (out / norms).astype(DTYPE)
        return out


class PairVerifier(ClassifierMixin, BaseEstimator):
    """Same/different decision by thresholding pair similarity.

    ``threshold=None`` learns the accuracy-maximising threshold in ``fit``
    (lowest on ties); a number fixes it.
    """

    def __init__(self, threshold=None):
        self.threshold = threshold

    def fit(self, X, y):
        scores = check_pairs(X)
        y = np.asarray(y)
        if y.shape != scores.shape:
            raise ValueError(f"got {len(scores)} pairs but {y.size} labels")
        if not np.isin(y, (0, 1)).all():
            raise ValueError("labels must be 0 (different) or 1 (same)")
        self.classes_ = np.array([0, 1])
        if self.threshold is None:
            self.threshold_, self.train_accuracy_ = pipeline.best_threshold(scores, y)
        else:
            self.threshold_ = float(self.threshold)
            self.train_accuracy_ = float(np.mean((scores > self.threshold_) == y.astype(bool)))
        return self

    def decision_function(self, X):
        check_is_fitted(self, "threshold_")
        return check_pairs(X) - self.threshold_

    def predict(self, X):
        return (self.decision_function(X) > 0).astype(int)
