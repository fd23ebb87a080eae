"""Siamese pairwise attribute ranker.

One ranker per attribute.  A shared MLP encoder phi maps a flattened image
to a scalar score v; a pair (i, j) is modeled with the logistic posterior
p_ij = 1 / (1 + e^-(v_i - v_j)) and trained with the pairwise loss
-log p_ij.  The loss is always computed in its softplus form
log(1 + e^-(v_i - v_j)), which is the same function evaluated stably.

The class follows the scikit-learn estimator conventions (get_params /
fit / predict / score) over stacked-pair feature matrices: a row of X is
[first image | second image] and y is +1 when the first image has the
stronger attribute.  ``decision_function`` scores single images.
"""

from __future__ import annotations

import json

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator

from . import autograd as ag
from .autograd import Tensor
from .validation import as_float_matrix, check_pair_labels, check_pair_matrix

__all__ = ["PairwiseRanker", "pairwise_posterior", "rank_loss",
           "rank_loss_from_gap", "pairwise_accuracy"]

CHECKPOINT_VERSION = 1


def pairwise_posterior(v_i: float, v_j: float) -> float:
    """P(image i outranks image j) from their scores."""
    if not (np.isfinite(v_i) and np.isfinite(v_j)):
        raise ValueError("scores must be finite")
    return float(expit(v_i - v_j))


def rank_loss(p_ij: float) -> float:
    """-log p for an ordered pair; domain (0, 1)."""
    if not 0.0 < p_ij < 1.0:
        raise ag.DomainError(f"posterior must lie strictly inside (0, 1), got {p_ij}")
    return float(-np.log(p_ij))


def rank_loss_from_gap(d: float) -> float:
    """The same loss straight from the score gap d = v_i - v_j, overflow-safe."""
    return float(np.logaddexp(0.0, -d))


def pairwise_accuracy(v_first: np.ndarray, v_second: np.ndarray,
                      labels: np.ndarray) -> float:
    """Fraction of pairs ordered according to their label; ties score as wrong."""
    v_first = np.asarray(v_first, dtype=np.float64)
    v_second = np.asarray(v_second, dtype=np.float64)
    labels = np.asarray(labels)
    if v_first.size == 0:
        raise ValueError("cannot evaluate on an empty pair set")
    return float(np.mean(np.sign(v_first - v_second) == labels))


class PairwiseRanker(BaseEstimator):
    """MLP scorer with weight sharing across the two pair branches.

    Architecture: image_side^2 -> hidden1 -> hidden2 -> 1, ReLU between the
    dense layers, He-scaled Gaussian initialization.  Training is minibatch
    SGD on the mean pair loss, stopping at the epoch cap or once the epoch
    loss has moved by less than ``tol`` across a ``patience``-epoch window.

    With ``warm_start=True`` a second fit continues from the current weights
    instead of re-initializing; the active loop uses this for retraining a
    pretrained snapshot on a grown pair set.
    """

    def __init__(self, image_side: int = 32, hidden1: int = 128, hidden2: int = 64,
                 attribute: int = 0, lr: float = 0.05, lr_decay: float = 1.0,
                 weight_decay: float = 0.0, epoch_cap: int = 250, minibatch: int = 32,
                 tol: float = 1e-6, patience: int = 5, seed: int = 0,
                 warm_start: bool = False):
        self.image_side = image_side
        self.hidden1 = hidden1
        self.hidden2 = hidden2
        self.attribute = attribute
        self.lr = lr
        self.lr_decay = lr_decay
        self.weight_decay = weight_decay
        self.epoch_cap = epoch_cap
        self.minibatch = minibatch
        self.tol = tol
        self.patience = patience
        self.seed = seed
        self.warm_start = warm_start

    # -- weights ------------------------------------------------------------

    @property
    def image_dim(self) -> int:
        return self.image_side ** 2

    def _init_weights(self) -> None:
        rng = np.random.default_rng(self.seed)
        d, h1, h2 = self.image_dim, self.hidden1, self.hidden2

        def he(fan_in, fan_out):
            return ag.parameter(rng.normal(size=(fan_in, fan_out)) * np.sqrt(2.0 / fan_in))

        self.weights_ = [
            he(d, h1), ag.parameter(np.zeros((1, h1))),
            he(h1, h2), ag.parameter(np.zeros((1, h2))),
            he(h2, 1), ag.parameter(np.zeros((1, 1))),
        ]
        self.loss_trace_ = []
        self.n_epochs_ = 0

    def _ensure_weights(self) -> None:
        if not hasattr(self, "weights_"):
            self._init_weights()

    def get_weights(self) -> list[np.ndarray]:
        self._ensure_weights()
        return [w.data.copy() for w in self.weights_]

    def set_weights(self, arrays) -> "PairwiseRanker":
        self._ensure_weights()
        if len(arrays) != len(self.weights_):
            raise ValueError(f"expected {len(self.weights_)} arrays, got {len(arrays)}")
        for w, arr in zip(self.weights_, arrays):
            arr = np.asarray(arr, dtype=np.float64)
            if arr.shape != w.data.shape:
                raise ValueError(f"weight shape {arr.shape} != expected {w.data.shape}")
            w.data = np.ascontiguousarray(arr.copy())
            w.grad = None
        return self

    # -- forward ------------------------------------------------------------

    def _score_tensor(self, x: Tensor) -> Tensor:
        w1, b1, w2, b2, w3, b3 = self.weights_
        h = ag.relu(ag.matmul(x, w1) + b1)
        h = ag.relu(ag.matmul(h, w2) + b2)
        return ag.matmul(h, w3) + b3  # (B, 1)

    def loss_tensor(self, x_winner: Tensor, x_loser: Tensor) -> Tensor:
        """Mean pair loss on the tape; inputs are (B, S*S), winner first.

        Gradients reach both the shared weights and, when the inputs carry
        the tape (synthesized images), the inputs themselves.
        """
        self._ensure_weights()
        gap = self._score_tensor(x_winner) - self._score_tensor(x_loser)
        return ag.tmean(ag.softplus(ag.neg(gap)))

    def decision_function(self, X) -> np.ndarray:
        """Scores for single flattened images, shape (n,)."""
        self._ensure_weights()
        X = as_float_matrix(X, self.image_dim, name="images")
        return self._score_tensor(Tensor(X)).data.reshape(-1)

    def score_image(self, image) -> float:
        """Score one (S, S) image."""
        img = np.asarray(image, dtype=np.float64)
        if img.shape != (self.image_side, self.image_side):
            raise ValueError(f"image must be {self.image_side}x{self.image_side}, got {img.shape}")
        return float(self.decision_function(img.reshape(1, -1))[0])

    # -- estimator API --------------------------------------------------------

    def fit(self, X, y) -> "PairwiseRanker":
        """Train on stacked pairs: X rows are [first | second], y in {+1, -1}."""
        xa, xb = check_pair_matrix(X, self.image_dim)
        y = check_pair_labels(y, xa.shape[0])
        if xa.shape[0] == 0:
            raise ValueError("cannot fit on zero pairs")
        if not (self.warm_start and hasattr(self, "weights_")):
            self._init_weights()

        # orient every pair winner-first once
        flip = y == -1
        xw = np.where(flip[:, None], xb, xa)
        xl = np.where(flip[:, None], xa, xb)

        rng = np.random.default_rng(self.seed + 1)
        n = xw.shape[0]
        lr = self.lr
        window: list[float] = []
        for epoch in range(self.epoch_cap):
            order = rng.permutation(n)
            total = 0.0
            for start in range(0, n, self.minibatch):
                idx = order[start : start + self.minibatch]
                ag.zero_grads(self.weights_)
                loss = self.loss_tensor(Tensor(xw[idx]), Tensor(xl[idx]))
                ag.backward(loss)
                ag.sgd_step(self.weights_, lr, self.weight_decay)
                total += loss.item() * idx.size
            lr *= self.lr_decay
            epoch_loss = total / n
            self.loss_trace_.append(epoch_loss)
            self.n_epochs_ += 1
            window.append(epoch_loss)
            if len(window) > self.patience + 1:
                window.pop(0)
            if len(window) == self.patience + 1 and max(window) - min(window) < self.tol:
                break
        return self

    def predict(self, X) -> np.ndarray:
        """Predicted ordering for stacked pairs; 0 marks an exact score tie."""
        xa, xb = check_pair_matrix(X, self.image_dim)
        va = self.decision_function(xa)
        vb = self.decision_function(xb)
        return np.sign(va - vb).astype(np.int64)

    def score(self, X, y) -> float:
        """Pairwise accuracy with ties counted as incorrect."""
        xa, xb = check_pair_matrix(X, self.image_dim)
        y = check_pair_labels(y, xa.shape[0])
        return pairwise_accuracy(self.decision_function(xa), self.decision_function(xb), y)

    # -- persistence ----------------------------------------------------------

    def to_checkpoint(self) -> dict:
        """JSON-safe weight dump; floats survive round-trip bit for bit."""
        self._ensure_weights()
        return {
            "format_version": CHECKPOINT_VERSION,
            "attribute": self.attribute,
            "seed": self.seed,
            "image_side": self.image_side,
            "shapes": [list(w.data.shape) for w in self.weights_],
            "weights": [w.data.reshape(-1).tolist() for w in self.weights_],
        }

    @classmethod
    def from_checkpoint(cls, blob: dict, **overrides) -> "PairwiseRanker":
        if blob.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {blob.get('format_version')}")
        shapes = [tuple(s) for s in blob["shapes"]]
        h1, h2 = shapes[0][1], shapes[2][1]
        model = cls(image_side=blob["image_side"], hidden1=h1, hidden2=h2,
                    attribute=blob["attribute"], seed=blob["seed"], **overrides)
        model._init_weights()
        model.set_weights([
            np.asarray(flat, dtype=np.float64).reshape(shape)
            for flat, shape in zip(blob["weights"], shapes)
        ])
        return model

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_checkpoint(), fh)

    @classmethod
    def load(cls, path, **overrides) -> "PairwiseRanker":
        with open(path) as fh:
            return cls.from_checkpoint(json.load(fh), **overrides)
