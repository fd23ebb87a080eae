"""Adversarial pair-synthesis controller.

Maps a Gaussian seed q (length 2M) to a pair of generator inputs
{(y_A, z_A), (y_B, z_B)}.  The y codes come from two independent FC stacks
(q -> 64 -> 32 -> N, ReLU) whose outputs are batch-normalized and then
affinely rescaled into the real pool's attribute range:

    y = mu_a + sigma_a * n

with (mu_a, sigma_a) frozen statistics of the pool.  The z codes are not
learned at all: z_A is the first half of q and z_B the second half, so
nuisance variety comes straight from the seed distribution.

Training is adversarial: the controller descends the exact negation of the
ranker's pair loss (plus an optional hinge that keeps the two attribute
codes from collapsing into ties no annotator could label).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .autograd import Tensor

__all__ = [
    "ControlNetwork",
    "ControlBatch",
    "compute_scaling_stats",
    "control_loss",
    "auto_labels",
    "adversarial_step",
    "decayed_lr",
]

CHECKPOINT_VERSION = 1


def compute_scaling_stats(strengths) -> tuple[np.ndarray, np.ndarray]:
    """Per-attribute mean and population std of pool attribute strengths.

    The std is floored at 1e-6 so a degenerate constant column cannot zero
    out a whole output dimension.
    """
    arr = np.asarray(strengths, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 2:
        raise ValueError(f"need at least 2 strength rows, got shape {arr.shape}")
    mu = arr.mean(axis=0)
    sigma = np.maximum(arr.std(axis=0), 1e-6)
    return mu, sigma


def control_loss(loss_rank: Tensor) -> Tensor:
    """The adversary's objective: the exact negation of the ranking loss."""
    return ag.neg(loss_rank)


def auto_labels(y_a: np.ndarray, y_b: np.ndarray, attribute: int) -> np.ndarray:
    """Ordering implied by the generating codes themselves: +1 when A is
    stronger on the target attribute.  Exact ties fall to +1 (measure zero)."""
    return np.where(y_a[:, attribute] >= y_b[:, attribute], 1, -1).astype(np.int64)


def decayed_lr(lr0: float, gamma: float, epoch: int) -> float:
    """Geometric decay schedule: lr0 * gamma^epoch."""
    return lr0 * gamma ** epoch


@dataclass
class ControlBatch:
    """One forward pass: tape-carrying codes for both pair branches."""

    y_a: Tensor
    z_a: Tensor
    y_b: Tensor
    z_b: Tensor


class ControlNetwork:
    def __init__(self, num_attributes: int = 4, latent_dim: int = 4,
                 hidden1: int = 64, hidden2: int = 32, seed: int = 0,
                 attribute: int = 0):
        self.num_attributes = int(num_attributes)
        self.latent_dim = int(latent_dim)
        self.hidden1 = int(hidden1)
        self.hidden2 = int(hidden2)
        self.seed = int(seed)
        self.attribute = int(attribute)
        self.seed_dim = 2 * self.latent_dim
        self._mu: np.ndarray | None = None
        self._sigma: np.ndarray | None = None

        rng = np.random.default_rng(seed)

        def he(fan_in, fan_out):
            return ag.parameter(rng.normal(size=(fan_in, fan_out)) * np.sqrt(2.0 / fan_in))

        def branch():
            return [
                he(self.seed_dim, self.hidden1), ag.parameter(np.zeros((1, self.hidden1))),
                he(self.hidden1, self.hidden2), ag.parameter(np.zeros((1, self.hidden2))),
                he(self.hidden2, self.num_attributes),
                ag.parameter(np.zeros((1, self.num_attributes))),
            ]

        self._branch_a = branch()
        self._branch_b = branch()

    # -- scaling stats --------------------------------------------------------

    @property
    def has_scaling(self) -> bool:
        return self._mu is not None

    def fit_scaling(self, strengths) -> "ControlNetwork":
        """Freeze (mu, sigma) from pool attribute strengths; one-shot."""
        if self.has_scaling:
            raise RuntimeError("scaling statistics are frozen once computed")
        mu, sigma = compute_scaling_stats(strengths)
        if mu.shape != (self.num_attributes,):
            raise ValueError(f"strengths must have {self.num_attributes} columns")
        self._mu = mu
        self._sigma = sigma
        return self

    def set_scaling(self, mu, sigma) -> "ControlNetwork":
        self._mu = np.asarray(mu, dtype=np.float64).copy()
        self._sigma = np.asarray(sigma, dtype=np.float64).copy()
        return self

    @property
    def scaling(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.has_scaling:
            raise RuntimeError("scaling statistics not computed yet")
        return self._mu.copy(), self._sigma.copy()

    def scale_normalized(self, n: np.ndarray) -> np.ndarray:
        """The affine map applied after batchnorm: mu + sigma * n."""
        mu, sigma = self.scaling
        return mu + sigma * np.asarray(n, dtype=np.float64)

    # -- forward --------------------------------------------------------------

    def params(self) -> list[Tensor]:
        return self._branch_a + self._branch_b

    def _stack(self, q: Tensor, weights) -> Tensor:
        w1, b1, w2, b2, w3, b3 = weights
        h = ag.relu(ag.matmul(q, w1) + b1)
        h = ag.relu(ag.matmul(h, w2) + b2)
        raw = ag.matmul(h, w3) + b3
        n = ag.batchnorm(raw)
        mu, sigma = self.scaling
        return ag.mul(n, Tensor(sigma.reshape(1, -1))) + Tensor(mu.reshape(1, -1))

    def forward(self, q) -> ControlBatch:
        """Codes for a minibatch of seeds; q is (B, 2M) with B >= 2."""
        q = np.asarray(q, dtype=np.float64)
        if q.ndim != 2 or q.shape[1] != self.seed_dim:
            raise ag.ShapeError(f"q must be (B, {self.seed_dim}), got {q.shape}")
        if q.shape[0] < 2:
            raise ag.ShapeError("control forward needs a minibatch of at least 2 seeds")
        qt = Tensor(q)
        m = self.latent_dim
        return ControlBatch(
            y_a=self._stack(qt, self._branch_a),
            z_a=Tensor(q[:, :m]),
            y_b=self._stack(qt, self._branch_b),
            z_b=Tensor(q[:, m:]),
        )

    # -- persistence ------------------------------------------------------------

    def to_checkpoint(self) -> dict:
        ps = self.params()
        return {
            "format_version": CHECKPOINT_VERSION,
            "attribute": self.attribute,
            "seed": self.seed,
            "num_attributes": self.num_attributes,
            "latent_dim": self.latent_dim,
            "shapes": [list(p.data.shape) for p in ps],
            "weights": [p.data.reshape(-1).tolist() for p in ps],
            "scaling_mu": None if self._mu is None else self._mu.tolist(),
            "scaling_sigma": None if self._sigma is None else self._sigma.tolist(),
        }

    @classmethod
    def from_checkpoint(cls, blob: dict) -> "ControlNetwork":
        if blob.get("format_version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {blob.get('format_version')}")
        shapes = [tuple(s) for s in blob["shapes"]]
        model = cls(num_attributes=blob["num_attributes"], latent_dim=blob["latent_dim"],
                    hidden1=shapes[0][1], hidden2=shapes[2][1],
                    seed=blob["seed"], attribute=blob["attribute"])
        for p, flat, shape in zip(model.params(), blob["weights"], shapes):
            arr = np.asarray(flat, dtype=np.float64).reshape(shape)
            if arr.shape != p.data.shape:
                raise ValueError("checkpoint shape mismatch")
            p.data = np.ascontiguousarray(arr)
        if blob["scaling_mu"] is not None:
            model.set_scaling(blob["scaling_mu"], blob["scaling_sigma"])
        return model

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_checkpoint(), fh)

    @classmethod
    def load(cls, path) -> "ControlNetwork":
        with open(path) as fh:
            return cls.from_checkpoint(json.load(fh))

    def clone_weights_from(self, other: "ControlNetwork") -> "ControlNetwork":
        for mine, theirs in zip(self.params(), other.params()):
            mine.data = theirs.data.copy()
            mine.grad = None
        if other.has_scaling:
            self._mu, self._sigma = other.scaling
        return self


def condition_pair(y_a: Tensor, y_b: Tensor, z_a: Tensor, z_b: Tensor,
                   attribute: int, betas, jitter=None) -> tuple:
    """Re-couple a candidate pair's side differences to the target gap, on tape.

    Raw controller output carries arbitrary label-correlated differences in
    the off-target coordinates.  The world's attributes co-vary, so those
    stray couplings are never neutral for the retrained ranker: aligned ones
    reinforce cues the test distribution rewards, opposed ones untrain them,
    and which you get is luck.  This op removes the luck: each off-target gap
    is set to ``betas[j]`` times the target gap around the pair midpoint
    (``betas`` is the pool's regression of coordinate j on the target, so the
    pair looks like a typical same-gap pool pair; a one-hot ``betas`` yields a
    minimal pair instead).  Nuisance vectors collapse to their midpoint,
    since nuisances carry no label information in the world.  The target gap,
    and hence the label, is untouched; set ``betas[attribute]`` to 1.

    ``jitter``, if given, is an ``(eps_y, eps_z)`` pair of constant arrays
    added to the attribute and nuisance side differences.  Drawn from the
    pool's conditional residuals it turns the deterministic regression line
    back into the pool's full conditional distribution, so a mined pair
    stops being a perfect off-target shortcut.  The target column of
    ``eps_y`` is ignored.
    """
    n = y_a.data.shape[1]
    if not 0 <= attribute < n:
        raise ValueError(f"attribute index {attribute} out of range")
    b = np.asarray(betas, dtype=np.float64).reshape(1, n)
    if not np.all(np.isfinite(b)):
        raise ValueError("betas must be finite")
    mid = ag.scale(y_a + y_b, 0.5)
    dy_t = ag.take_column(y_a, attribute) - ag.take_column(y_b, attribute)
    half = ag.scale(ag.mul(dy_t, Tensor(b)), 0.5)
    z_mid = ag.scale(z_a + z_b, 0.5)
    if jitter is None:
        return mid + half, mid - half, z_mid, z_mid
    eps_y = np.array(jitter[0], dtype=np.float64)
    eps_z = np.asarray(jitter[1], dtype=np.float64)
    if not (np.all(np.isfinite(eps_y)) and np.all(np.isfinite(eps_z))):
        raise ValueError("jitter must be finite")
    eps_y[:, attribute] = 0.0
    half = half + Tensor(0.5 * eps_y)
    zh = Tensor(0.5 * eps_z)
    return mid + half, mid - half, z_mid + zh, z_mid - zh


def adversarial_step(ranker, control: ControlNetwork, generator, q,
                     attribute: int, ranker_lr: float, control_lr: float,
                     hinge_weight: float = 1.0, hinge_margin: float = 0.15,
                     use_hinge: bool = True, box_weight: float = 0.0,
                     box_bound: float = 1.5, legibility_weight: float = 0.0,
                     legibility_min: float = 0.0, coupling_betas=None) -> dict:
    """One simultaneous update: ranker descends the pair loss on generated
    pairs, the controller descends its negation (plus degeneracy guards).

    The pair ordering that grounds the loss is the auto-label from the
    generated codes themselves.  Both objectives share one tape: we backprop
    (-L_rank + penalties) once, then flip the ranker gradients back to
    +L_rank.  The generator sits between the two and contributes no
    parameters.

    Optional guards on the controller only: the tie hinge keeps the
    target-attribute code gap outside the discard band, the legibility hinge
    keeps the pair's rendered difference along that attribute perceptible
    (the generator defines what perceptible means), and the box penalty keeps
    codes inside the sampling clip box.  With ``coupling_betas`` the game is
    played on re-coupled pairs (see ``condition_pair``), matching what the
    harvesting step will actually accept.

    A non-finite loss (or gradient) skips the whole update and reports it.
    """
    ranker._ensure_weights()
    batch = control.forward(q)
    y_a, y_b, z_a, z_b = batch.y_a, batch.y_b, batch.z_a, batch.z_b
    if coupling_betas is not None:
        y_a, y_b, z_a, z_b = condition_pair(y_a, y_b, z_a, z_b, attribute,
                                            coupling_betas)
    xa = generator.render_batch(y_a, z_a)
    xb = generator.render_batch(y_b, z_b)
    va = ranker._score_tensor(xa)
    vb = ranker._score_tensor(xb)
    signs = auto_labels(y_a.data, y_b.data, attribute)
    gap = ag.mul(va - vb, Tensor(signs.reshape(-1, 1).astype(np.float64)))
    loss_rank = ag.tmean(ag.softplus(ag.neg(gap)))

    objective = ag.neg(loss_rank)
    penalty_value = 0.0
    if use_hinge and hinge_weight > 0.0:
        dy = ag.take_column(y_a, attribute) - ag.take_column(y_b, attribute)
        hinge = ag.tmean(ag.relu(ag.scale(ag.absolute(dy), -1.0) + hinge_margin))
        penalty = ag.scale(hinge, hinge_weight)
        penalty_value = penalty.item()
        objective = objective + penalty
    box_value = 0.0
    if box_weight > 0.0:
        overflow = (ag.tmean(ag.relu(ag.absolute(y_a) + (-box_bound)))
                    + ag.tmean(ag.relu(ag.absolute(y_b) + (-box_bound))))
        box = ag.scale(overflow, box_weight)
        box_value = box.item()
        objective = objective + box
    legibility_value = 0.0
    if legibility_weight > 0.0 and legibility_min > 0.0:
        vis = generator.attribute_legibility(y_a, y_b, attribute)
        floor = ag.tmean(ag.relu(ag.scale(vis, -1.0) + legibility_min))
        leg = ag.scale(floor, legibility_weight)
        legibility_value = leg.item()
        objective = objective + leg

    result = {
        "rank_loss": loss_rank.item(),
        "control_loss": objective.item(),
        "penalty": penalty_value,
        "box_penalty": box_value,
        "legibility_penalty": legibility_value,
        "skipped": False,
    }
    if not np.isfinite(result["control_loss"]):
        result["skipped"] = True
        return result

    all_params = ranker.weights_ + control.params()
    ag.zero_grads(all_params)
    ag.backward(objective)
    for p in ranker.weights_:
        if p.grad is not None:
            p.grad = -p.grad  # back to +d(rank loss)/dw
    if any(p.grad is not None and not np.all(np.isfinite(p.grad)) for p in all_params):
        result["skipped"] = True  # atomic: neither model moves
        return result
    ag.sgd_step(ranker.weights_, ranker_lr)
    ag.sgd_step(control.params(), control_lr)
    return result
