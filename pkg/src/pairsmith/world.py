"""Procedural attribute world: the curated "real" image pool and its pairs.

Images are fully synthetic, but the pool is built to imitate a curated photo
collection: attribute codes are drawn from a correlated Gaussian and clipped
to a truncation box, so (a) attributes co-vary the way curated photos do and
(b) a band of the generator's reachable code space never appears in the pool.
That curation gap is the whole point — it is the unexplored territory an
adversarial pair synthesizer can exploit and a passive sampler cannot.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor
from .generator import BlobGenerator

__all__ = [
    "WorldConfig",
    "WorldImage",
    "RankedPair",
    "sample_pool",
    "split_pool",
    "make_real_pairs",
    "make_test_pairs",
    "fine_pair_fraction",
]


def _default_cov(n: int, var: float = 1.0, corr: float = 0.6) -> np.ndarray:
    cov = np.full((n, n), corr * var)
    np.fill_diagonal(cov, var)
    return cov


@dataclass
class WorldConfig:
    """Sampling distribution and geometry of the real pool.

    attr_cov defaults to unit variance with 0.6 pairwise correlation, and the
    truncation box to [-1.5, 1.5] per attribute: both are the knobs that carve
    the curation gap out of code space.
    """

    num_attributes: int = 4
    latent_dim: int = 4
    image_side: int = 32
    pool_size: int = 600
    attr_mean: np.ndarray | None = None
    attr_cov: np.ndarray | None = None
    truncation_lo: np.ndarray | None = None
    truncation_hi: np.ndarray | None = None

    def __post_init__(self):
        n = self.num_attributes
        if n < 1 or self.latent_dim < 1 or self.image_side < 1:
            raise ValueError("num_attributes, latent_dim and image_side must be >= 1")
        if self.pool_size < 0:
            raise ValueError("pool_size must be non-negative")
        self.attr_mean = (np.zeros(n) if self.attr_mean is None
                          else np.asarray(self.attr_mean, dtype=np.float64))
        self.attr_cov = (_default_cov(n) if self.attr_cov is None
                         else np.asarray(self.attr_cov, dtype=np.float64))
        self.truncation_lo = (np.full(n, -1.5) if self.truncation_lo is None
                              else np.asarray(self.truncation_lo, dtype=np.float64))
        self.truncation_hi = (np.full(n, 1.5) if self.truncation_hi is None
                              else np.asarray(self.truncation_hi, dtype=np.float64))
        if self.attr_mean.shape != (n,):
            raise ValueError(f"attr_mean must have shape ({n},)")
        if self.attr_cov.shape != (n, n):
            raise ValueError(f"attr_cov must have shape ({n}, {n})")
        if not np.allclose(self.attr_cov, self.attr_cov.T):
            raise ValueError("attr_cov must be symmetric")
        try:
            np.linalg.cholesky(self.attr_cov)
        except np.linalg.LinAlgError:
            raise ValueError("attr_cov must be positive-definite") from None
        if self.truncation_lo.shape != (n,) or self.truncation_hi.shape != (n,):
            raise ValueError(f"truncation bounds must have shape ({n},)")
        if not np.all(self.truncation_lo < self.truncation_hi):
            raise ValueError("truncation box is empty on some attribute")

    def make_generator(self) -> BlobGenerator:
        return BlobGenerator(self.image_side, self.num_attributes, self.latent_dim)


@dataclass(frozen=True)
class WorldImage:
    """A pool member; pixels are exactly render(true_y, true_z)."""

    id: str
    true_y: np.ndarray
    true_z: np.ndarray
    pixels: np.ndarray


@dataclass(frozen=True)
class RankedPair:
    """An ordered comparison on one attribute.

    label = +1 claims the first image has the stronger attribute, -1 the
    second.  For pairs built straight from the pool the claim always matches
    the ground-truth ordering; annotated pairs may carry a wrong claim.
    provenance records which channel produced the label: real, pseudo,
    jitter, synthetic_auto, or synthetic_human.
    """

    first_id: str
    second_id: str
    attribute: int
    label: int
    provenance: str = "real"

    def __post_init__(self):
        if self.label not in (-1, 1):
            raise ValueError(f"label must be +1 or -1, got {self.label}")

    def winner_id(self) -> str:
        return self.first_id if self.label == 1 else self.second_id

    def loser_id(self) -> str:
        return self.second_id if self.label == 1 else self.first_id


def sample_pool(config: WorldConfig, seed: int) -> list[WorldImage]:
    """Draw the pool: clipped correlated Gaussian codes, rendered in one batch."""
    rng = np.random.default_rng(seed)
    n = config.pool_size
    if n == 0:
        return []
    chol = np.linalg.cholesky(config.attr_cov)
    y = config.attr_mean + rng.standard_normal((n, config.num_attributes)) @ chol.T
    y = np.clip(y, config.truncation_lo, config.truncation_hi)
    z = rng.standard_normal((n, config.latent_dim))
    gen = config.make_generator()
    flat = gen.render_batch(Tensor(y), Tensor(z)).data
    s = config.image_side
    return [
        WorldImage(
            id=f"r{seed & 0xFFFFFFFF:08x}-{i:05d}",
            true_y=y[i].copy(),
            true_z=z[i].copy(),
            pixels=flat[i].reshape(s, s).copy(),
        )
        for i in range(n)
    ]


def split_pool(pool: list[WorldImage]) -> dict[str, list[WorldImage]]:
    """Deterministic 60/20/20 split: generator statistics, labeled pairs, test.

    Pool order is already random (iid draws), so contiguous slices are a valid
    random partition and the same pool always splits the same way.
    """
    n = len(pool)
    a = int(0.6 * n)
    b = a + int(0.2 * n)
    return {"stats": pool[:a], "pairs": pool[a:b], "test": pool[b:]}


def _eligible_index_pairs(pool, attr: int, tau: float) -> list[tuple[int, int]]:
    ys = np.array([im.true_y[attr] for im in pool])
    out = []
    for i in range(len(pool)):
        gaps = np.abs(ys[i + 1 :] - ys[i])
        for off in np.nonzero(gaps >= tau)[0]:
            out.append((i, i + 1 + int(off)))
    return out


def _draw_pairs(pool, attr: int, n: int, tau: float, seed: int) -> list[RankedPair]:
    if not pool:
        raise ValueError("empty image pool")
    if not 0 <= attr < pool[0].true_y.size:
        raise ValueError(f"attribute index {attr} out of range")
    eligible = _eligible_index_pairs(pool, attr, tau)
    if len(eligible) < n:
        raise ValueError(
            f"requested {n} pairs but only {len(eligible)} eligible at "
            f"separation >= {tau} on attribute {attr}"
        )
    rng = np.random.default_rng(seed)
    chosen = rng.permutation(len(eligible))[:n]
    pairs = []
    for k in chosen:
        i, j = eligible[k]
        if rng.random() < 0.5:  # randomize presentation order
            i, j = j, i
        stronger_first = pool[i].true_y[attr] > pool[j].true_y[attr]
        pairs.append(
            RankedPair(pool[i].id, pool[j].id, attr, 1 if stronger_first else -1)
        )
    return pairs


def make_real_pairs(pool, attr: int, n: int, tau_discard: float, seed: int) -> list[RankedPair]:
    """n unambiguous pairs from the labeled-pair pool, ground-truth ordered."""
    return _draw_pairs(pool, attr, n, tau_discard, seed)


def make_test_pairs(pool_held_out, attr: int, n: int, tau_discard: float, seed: int) -> list[RankedPair]:
    """Held-out evaluation pairs; caller guarantees pool disjointness."""
    return _draw_pairs(pool_held_out, attr, n, tau_discard, seed)


def fine_pair_fraction(pool, attr: int, tau_discard: float) -> float:
    """Share of non-tied pool pairs in the subtle band 0 < |gap| < 2 * tau.

    The curation-gap check: in a believable curated pool this stays small,
    i.e. closely matched comparisons are underrepresented.  Exact ties
    (truncation-clip atoms) count as degenerate and are excluded outright.
    """
    ys = np.array([im.true_y[attr] for im in pool])
    gaps = np.abs(ys[:, None] - ys[None, :])[np.triu_indices(len(ys), k=1)]
    nonzero = gaps[gaps > 0.0]
    if nonzero.size == 0:
        return 0.0
    return float(np.mean(nonzero < 2.0 * tau_discard))
