"""Passive augmentation strategies the adversarial loop is compared against.

Five ways to grow a training pair set without a ranker in the loop:

* real             just the labeled real pairs (the no-augmentation anchor)
* real_plus        pseudo pairs bootstrapped from the generator-stats pool,
                   auto-labeled by their known attribute strengths
* jitter           low-level transforms of real pairs (shift / scale / rotate /
                   contrast / brightness); labels inherited, no annotator cost
* semantic_jitter  re-render an anchor with one attribute coordinate nudged by
                   a hand-picked offset; label via the annotation channel
* random_synthesis the adversarial pipeline with an untrained controller —
                   the ablation isolating what adversarial training adds

Strategies that consume the annotation channel replenish rejected pairs
until the accepted-label budget is met, and report how many queries that
took, so comparisons hold the label count fixed while still exposing the
annotator effort.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .world import RankedPair, make_real_pairs

__all__ = [
    "STRATEGIES",
    "JitterParams",
    "ImageRecord",
    "AugmentationResult",
    "real_plus_pairs",
    "jitter_pairs",
    "jitter_image",
    "semantic_jitter_pairs",
    "random_synthesis_pairs",
    "SEMANTIC_OFFSETS",
]

STRATEGIES = ("real", "real_plus", "jitter", "semantic_jitter",
              "random_synthesis", "adversarial")

SEMANTIC_OFFSETS = (-1.0, -0.6, -0.3, 0.3, 0.6, 1.0)


def _replenish_cap(budget: int) -> int:
    # rejections are replenished, but a labeler that rejects everything
    # must surface as an error rather than an endless annotation bill
    return max(1000, 100 * budget)


@dataclass(frozen=True)
class ImageRecord:
    """A non-pool image introduced by augmentation or synthesis.

    y/z are the generator codes when the pixels came from the generator
    (exact replay possible); None for pixel-space transforms, whose
    provenance lives in meta instead.
    """

    id: str
    pixels: np.ndarray
    y: np.ndarray | None = None
    z: np.ndarray | None = None
    meta: dict = field(default_factory=dict)


@dataclass
class AugmentationResult:
    strategy: str
    pairs: list[RankedPair]
    images: list[ImageRecord]
    asked: int
    accepted: int

    def __post_init__(self):
        if self.accepted != len(self.pairs):
            raise ValueError("accepted count must equal produced pairs")


# ---------------------------------------------------------------------------
# real_plus


def real_plus_pairs(stats_pool, attr: int, budget: int, tau_discard: float,
                    seed: int) -> AugmentationResult:
    """Pseudo pairs over the generator-stats pool, ordered by true strength."""
    if budget == 0:
        return AugmentationResult("real_plus", [], [], 0, 0)
    pairs = [dataclasses.replace(p, provenance="pseudo")
             for p in make_real_pairs(stats_pool, attr, budget, tau_discard, seed)]
    return AugmentationResult("real_plus", pairs, [], budget, budget)


# ---------------------------------------------------------------------------
# jitter


@dataclass(frozen=True)
class JitterParams:
    """Transform magnitude bounds, scaled to the 32x32 world."""

    max_translate_px: float = 3.0
    scale_range: tuple = (0.9, 1.1)
    max_rotate_deg: float = 10.0
    contrast_range: tuple = (0.8, 1.2)
    max_brightness: float = 0.1


def _sample_transform(params: JitterParams, rng) -> dict:
    return {
        "tx": rng.uniform(-params.max_translate_px, params.max_translate_px),
        "ty": rng.uniform(-params.max_translate_px, params.max_translate_px),
        "scale": rng.uniform(*params.scale_range),
        "rot_deg": rng.uniform(-params.max_rotate_deg, params.max_rotate_deg),
        "contrast": rng.uniform(*params.contrast_range),
        "brightness": rng.uniform(-params.max_brightness, params.max_brightness),
    }


def jitter_image(img: np.ndarray, t: dict) -> np.ndarray:
    """Apply one sampled transform; deterministic given its parameters."""
    s = img.shape[0]
    c = (s - 1) / 2.0
    theta = np.deg2rad(t.get("rot_deg", 0.0))
    # output -> input coordinate map: rotate back and un-zoom about the center
    rot = np.array([[np.cos(theta), -np.sin(theta)], [np.sin(theta), np.cos(theta)]])
    mat = rot / t.get("scale", 1.0)
    center = np.array([c, c])
    shift = np.array([t.get("ty", 0.0), t.get("tx", 0.0)])  # rows, cols
    offset = center - mat @ center - mat @ shift
    out = ndimage.affine_transform(img, mat, offset=offset, order=1,
                                   mode="constant", cval=0.0)
    out = t.get("contrast", 1.0) * (out - 0.5) + 0.5 + t.get("brightness", 0.0)
    return np.clip(out, 0.0, 1.0)


def jitter_pairs(source_pairs, images_by_id: dict, budget: int,
                 params: JitterParams, seed: int) -> AugmentationResult:
    """Transformed copies of real pairs; each side jittered independently,
    labels inherited verbatim, so the annotation channel is never touched."""
    if not source_pairs:
        raise ValueError("jitter needs at least one source pair")
    rng = np.random.default_rng(seed)
    pairs: list[RankedPair] = []
    images: list[ImageRecord] = []
    for k in range(budget):
        src = source_pairs[int(rng.integers(len(source_pairs)))]
        recs = []
        for side, src_id in (("a", src.first_id), ("b", src.second_id)):
            t = _sample_transform(params, rng)
            pix = jitter_image(images_by_id[src_id], t)
            recs.append(ImageRecord(
                id=f"jit{seed & 0xFFFF:04x}-{k:05d}{side}",
                pixels=pix,
                meta={"source": src_id, "transform": t},
            ))
        images.extend(recs)
        pairs.append(RankedPair(recs[0].id, recs[1].id, src.attribute, src.label,
                                provenance="jitter"))
    return AugmentationResult("jitter", pairs, images, 0, budget)


# ---------------------------------------------------------------------------
# semantic jitter


def semantic_jitter_pairs(stats_pool, generator, attr: int, budget: int,
                          labeler, seed: int, offsets=SEMANTIC_OFFSETS,
                          provenance: str = "synthetic_auto") -> AugmentationResult:
    """Anchor + one-coordinate nudge, labeled through the annotation channel.

    Rejections (offsets inside the discard band, unlucky votes) are counted
    in ``asked`` and replenished until ``budget`` pairs are accepted.
    """
    if not stats_pool:
        raise ValueError("empty stats pool")
    rng = np.random.default_rng(seed)
    pairs: list[RankedPair] = []
    images: list[ImageRecord] = []
    asked = 0
    k = 0
    while len(pairs) < budget:
        if asked >= _replenish_cap(budget):
            raise RuntimeError(
                f"rejection rate too high: {asked} queries yielded {len(pairs)} labels")
        anchor = stats_pool[int(rng.integers(len(stats_pool)))]
        delta = float(offsets[int(rng.integers(len(offsets)))])
        y_new = anchor.true_y.copy()
        y_new[attr] += delta
        shifted = ImageRecord(
            id=f"sem{seed & 0xFFFF:04x}-{k:05d}",
            pixels=generator.render(y_new, anchor.true_z),
            y=y_new,
            z=anchor.true_z.copy(),
            meta={"anchor": anchor.id, "offset": delta, "attribute": attr},
        )
        k += 1
        # randomized presentation order; gap follows the first-minus-second rule
        if rng.random() < 0.5:
            first_id, second_id, gap = anchor.id, shifted.id, -delta
        else:
            first_id, second_id, gap = shifted.id, anchor.id, delta
        asked += 1
        decision = labeler(gap)
        if decision is None:
            continue
        images.append(shifted)
        pairs.append(RankedPair(first_id, second_id, attr, decision, provenance=provenance))
    return AugmentationResult("semantic_jitter", pairs, images, asked, budget)


# ---------------------------------------------------------------------------
# random synthesis (untrained controller ablation)


def random_synthesis_pairs(control, generator, attr: int, budget: int,
                           labeler, seed: int, batch: int = 16,
                           provenance: str = "synthetic_auto") -> AugmentationResult:
    """Pairs from Gaussian seeds through a frozen, untrained controller.

    Same machinery as the adversarial strategy minus the training signal:
    whatever this achieves is what mere synthetic variety buys.
    """
    rng = np.random.default_rng(seed)
    pairs: list[RankedPair] = []
    images: list[ImageRecord] = []
    asked = 0
    k = 0
    while len(pairs) < budget:
        if asked >= _replenish_cap(budget):
            raise RuntimeError(
                f"rejection rate too high: {asked} queries yielded {len(pairs)} labels")
        q = rng.standard_normal((max(batch, 2), control.seed_dim))
        cb = control.forward(q)
        xa = generator.render_batch(cb.y_a, cb.z_a).data
        xb = generator.render_batch(cb.y_b, cb.z_b).data
        side = generator.image_side
        for i in range(q.shape[0]):
            if len(pairs) >= budget:
                break
            rec_a = ImageRecord(f"rnd{seed & 0xFFFF:04x}-{k:05d}a",
                                xa[i].reshape(side, side).copy(),
                                y=cb.y_a.data[i].copy(), z=cb.z_a.data[i].copy())
            rec_b = ImageRecord(f"rnd{seed & 0xFFFF:04x}-{k:05d}b",
                                xb[i].reshape(side, side).copy(),
                                y=cb.y_b.data[i].copy(), z=cb.z_b.data[i].copy())
            k += 1
            asked += 1
            gap = float(rec_a.y[attr] - rec_b.y[attr])
            decision = labeler(gap)
            if decision is None:
                continue
            images.extend((rec_a, rec_b))
            pairs.append(RankedPair(rec_a.id, rec_b.id, attr, decision,
                                    provenance=provenance))
    return AugmentationResult("random_synthesis", pairs, images, asked, budget)
