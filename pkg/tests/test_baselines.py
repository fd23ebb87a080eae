"""Augmentation strategy tests: labels, budgets, transforms, determinism."""

import numpy as np
import pytest

from pairsmith.baselines import (
    SEMANTIC_OFFSETS,
    JitterParams,
    jitter_image,
    jitter_pairs,
    random_synthesis_pairs,
    real_plus_pairs,
    semantic_jitter_pairs,
)
from pairsmith.control import ControlNetwork, compute_scaling_stats
from pairsmith.generator import BlobGenerator
from pairsmith.oracle import AnnotatorModel, make_auto_labeler, make_voting_labeler
from pairsmith.world import WorldConfig, make_real_pairs, sample_pool, split_pool

CFG = WorldConfig(pool_size=300)
POOL = sample_pool(CFG, seed=31)
PARTS = split_pool(POOL)
GEN = CFG.make_generator()
AUTO = make_auto_labeler(0.15)


class TestRealPlus:
    def test_zero_budget(self):
        out = real_plus_pairs(PARTS["stats"], 0, 0, 0.15, seed=1)
        assert out.pairs == [] and out.asked == 0

    def test_labels_follow_true_strengths(self):
        out = real_plus_pairs(PARTS["stats"], 2, 40, 0.15, seed=1)
        lookup = {im.id: im for im in PARTS["stats"]}
        for p in out.pairs:
            dy = lookup[p.first_id].true_y[2] - lookup[p.second_id].true_y[2]
            assert np.sign(dy) == p.label

    def test_ids_disjoint_from_real_pair_pool(self):
        real = make_real_pairs(PARTS["pairs"], 0, 30, 0.15, seed=2)
        pseudo = real_plus_pairs(PARTS["stats"], 0, 30, 0.15, seed=2)
        real_ids = {i for p in real for i in (p.first_id, p.second_id)}
        pseudo_ids = {i for p in pseudo.pairs for i in (p.first_id, p.second_id)}
        assert not (real_ids & pseudo_ids)

    def test_insufficient_pairs_error_reports_count(self):
        with pytest.raises(ValueError, match="eligible"):
            real_plus_pairs(PARTS["stats"][:3], 0, 10_000, 0.15, seed=1)


class TestJitter:
    def _sources(self):
        pairs = make_real_pairs(PARTS["pairs"], 0, 20, 0.15, seed=5)
        images = {im.id: im.pixels for im in PARTS["pairs"]}
        return pairs, images

    def test_zero_magnitude_is_identity(self):
        img = POOL[0].pixels
        t = {"tx": 0, "ty": 0, "scale": 1.0, "rot_deg": 0.0,
             "contrast": 1.0, "brightness": 0.0}
        np.testing.assert_allclose(jitter_image(img, t), img, atol=1e-12)

    def test_translation_round_trip_recovers_interior(self):
        img = POOL[1].pixels
        fwd = jitter_image(img, {"tx": 2, "ty": -1})
        back = jitter_image(fwd, {"tx": -2, "ty": 1})
        # 3px margin clears every border-fill pixel
        np.testing.assert_allclose(back[3:-3, 3:-3], img[3:-3, 3:-3], atol=1e-12)

    def test_labels_inherited_and_budget_free(self):
        pairs, images = self._sources()
        out = jitter_pairs(pairs, images, 35, JitterParams(), seed=6)
        assert out.asked == 0 and out.accepted == 35
        src_by_id = {(p.first_id, p.second_id): p.label for p in pairs}
        rec_meta = {r.id: r.meta["source"] for r in out.images}
        for jp in out.pairs:
            key = (rec_meta[jp.first_id], rec_meta[jp.second_id])
            assert src_by_id[key] == jp.label

    def test_pixels_stay_in_unit_interval(self):
        pairs, images = self._sources()
        out = jitter_pairs(pairs, images, 10, JitterParams(), seed=7)
        for rec in out.images:
            assert rec.pixels.min() >= 0.0 and rec.pixels.max() <= 1.0

    def test_determinism(self):
        pairs, images = self._sources()
        a = jitter_pairs(pairs, images, 8, JitterParams(), seed=9)
        b = jitter_pairs(pairs, images, 8, JitterParams(), seed=9)
        assert a.pairs == b.pairs
        for ra, rb in zip(a.images, b.images):
            assert np.array_equal(ra.pixels, rb.pixels)

    def test_empty_sources_rejected(self):
        with pytest.raises(ValueError):
            jitter_pairs([], {}, 5, JitterParams(), seed=0)


class TestSemanticJitter:
    def test_zero_offset_always_rejected(self):
        with pytest.raises(RuntimeError, match="rejection rate"):
            semantic_jitter_pairs(PARTS["stats"], GEN, 0, 3, AUTO, seed=1,
                                  offsets=(0.0,))

    def test_only_target_coordinate_changes(self):
        out = semantic_jitter_pairs(PARTS["stats"], GEN, 1, 15, AUTO, seed=2)
        anchors = {im.id: im for im in PARTS["stats"]}
        for rec in out.images:
            anchor = anchors[rec.meta["anchor"]]
            diff = rec.y - anchor.true_y
            assert diff[1] == pytest.approx(rec.meta["offset"])
            mask = np.ones(4, bool)
            mask[1] = False
            np.testing.assert_array_equal(diff[mask], 0.0)
            np.testing.assert_array_equal(rec.z, anchor.true_z)

    def test_noise_free_labels_follow_offset_direction(self):
        noiseless = make_voting_labeler(AnnotatorModel(constant_flip=0.0), seed=4)
        out = semantic_jitter_pairs(PARTS["stats"], GEN, 0, 25, noiseless, seed=3,
                                    offsets=(0.6, -0.6))
        shifted = {r.id: r for r in out.images}
        for p in out.pairs:
            if p.first_id in shifted:
                delta = shifted[p.first_id].meta["offset"]
                assert p.label == np.sign(delta)
            else:
                delta = shifted[p.second_id].meta["offset"]
                assert p.label == -np.sign(delta)

    def test_budget_exact_with_rejections_counted(self):
        out = semantic_jitter_pairs(PARTS["stats"], GEN, 0, 20, AUTO, seed=5,
                                    offsets=(0.1, 0.6))  # 0.1 sits in the discard band
        assert out.accepted == 20 == len(out.pairs)
        assert out.asked > 20


class TestRandomSynthesis:
    def _control(self, seed=0):
        c = ControlNetwork(seed=seed)
        strengths = np.stack([im.true_y for im in PARTS["stats"]])
        c.fit_scaling(strengths)
        return c

    def test_seed_determinism(self):
        c = self._control()
        a = random_synthesis_pairs(c, GEN, 0, 10, AUTO, seed=8)
        b = random_synthesis_pairs(c, GEN, 0, 10, AUTO, seed=8)
        assert a.pairs == b.pairs
        for ra, rb in zip(a.images, b.images):
            assert np.array_equal(ra.pixels, rb.pixels)

    def test_generated_strength_mean_matches_pool_stats(self):
        c = self._control(seed=3)
        mu, sigma = c.scaling
        rng = np.random.default_rng(12)
        draws = []
        for _ in range(20):
            q = rng.standard_normal((500, c.seed_dim))
            out = c.forward(q)
            draws.append(out.y_a.data)
        ys = np.concatenate(draws)
        se = sigma / np.sqrt(len(ys))
        assert np.all(np.abs(ys.mean(axis=0) - mu) <= 3 * se)

    def test_budget_respected_after_replenishment(self):
        c = self._control(seed=1)
        out = random_synthesis_pairs(c, GEN, 2, 30, AUTO, seed=2)
        assert out.accepted == 30 == len(out.pairs)
        assert out.asked >= 30
        # both sides carry replayable codes
        for rec in out.images:
            assert rec.y is not None and rec.z is not None
            assert np.array_equal(GEN.render(rec.y, rec.z), rec.pixels)
