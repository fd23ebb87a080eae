"""Experiment orchestration: pretrain, adversarial batches, hybrid retraining.

Protocol per batch (strategy "adversarial"):

1. adversarial phase: a throwaway ranker restarts from the pretrained
   snapshot and co-trains against the persistent controller (the controller
   is the only thing that carries over between batches);
2. the trained controller emits candidate pairs from fresh Gaussian seeds;
3. candidates go through the annotation channel (auto-label from codes, the
   simulated crowd, or a live labeler injected by the service), rejections
   replenished until the batch budget of accepted labels is met;
4. accepted pairs join the synthetic set;
5. a fresh ranker restarts bitwise from the pretrained snapshot and retrains
   on real + synthetic;
6. that ranker is evaluated on held-out pairs and one curve row is recorded.

Baseline strategies swap steps 1-3 for their passive generator at the same
accepted-label budget; everything downstream is identical.  Batch 0 of every
curve is the pretrained-on-real-only evaluation, so gain_vs_real is always
read off the same record.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields, is_dataclass

import numpy as np

from . import baselines
from .autograd import Tensor
from .control import ControlNetwork, adversarial_step, condition_pair, decayed_lr
from .baselines import ImageRecord, JitterParams
from .oracle import AnnotatorModel, make_auto_labeler, make_voting_labeler
from .ranker import PairwiseRanker
from .world import (
    RankedPair,
    WorldConfig,
    make_real_pairs,
    make_test_pairs,
    sample_pool,
    split_pool,
)

__all__ = [
    "RankerSettings",
    "ControlSettings",
    "AnnotatorSettings",
    "ExperimentConfig",
    "ActiveExperiment",
    "run_experiment",
    "emit_curves",
    "CURVE_COLUMNS",
    "config_to_dict",
    "config_from_dict",
]

CURVE_COLUMNS = ("strategy", "attribute", "batch", "labels_used", "accuracy",
                 "gain_vs_real", "rejection_rate", "seed")

MODES = ("auto", "normal")


@dataclass
class RankerSettings:
    hidden1: int = 128
    hidden2: int = 64
    lr: float = 0.05
    # retraining resumes from converged pretrained weights, so it runs at a
    # gentler rate; restarting at the full pretrain lr wrecks the margins of
    # pairs the anchor already ranks correctly
    retrain_lr: float = 0.05
    lr_decay: float = 0.99
    weight_decay: float = 0.0
    # enough to converge the anchor; an undertrained anchor gains from any
    # extra pairs and masks the difference between synthesis strategies
    pretrain_epochs: int = 500
    retrain_epochs: int = 100
    minibatch: int = 32
    tol: float = 1e-6
    patience: int = 5


@dataclass
class ControlSettings:
    hidden1: int = 64
    hidden2: int = 32
    lr: float = 0.05
    lr_decay: float = 0.95
    # the ranker copy inside the phase moves slower than the controller so the
    # game ends with candidates the *pretrained* lineage still finds hard
    ranker_lr: float = 0.01
    epochs: int = 100
    steps_per_epoch: int = 5
    minibatch: int = 16
    hinge_weight: float = 1.0
    # keeps mined code gaps clear of the tau-discard boundary: pairs mined
    # right at tau are auto-labelable but differ by under a pixel once the
    # codes squeeze through the transfer sigmoids
    hinge_margin: float = 0.6
    use_hinge: bool = True
    # optional extra guard: keep mined codes inside the pool's clip box
    box_weight: float = 0.0
    box_bound: float = 1.5
    # keep the pair visibly different along the target attribute; code gaps
    # alone saturate through the transfers and can render as no change
    legibility_weight: float = 5.0
    legibility_min: float = 0.15
    # the hinge only biases the controller; the screen hard-rejects any
    # proposal still below legibility_min before a label is requested
    screen_illegible: bool = True
    # how off-target coordinates couple to the target gap in harvested pairs:
    # "matched" redraws them from the pool's conditional distribution given
    # the gap (regression onto it plus the pool's residual spread, so the
    # pair reads like a typical pool pair with that gap and off-target cues
    # stay exactly as informative as the test set makes them), "isolated"
    # zeroes them (minimal pairs), "raw" keeps whatever the controller
    # emitted.  Raw couplings are luck: aligned ones reinforce cues the test
    # distribution rewards, opposed ones actively untrain them.
    pair_coupling: str = "matched"
    tol: float = 1e-6
    patience: int = 5

    def __post_init__(self):
        if self.pair_coupling not in ("matched", "isolated", "raw"):
            raise ValueError(f"pair_coupling must be matched, isolated or raw, "
                             f"got {self.pair_coupling!r}")


@dataclass
class AnnotatorSettings:
    scale: float = 0.5
    k_votes: int = 5
    theta_agree: float = 0.8
    theta_conf: str = "medium"


@dataclass
class ExperimentConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    ranker: RankerSettings = field(default_factory=RankerSettings)
    control: ControlSettings = field(default_factory=ControlSettings)
    annotator: AnnotatorSettings = field(default_factory=AnnotatorSettings)
    attribute: int = 0
    strategy: str = "adversarial"
    mode: str = "auto"
    batches: int = 5
    batch_budget: int = 100
    n_real_pairs: int = 300
    n_test_pairs: int = 1000
    tau_discard: float = 0.15
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in baselines.STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}; "
                             f"choose from {baselines.STRATEGIES}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0 <= self.attribute < self.world.num_attributes:
            raise ValueError(f"attribute index {self.attribute} out of range")
        if self.batches < 0 or self.batch_budget <= 0:
            raise ValueError("batches must be >= 0 and batch_budget positive")


# ---------------------------------------------------------------------------
# config (de)serialization: strict, lossless, nested


def config_to_dict(cfg) -> dict:
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if is_dataclass(v):
            out[f.name] = config_to_dict(v)
        elif isinstance(v, np.ndarray):
            out[f.name] = v.tolist()
        else:
            out[f.name] = v
    return out


def config_from_dict(cls, data: dict):
    """Instantiate a (nested) config dataclass, rejecting unknown keys."""
    if not isinstance(data, dict):
        raise ValueError(f"expected an object for {cls.__name__}, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = set(data) - set(known)
    if unknown:
        raise ValueError(f"unknown config keys for {cls.__name__}: {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        ftype = known[name].type
        nested = {"world": WorldConfig, "ranker": RankerSettings,
                  "control": ControlSettings, "annotator": AnnotatorSettings}.get(name)
        if nested is not None:
            kwargs[name] = config_from_dict(nested, value)
        else:
            kwargs[name] = value
    return cls(**kwargs)


def weights_digest(arrays) -> str:
    """Stable fingerprint of a weight list, for protocol-fidelity audits."""
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def _seed_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint32)[0])


@dataclass
class Candidate:
    """A controller-emitted pair awaiting a label."""

    rec_a: ImageRecord
    rec_b: ImageRecord
    delta: float  # true strength gap, first minus second


@dataclass
class ExperimentRecord:
    config: dict
    rows: list = field(default_factory=list)
    events: list = field(default_factory=list)
    ranker0_checkpoint: dict | None = None
    control_checkpoints: list = field(default_factory=list)


class ActiveExperiment:
    """One experiment instance: owns the world, the models, and the ledger.

    Constructing it runs pretraining (deterministic).  ``run_batch`` advances
    one batch with an injectable labeler; ``run`` drives all batches with the
    labeler implied by config.mode.  The service drives the same object with
    its own blocking labeler in live mode.
    """

    def __init__(self, config: ExperimentConfig):
        self.config = config
        cfg = config
        root = np.random.SeedSequence(cfg.seed)
        (self._ss_pool, self._ss_real, self._ss_test, self._ss_ranker,
         self._ss_control, self._ss_batches, self._ss_votes) = root.spawn(7)

        self.generator = cfg.world.make_generator()
        self.pool = sample_pool(cfg.world, _seed_int(self._ss_pool))
        parts = split_pool(self.pool)
        self.stats_pool = parts["stats"]
        self.pair_pool = parts["pairs"]
        self.test_pool = parts["test"]

        self.real_pairs = make_real_pairs(
            self.pair_pool, cfg.attribute, cfg.n_real_pairs, cfg.tau_discard,
            _seed_int(self._ss_real))
        self.test_pairs = make_test_pairs(
            self.test_pool, cfg.attribute, cfg.n_test_pairs, cfg.tau_discard,
            _seed_int(self._ss_test))

        self.images: dict[str, np.ndarray] = {im.id: im.pixels for im in self.pool}
        self.synth_images: dict[str, ImageRecord] = {}
        self.synth_pairs: list[RankedPair] = []
        self.asked_total = 0

        # pretrain the ranker on real pairs only
        self.ranker0 = PairwiseRanker(
            image_side=cfg.world.image_side, hidden1=cfg.ranker.hidden1,
            hidden2=cfg.ranker.hidden2, attribute=cfg.attribute,
            lr=cfg.ranker.lr, lr_decay=cfg.ranker.lr_decay,
            weight_decay=cfg.ranker.weight_decay,
            epoch_cap=cfg.ranker.pretrain_epochs, minibatch=cfg.ranker.minibatch,
            tol=cfg.ranker.tol, patience=cfg.ranker.patience,
            seed=_seed_int(self._ss_ranker))
        X, y = self._pair_arrays(self.real_pairs)
        self.ranker0.fit(X, y)
        self.ranker0_weights = self.ranker0.get_weights()

        strengths = np.stack([im.true_y for im in self.stats_pool])
        self.control = ControlNetwork(
            num_attributes=cfg.world.num_attributes, latent_dim=cfg.world.latent_dim,
            hidden1=cfg.control.hidden1, hidden2=cfg.control.hidden2,
            seed=_seed_int(self._ss_control), attribute=cfg.attribute)
        self.control.fit_scaling(strengths)
        self._coupling_betas = self._estimate_coupling(strengths)
        self._coupling_jitter = self._estimate_jitter(strengths)

        self._batch_seeds = list(self._ss_batches.spawn(max(cfg.batches, 1)))
        self._synth_counter = 0
        # one labeler for the whole run: the vote-noise stream advances call
        # by call instead of restarting each batch
        self.labeler = self._labeler()
        self._X_test, self._y_test = self._pair_arrays(self.test_pairs)

        self.record = ExperimentRecord(config=config_to_dict(config))
        self.record.ranker0_checkpoint = self.ranker0.to_checkpoint()
        self.baseline_accuracy = self._evaluate(self.ranker0)
        self._append_row(batch=0, accuracy=self.baseline_accuracy, asked=0, accepted=0)
        self.record.events.append({
            "event": "pretrained",
            "accuracy": self.baseline_accuracy,
            "real_pairs": len(self.real_pairs),
            "ranker0_digest": weights_digest(self.ranker0_weights),
        })

    # -- array plumbing -------------------------------------------------------

    def _lookup(self, image_id: str) -> np.ndarray:
        if image_id in self.images:
            return self.images[image_id].reshape(-1)
        return self.synth_images[image_id].pixels.reshape(-1)

    def _pair_arrays(self, pairs) -> tuple[np.ndarray, np.ndarray]:
        X = np.stack([
            np.concatenate([self._lookup(p.first_id), self._lookup(p.second_id)])
            for p in pairs])
        y = np.array([p.label for p in pairs])
        return X, y

    def _evaluate(self, ranker) -> float:
        return ranker.score(self._X_test, self._y_test)

    def _fresh_ranker_from_pretrained(self, epoch_cap: int, seed: int) -> PairwiseRanker:
        cfg = self.config
        r = PairwiseRanker(
            image_side=cfg.world.image_side, hidden1=cfg.ranker.hidden1,
            hidden2=cfg.ranker.hidden2, attribute=cfg.attribute,
            lr=cfg.ranker.retrain_lr, lr_decay=cfg.ranker.lr_decay,
            weight_decay=cfg.ranker.weight_decay, epoch_cap=epoch_cap,
            minibatch=cfg.ranker.minibatch, tol=cfg.ranker.tol,
            patience=cfg.ranker.patience, seed=seed, warm_start=True)
        r.set_weights(self.ranker0_weights)
        return r

    def next_vote_seed(self) -> np.random.SeedSequence:
        """Fresh, replayable noise source for one externally-annotated task."""
        return self._ss_votes.spawn(1)[0]

    def _labeler(self):
        cfg = self.config
        if cfg.mode == "auto":
            return make_auto_labeler(cfg.tau_discard)
        model = AnnotatorModel(scale=cfg.annotator.scale, tau_discard=cfg.tau_discard)
        return make_voting_labeler(model, k=cfg.annotator.k_votes,
                                   theta_agree=cfg.annotator.theta_agree,
                                   theta_conf=cfg.annotator.theta_conf,
                                   seed=_seed_int(self._ss_votes))

    def _append_row(self, batch: int, accuracy: float, asked: int, accepted: int):
        rejected = asked - accepted
        self.record.rows.append({
            "strategy": self.config.strategy,
            "attribute": self.config.attribute,
            "batch": batch,
            "labels_used": len(self.real_pairs) + len(self.synth_pairs),
            "accuracy": accuracy,
            "gain_vs_real": accuracy - getattr(self, "baseline_accuracy", accuracy),
            "rejection_rate": (rejected / asked) if asked else 0.0,
            "seed": self.config.seed,
        })

    # -- adversarial machinery --------------------------------------------------

    def adversarial_phase(self, rng) -> dict:
        """Co-train a pretrained-ranker copy against the persistent controller."""
        cfg = self.config
        ranker = self._fresh_ranker_from_pretrained(cfg.ranker.retrain_epochs, seed=0)
        cc = cfg.control
        # fixed probe seed: its code trajectory across epochs is the
        # qualitative progression strip for this batch
        probe = rng.standard_normal((2, self.control.seed_dim))
        trace = []
        trajectory = []
        skipped = 0
        window: list[float] = []
        for epoch in range(cc.epochs):
            lr_c = decayed_lr(cc.lr, cc.lr_decay, epoch)
            total = 0.0
            for _ in range(cc.steps_per_epoch):
                q = rng.standard_normal((cc.minibatch, self.control.seed_dim))
                out = adversarial_step(
                    ranker, self.control, self.generator, q, cfg.attribute,
                    ranker_lr=cc.ranker_lr, control_lr=lr_c,
                    hinge_weight=cc.hinge_weight, hinge_margin=cc.hinge_margin,
                    use_hinge=cc.use_hinge, box_weight=cc.box_weight,
                    box_bound=cc.box_bound,
                    legibility_weight=cc.legibility_weight,
                    legibility_min=cc.legibility_min,
                    coupling_betas=self._coupling_betas)
                total += out["rank_loss"]
                skipped += out["skipped"]
            epoch_loss = total / cc.steps_per_epoch
            trace.append(epoch_loss)
            pb = self.control.forward(probe)
            trajectory.append({
                "epoch": epoch,
                "y_a": pb.y_a.data[0].tolist(), "z_a": pb.z_a.data[0].tolist(),
                "y_b": pb.y_b.data[0].tolist(), "z_b": pb.z_b.data[0].tolist(),
            })
            window.append(epoch_loss)
            if len(window) > cc.patience + 1:
                window.pop(0)
            if len(window) == cc.patience + 1 and max(window) - min(window) < cc.tol:
                break
        return {"rank_loss_trace": trace, "skipped_steps": skipped,
                "epochs": len(trace), "probe_trajectory": trajectory}

    def sample_candidates(self, count: int, rng, tag: str) -> list[Candidate]:
        """Draw seeds, run the controller, render both branches in one batch."""
        count = max(count, 2)  # batchnorm floor
        q = rng.standard_normal((count, self.control.seed_dim))
        cb = self.control.forward(q)
        y_a, y_b, z_a, z_b = cb.y_a, cb.y_b, cb.z_a, cb.z_b
        if self._coupling_betas is not None:
            jit = None
            if self._coupling_jitter is not None:
                sy, sz = self._coupling_jitter
                jit = (rng.standard_normal((count, sy.size)) * sy,
                       rng.standard_normal((count, sz.size)) * sz)
            y_a, y_b, z_a, z_b = condition_pair(y_a, y_b, z_a, z_b,
                                                self.config.attribute,
                                                self._coupling_betas, jit)
        xa = self.generator.render_batch(y_a, z_a).data
        xb = self.generator.render_batch(y_b, z_b).data
        side = self.config.world.image_side
        out = []
        for i in range(count):
            k = self._synth_counter
            self._synth_counter += 1
            rec_a = ImageRecord(f"{tag}-{k:06d}a", xa[i].reshape(side, side).copy(),
                                y=y_a.data[i].copy(), z=z_a.data[i].copy())
            rec_b = ImageRecord(f"{tag}-{k:06d}b", xb[i].reshape(side, side).copy(),
                                y=y_b.data[i].copy(), z=z_b.data[i].copy())
            delta = float(rec_a.y[self.config.attribute] - rec_b.y[self.config.attribute])
            out.append(Candidate(rec_a, rec_b, delta))
        return out

    def accept_candidate(self, cand: Candidate, label: int, provenance: str) -> RankedPair:
        pair = RankedPair(cand.rec_a.id, cand.rec_b.id, self.config.attribute,
                          label, provenance=provenance)
        self.synth_images[cand.rec_a.id] = cand.rec_a
        self.synth_images[cand.rec_b.id] = cand.rec_b
        self.synth_pairs.append(pair)
        return pair

    def candidate_legibility(self, cand: Candidate) -> float:
        """Rendered-difference score of one proposal along the target attribute."""
        vis = self.generator.attribute_legibility(
            Tensor(cand.rec_a.y.reshape(1, -1)),
            Tensor(cand.rec_b.y.reshape(1, -1)), self.config.attribute)
        return float(vis.data.reshape(-1)[0])

    def screens_candidates(self) -> bool:
        cc = self.config.control
        return bool(cc.screen_illegible and cc.legibility_min > 0.0)

    def _estimate_coupling(self, strengths: np.ndarray):
        """Per config, the betas handed to condition_pair (None for raw)."""
        mode = self.config.control.pair_coupling
        if mode == "raw":
            return None
        t = self.config.attribute
        betas = np.zeros(strengths.shape[1])
        betas[t] = 1.0
        if mode == "matched":
            cov = np.cov(strengths, rowvar=False)
            betas = cov[:, t] / cov[t, t]
            betas[t] = 1.0
        return betas

    def _estimate_jitter(self, strengths: np.ndarray):
        """Std of each side difference around the regression line, from the pool.

        For two independent pool draws the gap in coordinate j given the
        target gap has variance 2*(cov_jj - cov_jt^2/cov_tt); nuisance gaps
        have variance 2*var(z_k).  Matched coupling re-injects exactly this
        spread so mined pairs match the pool's conditional pair distribution,
        not just its regression line.
        """
        if self.config.control.pair_coupling != "matched":
            return None
        t = self.config.attribute
        cov = np.cov(strengths, rowvar=False)
        resid = np.maximum(np.diag(cov) - cov[:, t] ** 2 / cov[t, t], 0.0)
        sy = np.sqrt(2.0 * resid)
        sy[t] = 0.0
        zs = np.stack([im.true_z for im in self.stats_pool])
        sz = np.sqrt(2.0 * zs.var(axis=0))
        return sy, sz

    # -- batches ------------------------------------------------------------------

    def begin_adversarial_batch(self, batch_index: int) -> np.random.Generator:
        """Run the adversarial phase for one batch; returns the rng that must
        drive this batch's candidate sampling (so async annotation callers
        replay identically to the inline loop)."""
        ss = self._batch_seeds[batch_index - 1]
        adv_ss, cand_ss = ss.spawn(2)
        phase = self.adversarial_phase(np.random.default_rng(adv_ss))
        self.record.events.append({"event": "adversarial_phase",
                                   "batch": batch_index, **phase})
        return np.random.default_rng(cand_ss)

    def _synthesize_adversarial(self, batch_index: int, labeler) -> tuple[int, int]:
        cfg = self.config
        cand_rng = self.begin_adversarial_batch(batch_index)
        provenance = "synthetic_auto" if cfg.mode == "auto" else "synthetic_human"
        screen = self.screens_candidates()
        floor = cfg.control.legibility_min
        asked = 0
        accepted = 0
        screened = 0
        cap = max(1000, 100 * cfg.batch_budget)
        while accepted < cfg.batch_budget:
            if asked + screened >= cap:
                raise RuntimeError(
                    f"batch {batch_index}: {asked} annotation queries "
                    f"({screened} proposals screened out) yielded only "
                    f"{accepted} labels")
            chunk = self.sample_candidates(
                min(32, cfg.batch_budget), cand_rng, tag=f"adv{batch_index:02d}")
            for cand in chunk:
                if accepted >= cfg.batch_budget:
                    break
                # rejecting an illegible proposal costs no annotation budget
                if screen and self.candidate_legibility(cand) < floor:
                    screened += 1
                    continue
                asked += 1
                decision = labeler(cand.delta)
                if decision is None:
                    continue
                self.accept_candidate(cand, decision, provenance)
                accepted += 1
        return asked, accepted

    def _synthesize_baseline(self, batch_index: int, labeler) -> tuple[int, int]:
        cfg = self.config
        seed = _seed_int(self._batch_seeds[batch_index - 1])
        provenance = "synthetic_auto" if cfg.mode == "auto" else "synthetic_human"
        strat = cfg.strategy
        if strat == "real":
            return 0, 0
        if strat == "real_plus":
            res = baselines.real_plus_pairs(self.stats_pool, cfg.attribute,
                                            cfg.batch_budget, cfg.tau_discard, seed)
        elif strat == "jitter":
            res = baselines.jitter_pairs(self.real_pairs, self.images,
                                         cfg.batch_budget, JitterParams(), seed)
        elif strat == "semantic_jitter":
            res = baselines.semantic_jitter_pairs(self.stats_pool, self.generator,
                                                  cfg.attribute, cfg.batch_budget,
                                                  labeler, seed, provenance=provenance)
        elif strat == "random_synthesis":
            res = baselines.random_synthesis_pairs(self.control, self.generator,
                                                   cfg.attribute, cfg.batch_budget,
                                                   labeler, seed, provenance=provenance)
        else:
            raise ValueError(f"unhandled strategy {strat!r}")
        for rec in res.images:
            self.synth_images[rec.id] = rec
        self.synth_pairs.extend(res.pairs)
        return res.asked, res.accepted

    def run_batch(self, batch_index: int, labeler=None) -> dict:
        """Advance one batch (1-based index) and append its curve row."""
        cfg = self.config
        if not 1 <= batch_index <= max(cfg.batches, 1):
            raise ValueError(f"batch index {batch_index} out of range")
        labeler = labeler or self.labeler

        if cfg.strategy == "adversarial":
            asked, accepted = self._synthesize_adversarial(batch_index, labeler)
        else:
            asked, accepted = self._synthesize_baseline(batch_index, labeler)
        return self.finalize_batch(batch_index, asked, accepted)

    def finalize_batch(self, batch_index: int, asked: int, accepted: int) -> dict:
        """Reset-retrain-evaluate bookkeeping once a batch's labels are in."""
        cfg = self.config
        self.asked_total += asked

        if self.synth_pairs:
            retrain_seed = _seed_int(self._ss_ranker) + batch_index
            ranker = self._fresh_ranker_from_pretrained(cfg.ranker.retrain_epochs,
                                                        seed=retrain_seed)
            retrain_start_digest = weights_digest(ranker.get_weights())
            X, y = self._pair_arrays(self.real_pairs + self.synth_pairs)
            ranker.fit(X, y)
            accuracy = self._evaluate(ranker)
        else:
            # nothing accepted yet (strategy "real"): the hybrid set IS the
            # real set, so the pretrained ranker is already the retrain result
            ranker = self.ranker0
            retrain_start_digest = weights_digest(self.ranker0_weights)
            accuracy = self.baseline_accuracy
        self.last_ranker = ranker

        self._append_row(batch=batch_index, accuracy=accuracy,
                         asked=asked, accepted=accepted)
        self.record.events.append({
            "event": "batch_complete",
            "batch": batch_index,
            "asked": asked,
            "accepted": accepted,
            "retrain_start_digest": retrain_start_digest,
            "ranker0_digest": weights_digest(self.ranker0_weights),
            "control_digest": weights_digest([p.data for p in self.control.params()]),
            "retrain_epochs": ranker.n_epochs_,
            "accuracy": accuracy,
        })
        self.record.control_checkpoints.append(self.control.to_checkpoint())
        return self.record.rows[-1]

    def run(self, labeler=None) -> ExperimentRecord:
        for k in range(1, self.config.batches + 1):
            self.run_batch(k, labeler=labeler)
        return self.record


def run_experiment(config: ExperimentConfig) -> ExperimentRecord:
    """Pretrain, run every batch with the mode-implied labeler, return the record."""
    return ActiveExperiment(config).run()


def emit_curves(records) -> str:
    """Render experiment records as the canonical curve CSV (full precision)."""
    if not records:
        raise ValueError("no records to emit")
    lines = [",".join(CURVE_COLUMNS)]
    for rec in records:
        rows = rec.rows if isinstance(rec, ExperimentRecord) else rec["rows"]
        for row in rows:
            lines.append(",".join(repr(row[c]) if isinstance(row[c], float)
                                  else str(row[c]) for c in CURVE_COLUMNS))
    return "\n".join(lines) + "\n"
