"""Simulated annotator crowd and the vote aggregator.

A pair is presented as (A, B) and judged on one attribute with true gap
delta = strength(A) - strength(B).  Each simulated voter either discards
(close pairs are illegible), or picks an order, flipping the true one with a
psychometric probability that shrinks as the gap grows.  The aggregator is
deliberately the single source of truth for accept/reject decisions: the
live annotation service feeds real human votes through the same function.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Vote",
    "AggregatedLabel",
    "AnnotatorModel",
    "simulate_votes",
    "aggregate",
    "make_auto_labeler",
    "make_voting_labeler",
    "CHOICE_A",
    "CHOICE_B",
    "CHOICE_DISCARD",
    "REJECTED",
    "CONFIDENCE_LEVELS",
]

CHOICE_A = "A"
CHOICE_B = "B"
CHOICE_DISCARD = "discard"
REJECTED = "rejected"

CONFIDENCE_LEVELS = ("low", "medium", "high")
_CONF_VALUE = {"low": 0.0, "medium": 1.0, "high": 2.0}


@dataclass(frozen=True)
class Vote:
    choice: str
    confidence: str
    voter: str

    def __post_init__(self):
        if self.choice not in (CHOICE_A, CHOICE_B, CHOICE_DISCARD):
            raise ValueError(f"bad choice {self.choice!r}")
        if self.confidence not in CONFIDENCE_LEVELS:
            raise ValueError(f"bad confidence {self.confidence!r}")


@dataclass(frozen=True)
class AggregatedLabel:
    pair_id: str
    decision: str  # CHOICE_A, CHOICE_B, or REJECTED
    tally: dict
    agreement: float
    mean_confidence: float


@dataclass
class AnnotatorModel:
    """Noise model for one simulated voter.

    flip probability 0.5 * (1 - tanh(|delta| / scale)): 1/2 at a tie, decaying
    smoothly with the gap.  constant_flip overrides it with a fixed rate for
    calibration studies.  Discard probability ramps linearly from 1 at delta=0
    to 0 at the legibility threshold.
    """

    scale: float = 0.5
    tau_discard: float = 0.15
    constant_flip: float | None = None

    def __post_init__(self):
        if self.scale <= 0 or self.tau_discard <= 0:
            raise ValueError("scale and tau_discard must be positive")
        if self.constant_flip is not None and not 0.0 <= self.constant_flip <= 1.0:
            raise ValueError("constant_flip must lie in [0, 1]")

    def flip_probability(self, delta: float) -> float:
        if self.constant_flip is not None:
            return self.constant_flip
        return 0.5 * (1.0 - np.tanh(abs(delta) / self.scale))

    def discard_probability(self, delta: float) -> float:
        return max(0.0, 1.0 - abs(delta) / self.tau_discard)

    def confidence_for(self, delta: float) -> str:
        gap = abs(delta)
        if gap >= 2.0 * self.tau_discard:
            return "high"
        if gap >= self.tau_discard:
            return "medium"
        return "low"


def simulate_votes(delta: float, model: AnnotatorModel, k: int = 5,
                   seed=0) -> list[Vote]:
    """k independent noisy votes on a pair with true gap ``delta``.

    ``seed`` is anything numpy's default_rng accepts (int or SeedSequence).
    """
    if k % 2 == 0:
        raise ValueError(f"vote count must be odd, got {k}")
    rng = np.random.default_rng(seed)
    correct = CHOICE_A if delta > 0 else CHOICE_B
    wrong = CHOICE_B if delta > 0 else CHOICE_A
    p_d = model.discard_probability(delta)
    p_f = model.flip_probability(delta)
    conf = model.confidence_for(delta)
    votes = []
    for i in range(k):
        u = rng.random()
        if u < p_d:
            choice = CHOICE_DISCARD
        elif rng.random() < p_f:
            choice = wrong
        else:
            choice = correct
        votes.append(Vote(choice, conf, f"sim-{i}"))
    return votes


def aggregate(votes: list[Vote], theta_agree: float = 0.8,
              theta_conf: str = "medium", pair_id: str = "") -> AggregatedLabel:
    """Majority decision with the high-agreement / high-confidence filter.

    Rejected iff discard wins the plurality, or the winning order's share of
    all votes falls below theta_agree, or mean confidence falls below
    theta_conf.  An exact A/B tie is also rejected: there is no majority.
    """
    if not votes:
        raise ValueError("cannot aggregate zero votes")
    if theta_conf not in CONFIDENCE_LEVELS:
        raise ValueError(f"bad confidence threshold {theta_conf!r}")
    n_a = sum(v.choice == CHOICE_A for v in votes)
    n_b = sum(v.choice == CHOICE_B for v in votes)
    n_d = len(votes) - n_a - n_b
    tally = {CHOICE_A: n_a, CHOICE_B: n_b, CHOICE_DISCARD: n_d}
    mean_conf = float(np.mean([_CONF_VALUE[v.confidence] for v in votes]))

    top = max(n_a, n_b)
    agreement = top / len(votes)
    if n_d > top or n_a == n_b:
        decision = REJECTED
    elif agreement < theta_agree or mean_conf < _CONF_VALUE[theta_conf]:
        decision = REJECTED
    else:
        decision = CHOICE_A if n_a > n_b else CHOICE_B
    return AggregatedLabel(pair_id, decision, tally, agreement, mean_conf)


# ---------------------------------------------------------------------------
# labeler callables: delta -> +1 (first wins) / -1 (second wins) / None

def make_auto_labeler(tau_discard: float = 0.15):
    """Annotator-free rule for runs where codes are trusted directly:
    label by the sign of the gap, reject anything inside the discard band."""

    def label(delta: float):
        if abs(delta) < tau_discard:
            return None
        return 1 if delta > 0 else -1

    return label


def make_voting_labeler(model: AnnotatorModel, k: int = 5,
                        theta_agree: float = 0.8, theta_conf: str = "medium",
                        seed: int = 0):
    """Simulated crowd: each call spends one fresh vote-seed from a spawned
    stream, so a labeler instance is deterministic but never reuses noise."""
    stream = np.random.SeedSequence(seed)

    def label(delta: float):
        votes = simulate_votes(delta, model, k=k, seed=stream.spawn(1)[0])
        agg = aggregate(votes, theta_agree, theta_conf)
        if agg.decision == REJECTED:
            return None
        return 1 if agg.decision == CHOICE_A else -1

    return label
