"""Annotator simulation and aggregation rules.

The wrong-majority check uses an exact binomial enumeration as its oracle:
with per-vote flip rate p and 5 voters, P(majority wrong) =
10 p^3 q^2 + 5 p^4 q + p^5.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pairsmith.oracle import (
    CHOICE_A,
    CHOICE_B,
    CHOICE_DISCARD,
    REJECTED,
    AnnotatorModel,
    Vote,
    aggregate,
    simulate_votes,
)


def V(choice, conf="high", voter="v"):
    return Vote(choice, conf, voter)


class TestSimulateVotes:
    def test_tie_gives_all_discards(self):
        votes = simulate_votes(0.0, AnnotatorModel(), k=5, seed=1)
        assert all(v.choice == CHOICE_DISCARD for v in votes)

    def test_large_gap_zero_noise_unanimous_correct(self):
        model = AnnotatorModel(constant_flip=0.0)
        votes = simulate_votes(3.0, model, k=5, seed=2)
        assert all(v.choice == CHOICE_A for v in votes)
        votes = simulate_votes(-3.0, model, k=5, seed=2)
        assert all(v.choice == CHOICE_B for v in votes)

    def test_even_k_rejected(self):
        with pytest.raises(ValueError, match="odd"):
            simulate_votes(1.0, AnnotatorModel(), k=4, seed=0)

    def test_seed_determinism(self):
        a = simulate_votes(0.2, AnnotatorModel(), k=5, seed=7)
        b = simulate_votes(0.2, AnnotatorModel(), k=5, seed=7)
        assert a == b

    def test_wrong_majority_rate_matches_binomial_enumeration(self):
        p = 0.1
        q = 1.0 - p
        exact = 10 * p**3 * q**2 + 5 * p**4 * q + p**5
        assert exact == pytest.approx(0.00856)
        model = AnnotatorModel(constant_flip=p)
        wrong = 0
        trials = 100_000
        for t in range(trials):
            votes = simulate_votes(1.0, model, k=5, seed=t)
            n_wrong = sum(v.choice == CHOICE_B for v in votes)
            wrong += n_wrong >= 3
        assert abs(wrong / trials - exact) <= 0.002

    def test_flip_probability_decays_with_gap(self):
        m = AnnotatorModel(scale=0.5)
        gaps = np.linspace(0, 3, 12)
        ps = [m.flip_probability(g) for g in gaps]
        assert ps[0] == pytest.approx(0.5)
        assert all(a > b for a, b in zip(ps, ps[1:]))

    def test_discard_ramp(self):
        m = AnnotatorModel(tau_discard=0.15)
        assert m.discard_probability(0.0) == pytest.approx(1.0)
        assert m.discard_probability(0.075) == pytest.approx(0.5)
        assert m.discard_probability(0.15) == 0.0
        assert m.discard_probability(2.0) == 0.0

    def test_confidence_bands(self):
        m = AnnotatorModel(tau_discard=0.15)
        assert m.confidence_for(0.05) == "low"
        assert m.confidence_for(0.2) == "medium"
        assert m.confidence_for(0.5) == "high"


class TestAggregate:
    def test_three_two_majority(self):
        votes = [V(CHOICE_A), V(CHOICE_A), V(CHOICE_A), V(CHOICE_B), V(CHOICE_B)]
        out = aggregate(votes, theta_agree=0.6)
        assert out.decision == CHOICE_A
        assert out.agreement == pytest.approx(0.6)

    def test_discard_plurality_rejects(self):
        votes = [V(CHOICE_DISCARD), V(CHOICE_DISCARD), V(CHOICE_DISCARD),
                 V(CHOICE_A), V(CHOICE_B)]
        assert aggregate(votes).decision == REJECTED

    def test_agreement_threshold_rejects(self):
        votes = [V(CHOICE_A), V(CHOICE_A), V(CHOICE_A), V(CHOICE_B), V(CHOICE_B)]
        assert aggregate(votes, theta_agree=0.7).decision == REJECTED

    def test_default_threshold_accepts_four_of_five(self):
        votes = [V(CHOICE_A)] * 4 + [V(CHOICE_B)]
        out = aggregate(votes)
        assert out.decision == CHOICE_A
        assert out.agreement == pytest.approx(0.8)

    def test_low_confidence_rejects(self):
        votes = [V(CHOICE_A, conf="low")] * 5
        assert aggregate(votes, theta_conf="medium").decision == REJECTED
        assert aggregate(votes, theta_conf="low").decision == CHOICE_A

    def test_tie_rejects_even_with_lax_threshold(self):
        votes = [V(CHOICE_A), V(CHOICE_A), V(CHOICE_B), V(CHOICE_B), V(CHOICE_DISCARD)]
        assert aggregate(votes, theta_agree=0.0).decision == REJECTED

    def test_empty_votes_error(self):
        with pytest.raises(ValueError):
            aggregate([])

    def test_tally_recorded(self):
        votes = [V(CHOICE_A)] * 4 + [V(CHOICE_DISCARD)]
        out = aggregate(votes)
        assert out.tally == {CHOICE_A: 4, CHOICE_B: 0, CHOICE_DISCARD: 1}


@settings(max_examples=100, deadline=None)
@given(
    st.lists(
        st.tuples(
            st.sampled_from([CHOICE_A, CHOICE_B, CHOICE_DISCARD]),
            st.sampled_from(["low", "medium", "high"]),
        ),
        min_size=1,
        max_size=9,
    ),
    st.floats(min_value=0.0, max_value=1.0),
)
def test_aggregation_symmetric_under_side_swap(vote_spec, theta):
    """Swapping A and B in every vote swaps the decision; rejection is stable."""
    swap = {CHOICE_A: CHOICE_B, CHOICE_B: CHOICE_A, CHOICE_DISCARD: CHOICE_DISCARD}
    votes = [V(c, conf) for c, conf in vote_spec]
    mirrored = [V(swap[c], conf) for c, conf in vote_spec]
    out = aggregate(votes, theta_agree=theta)
    out_m = aggregate(mirrored, theta_agree=theta)
    if out.decision == REJECTED:
        assert out_m.decision == REJECTED
    else:
        assert out_m.decision == swap[out.decision]
    assert out.agreement == pytest.approx(out_m.agreement)
