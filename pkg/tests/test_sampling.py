import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fedactive import nn
from fedactive.errors import ConfigError
from fedactive.sampling import (
    AcquisitionRequest,
    ScoredPool,
    acquire,
    coreset_select,
    entropy_score,
    ks_prob,
    ksas_score,
    margin_score,
    reversed_ksas_score,
    select_top,
    vanilla_kl_score,
)

logit_vec = arrays(np.float64, 4, elements=st.floats(-20, 20))
count_vec = arrays(np.int64, 4, elements=st.integers(0, 50))


def mp_sym_kl(a, b, weights):
    mpmath.mp.dps = 40
    def probs(logits):
        e = [mpmath.mpf(w) * mpmath.e ** mpmath.mpf(float(v)) for v, w in zip(logits, weights)]
        s = sum(e)
        return [v / s for v in e]
    p, q = probs(a), probs(b)
    return float(sum(pi * mpmath.log(pi / qi) + qi * mpmath.log(qi / pi) for pi, qi in zip(p, q)))


def test_ks_prob_examples():
    np.testing.assert_allclose(ks_prob(np.array([0.0, 0.0]), [3, 1], 1.0), [0.75, 0.25], rtol=1e-15)
    logits = np.array([0.3, -1.2, 2.0])
    np.testing.assert_allclose(ks_prob(logits, [5, 1, 9], 0.0), nn.softmax(logits), rtol=1e-15)
    np.testing.assert_allclose(ks_prob(logits, [4, 4, 4], 2.5), nn.softmax(logits), rtol=1e-14)


def test_ks_prob_zero_counts_substituted():
    np.testing.assert_allclose(ks_prob(np.zeros(3), [0, 0, 0], 1.0), np.ones(3) / 3)
    np.testing.assert_allclose(ks_prob(np.zeros(2), [0, 3], 1.0), [0.25, 0.75])


def test_ksas_examples():
    a = np.array([1.0, 0.0])
    b = np.array([0.0, 1.0])
    assert ksas_score(a, a, [3, 7], 1.0) == 0.0
    assert ksas_score(a, b, [5, 5], 1.0) == pytest.approx(mp_sym_kl(a, b, [1, 1]), rel=1e-12)
    assert ksas_score(a, b, [5, 5], 1.0) == pytest.approx(2 * nn.kl_divergence(nn.softmax(a), nn.softmax(b)), rel=1e-12)


def test_ksas_reduces_to_vanilla_at_lambda_zero(rng):
    for _ in range(50):
        a, b = rng.normal(size=(2, 5)) * 3
        counts = rng.integers(0, 30, size=5)
        assert abs(ksas_score(a, b, counts, 0.0) - vanilla_kl_score(a, b)) < 1e-12


def test_ksas_matches_high_precision_oracle(rng):
    for _ in range(30):
        a, b = rng.normal(size=(2, 4)) * 2
        counts = rng.integers(1, 20, size=4)
        lam = float(rng.uniform(0, 3))
        w = [float(c) ** lam for c in counts]
        assert ksas_score(a, b, counts, lam) == pytest.approx(mp_sym_kl(a, b, w), rel=1e-9, abs=1e-13)


@settings(max_examples=300, deadline=None)
@given(logit_vec, logit_vec, count_vec, st.floats(0, 5))
def test_ksas_properties(a, b, counts, lam):
    d = ksas_score(a, b, counts, lam)
    assert d >= 0
    assert abs(d - ksas_score(b, a, counts, lam)) <= 1e-12 * max(1.0, d)
    assert ksas_score(a, a, counts, lam) == 0.0


@settings(max_examples=200, deadline=None)
@given(logit_vec, logit_vec, count_vec, st.floats(0, 3), st.floats(-50, 50))
def test_ksas_shift_invariance(a, b, counts, lam, shift):
    np.testing.assert_allclose(ks_prob(a + shift, counts, lam), ks_prob(a, counts, lam), rtol=1e-9, atol=1e-14)
    d = ksas_score(a, b, counts, lam)
    assert ksas_score(a + shift, b, counts, lam) == pytest.approx(d, rel=1e-6, abs=1e-9)


def test_larger_lambda_concentrates_mass_on_specialized_class(rng):
    # d/dlam log P_m = ln n_m - E_P[ln n] > 0 for the unique max-count class m
    for _ in range(300):
        counts = rng.integers(0, 10, size=5)
        m = int(rng.integers(5))
        counts[m] = 30
        a = rng.normal(size=5) * 2
        mass = [ks_prob(a, counts, lam)[m] for lam in (0.0, 0.25, 0.5, 1.0, 2.0, 4.0)]
        assert np.all(np.diff(mass) > 0)


def test_huge_lambda_suppresses_discrepancy(rng):
    # Both sides collapse onto the max-count class, so the score vanishes.
    counts = np.array([50, 3, 2, 1])
    a, b = rng.normal(size=(2, 4))
    scores = [ksas_score(a, b, counts, lam) for lam in (1.0, 5.0, 20.0)]
    assert scores[2] < scores[1] < scores[0]


def test_reversed_ksas():
    a, b = np.array([0.5, -0.2]), np.array([-1.0, 0.7])
    assert reversed_ksas_score(a, b, [6, 6], 1.0) == pytest.approx(ksas_score(a, b, [6, 6], 1.0), rel=1e-14)
    np.testing.assert_allclose(ks_prob(np.zeros(2), [4, 1], 1.0, reverse=True), [0.2, 0.8])
    assert reversed_ksas_score(a, b, [4, 1], 1.0) == pytest.approx(mp_sym_kl(a, b, [0.25, 1.0]), rel=1e-12)
    assert reversed_ksas_score(a, a, [9, 1], 1.0) == 0.0


def test_entropy_score():
    assert entropy_score([1.0, 0.0, 0.0]) < 1e-10
    assert entropy_score(np.ones(5) / 5) == pytest.approx(np.log(5))
    assert entropy_score([0.5, 0.25, 0.25]) == pytest.approx(1.5 * np.log(2), rel=1e-14)


def test_margin_score():
    assert margin_score(np.ones(4) / 4) == 0.0
    assert margin_score([0.0, 1.0, 0.0]) == 1.0
    assert margin_score([0.6, 0.3, 0.1]) == pytest.approx(0.3)
    with pytest.raises(ValueError):
        margin_score([1.0])


def test_select_top_examples():
    ids = np.array([10, 11, 12])
    assert list(select_top(ScoredPool(ids, np.array([3.0, 1.0, 3.0])), 2)) == [10, 12]
    assert sorted(select_top(ScoredPool(ids, np.array([3.0, 1.0, 3.0])), 3)) == [10, 11, 12]
    assert list(select_top(ScoredPool(ids, np.array([0.2, 0.1, 0.1])), 1, largest=False)) == [11]
    with pytest.raises(ValueError):
        select_top(ScoredPool(ids, np.zeros(3)), 4)


def test_select_top_matches_full_sort(rng):
    for _ in range(20):
        ids = rng.permutation(100)[:40]
        scores = rng.normal(size=40)
        ranked = sorted(zip(-scores, ids))
        assert list(select_top(ScoredPool(ids, scores), 5)) == [i for _, i in ranked[:5]]


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 5), min_size=1, max_size=30), st.randoms(use_true_random=False))
def test_select_top_permutation_invariant(scores, rnd):
    ids = list(range(len(scores)))
    b = len(scores) // 2
    base = select_top(ScoredPool(np.array(ids), np.array(scores, float)), b)
    perm = list(range(len(scores)))
    rnd.shuffle(perm)
    shuffled = select_top(ScoredPool(np.array(ids)[perm], np.array(scores, float)[perm]), b)
    assert list(base) == list(shuffled)


def brute_greedy(points, labelled, unlabelled, b):
    chosen = []
    for _ in range(b):
        best, best_d = None, -1.0
        for u in sorted(unlabelled):
            if u in chosen:
                continue
            centers = list(labelled) + chosen
            d = min(np.linalg.norm(points[u] - points[c]) for c in centers)
            if d > best_d:
                best, best_d = u, d
        chosen.append(best)
    return chosen


def test_coreset_examples():
    pts = np.array([[0.0], [1.0], [2.0], [3.0]])
    assert list(coreset_select(pts, [0], [1, 2, 3], 1)) == [3]
    same = np.zeros((6, 2))
    assert list(coreset_select(same, [0], [5, 3, 2, 4], 2)) == [2, 3]


def test_coreset_matches_brute_force_greedy(rng):
    for _ in range(30):
        n = int(rng.integers(4, 9))
        pts = rng.normal(size=(n, 2))
        ids = rng.permutation(n)
        n_lab = int(rng.integers(1, n - 2))
        lab, unl = list(ids[:n_lab]), list(ids[n_lab:])
        assert list(coreset_select(pts, lab, unl, 2)) == brute_greedy(pts, lab, unl, 2)


def test_coreset_empty_labelled_seeds_from_mean():
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [-0.5, 0.0], [5.0, 0.0]])
    assert list(coreset_select(pts, [], [0, 1, 2, 3], 1)) == [3]


def test_acquisition_request_validation():
    with pytest.raises(ConfigError):
        AcquisitionRequest("badge")
    with pytest.raises(ConfigError):
        AcquisitionRequest("ksas", lam=-1.0)
    with pytest.raises(ConfigError):
        AcquisitionRequest("entropy", scoring_model="server")


@pytest.mark.parametrize("strategy", ["ksas", "vanilla_kl", "reversed_ksas", "entropy", "margin", "coreset", "random"])
@pytest.mark.parametrize("scoring_model", ["client", "global"])
def test_acquire_returns_budget_from_pool(strategy, scoring_model, rng):
    spec = nn.ModelSpec((3, 5, 4))
    client, glob = nn.init_params(spec, rng), nn.init_params(spec, rng)
    feats = rng.normal(size=(40, 3))
    lab, unl = np.arange(10), np.arange(10, 40)
    req = AcquisitionRequest(strategy, scoring_model, 1.0, 7)
    picked = acquire(req, spec, client, glob, feats, lab, unl, [3, 0, 5, 2], np.random.default_rng(0), batch_size=8)
    assert picked.size == 7 and np.unique(picked).size == 7
    assert set(picked) <= set(unl)
    again = acquire(req, spec, client, glob, feats, lab, unl, [3, 0, 5, 2], np.random.default_rng(0), batch_size=8)
    assert np.array_equal(picked, again)


def test_acquire_scores_in_batches_match_single_pass(rng):
    spec = nn.ModelSpec((3, 5, 4))
    client, glob = nn.init_params(spec, rng), nn.init_params(spec, rng)
    feats = rng.normal(size=(50, 3))
    req = AcquisitionRequest("ksas", "client", 1.0, 10)
    args = (req, spec, client, glob, feats, np.arange(5), np.arange(5, 50), [1, 2, 3, 4], None)
    assert np.array_equal(acquire(*args, batch_size=7), acquire(*args, batch_size=1000))
