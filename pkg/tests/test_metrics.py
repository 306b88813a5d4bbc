import numpy as np
import pytest

from latentdiff.corpus import generate_story_corpus
from latentdiff.denoiser import DenoiserConfig, DenoiserModel
from latentdiff.metrics import (MetricReport, compute_report, diversity,
                                format_mean_std, grammar_validity, magnitude,
                                memorization, repeated_sc_probe)


def test_diversity_all_distinct_ngrams():
    assert diversity(["a b c d e"]) == 1.0


def test_diversity_hand_computed_repeated_token():
    # "x x x x x": 4 bigrams 1 unique, 3 trigrams 1 unique, 2 four-grams 1 unique
    assert diversity(["x x x x x"]) == pytest.approx((1 / 4) * (1 / 3) * (1 / 2))


def test_diversity_duplicating_set_scales_by_eighth():
    texts = generate_story_corpus(40, 20)
    d = diversity(texts)
    assert diversity(texts + texts) == pytest.approx(d / 8.0)


def test_diversity_strips_specials_and_rejects_short():
    assert diversity(["<bos> a b c d e <eos> <pad>"]) == 1.0
    with pytest.raises(ValueError, match="too short"):
        diversity(["a b"])


def _oracle_div(texts):
    ratios = []
    for n in (2, 3, 4):
        grams = []
        for t in texts:
            toks = t.split()
            grams.extend(tuple(toks[i:i + n]) for i in range(len(toks) - n + 1))
        ratios.append(len(set(grams)) / len(grams))
    return ratios[0] * ratios[1] * ratios[2]


def _oracle_mem(texts, train):
    train_set = set()
    for t in train:
        toks = t.split()
        train_set.update(tuple(toks[i:i + 4]) for i in range(len(toks) - 3))
    found = total = 0
    for t in texts:
        toks = t.split()
        for i in range(len(toks) - 3):
            total += 1
            if tuple(toks[i:i + 4]) in train_set:
                found += 1
    return found / total


def test_diversity_matches_brute_force_oracle_on_100_texts():
    texts = generate_story_corpus(41, 100)
    assert diversity(texts) == _oracle_div(texts)


def test_memorization_verbatim_and_disjoint():
    train = generate_story_corpus(42, 50)
    assert memorization(train[:10], train) == 1.0
    assert memorization(["q1 q2 q3 q4 q5"], train) == 0.0


def test_memorization_matches_brute_force_oracle():
    train = generate_story_corpus(43, 200)
    mixed = generate_story_corpus(44, 60) + train[:40]
    assert memorization(mixed, train) == _oracle_mem(mixed, train)


def test_memorization_requires_four_grams():
    with pytest.raises(ValueError):
        memorization(["a b"], ["a b c d"])


def test_magnitude_basic_and_monte_carlo():
    assert magnitude(np.zeros((3, 4))) == 0.0
    assert magnitude(np.ones((3, 4))) == 1.0
    z = np.random.default_rng(7).standard_normal(100_000)
    assert magnitude(z) == pytest.approx(1.0, abs=0.02)


def test_metric_report_bounds():
    with pytest.raises(ValueError):
        MetricReport(div=1.2, mem=0.0, grammar_valid_rate=0.5, count=10, seed=0)
    report = compute_report(generate_story_corpus(45, 30),
                            generate_story_corpus(46, 50), seed=3)
    assert 0.0 <= report.div <= 1.0
    assert 0.0 <= report.mem <= 1.0
    assert report.grammar_valid_rate == 1.0
    assert report.count == 30


def test_grammar_validity_rate():
    texts = ["the fox sleep . the dog rest .", "not grammar at all"]
    assert grammar_validity(texts) == 0.5


def test_format_mean_std():
    assert format_mean_std([0.5, 0.7]) == "0.600_0.100"


def test_repeated_sc_probe_smoke_untrained():
    model = DenoiserModel(DenoiserConfig(layers=1, dim=8, heads=2, max_len=4), seed=2)
    z_t = np.random.default_rng(1).standard_normal((2, 4, 8))
    mags = repeated_sc_probe(model, z_t, 0.5, k=5)
    assert len(mags) == 5
    assert all(np.isfinite(m) for m in mags)
    with pytest.raises(ValueError):
        repeated_sc_probe(model, z_t, 0.5, k=1)


def test_repeated_sc_probe_constant_when_sc_path_is_dead():
    model = DenoiserModel(DenoiserConfig(layers=2, dim=8, heads=2, max_len=4), seed=2)
    for proj in model.sc_projs:
        proj.w.data[:] = 0.0
        proj.b.data[:] = 0.0
    z_t = np.random.default_rng(2).standard_normal((2, 4, 8))
    mags = repeated_sc_probe(model, z_t, 0.4, k=6)
    assert all(m == mags[0] for m in mags[1:])
