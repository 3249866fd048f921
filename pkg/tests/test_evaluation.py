import csv

import numpy as np
import pytest

from undertone.data import (DataError, build_vocabulary,
                            generate_synthetic_corpus, tokenize)
from undertone.evaluation import (CLASSES, MetricsReport, bow_baselines,
                                  compute_metrics, evaluate_model,
                                  export_attention, gbp_baseline,
                                  mean_pairwise_cosine,
                                  representation_similarity)
from undertone.model import ModelConfig, ParameterStore, apply_variant


# ------------------------------------------------------------------ metrics

def test_hand_worked_example():
    report = compute_metrics([1, -1, -1, 0], [1, 1, -1, 0])
    assert abs(report.weighted_f1 - 0.75) < 1e-12
    assert abs(report.accuracy - 0.75) < 1e-12
    assert report.per_class[1].precision == 1.0
    assert report.per_class[1].recall == 0.5
    assert report.per_class[-1].precision == 0.5
    assert report.per_class[0].f1 == 1.0


def test_perfect_predictions_score_one():
    report = compute_metrics([1, 0, -1, 1], [1, 0, -1, 1])
    assert report.weighted_f1 == 1.0
    assert report.accuracy == 1.0
    assert np.trace(report.confusion) == 4


def test_absent_class_contributes_nothing():
    report = compute_metrics([1, 1, -1], [1, 1, -1])
    assert report.per_class[0].support == 0.0
    assert report.weighted_f1 == 1.0


def test_metrics_input_validation():
    with pytest.raises(ValueError, match="equal-length"):
        compute_metrics([1, 0], [1])
    with pytest.raises(ValueError, match="at least one"):
        compute_metrics([], [])
    with pytest.raises(ValueError, match="values"):
        compute_metrics([2, 0], [1, 0])


def test_accuracy_is_confusion_trace():
    rng = np.random.default_rng(1)
    for _ in range(20):
        n = int(rng.integers(1, 60))
        pred = rng.choice(CLASSES, n)
        gold = rng.choice(CLASSES, n)
        r = compute_metrics(pred, gold)
        assert abs(r.accuracy - np.trace(r.confusion) / n) < 1e-12


def brute_force_report(pred, gold):
    per_class = {}
    n = len(gold)
    wf1 = wp = wr = 0.0
    for cls in CLASSES:
        tp = sum(1 for p, g in zip(pred, gold) if p == cls and g == cls)
        fp = sum(1 for p, g in zip(pred, gold) if p == cls and g != cls)
        fn = sum(1 for p, g in zip(pred, gold) if p != cls and g == cls)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = (2 * precision * recall / (precision + recall)
              if precision + recall else 0.0)
        support = tp + fn
        per_class[cls] = (precision, recall, f1, support)
        wp += support * precision
        wr += support * recall
        wf1 += support * f1
    acc = sum(1 for p, g in zip(pred, gold) if p == g) / n
    return per_class, wp / n, wr / n, wf1 / n, acc


def test_matches_brute_force_on_random_pairs():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        n = int(rng.integers(1, 30))
        pred = rng.choice(CLASSES, n)
        gold = rng.choice(CLASSES, n)
        r = compute_metrics(pred, gold)
        per_class, wp, wr, wf1, acc = brute_force_report(pred, gold)
        assert abs(r.weighted_f1 - wf1) < 1e-12
        assert abs(r.precision - wp) < 1e-12
        assert abs(r.recall - wr) < 1e-12
        assert abs(r.accuracy - acc) < 1e-12
        for cls in CLASSES:
            assert abs(r.per_class[cls].f1 - per_class[cls][2]) < 1e-12


def test_weighted_equals_macro_for_equal_supports():
    rng = np.random.default_rng(3)
    for _ in range(50):
        gold = np.repeat(CLASSES, 8)
        pred = rng.choice(CLASSES, gold.size)
        r = compute_metrics(pred, gold)
        macro = np.mean([r.per_class[c].f1 for c in CLASSES])
        assert abs(r.weighted_f1 - macro) < 1e-12
        assert 0.0 <= r.weighted_f1 <= 1.0


# ---------------------------------------------------------------------- gbp

def test_gbp_expected_accuracy_anchor():
    rng = np.random.default_rng(4)
    train = rng.choice(CLASSES, 5000, p=[0.1, 0.2, 0.7])
    gold = rng.choice(CLASSES, 4000, p=[0.1, 0.2, 0.7])
    report = gbp_baseline(train, gold, seed=0, trials=400)
    # expected accuracy sum(p_i q_i) with both near (0.7, 0.2, 0.1)
    assert abs(report.accuracy - 0.54) < 0.02


def test_gbp_monte_carlo_within_three_sigma():
    rng = np.random.default_rng(5)
    p = np.array([0.6, 0.1, 0.3])
    train = rng.choice(CLASSES, 3000, p=p)
    gold = rng.choice(CLASSES, 1500, p=[0.2, 0.3, 0.5])
    p_hat = np.array([(train == c).mean() for c in CLASSES])
    q = np.array([(gold == c).mean() for c in CLASSES])
    expect = float(p_hat @ q)
    trials = 300
    report = gbp_baseline(train, gold, seed=1, trials=trials)
    sigma = np.sqrt(expect * (1 - expect) / gold.size / trials)
    assert abs(report.accuracy - expect) < 3 * sigma + 1e-9


def test_gbp_degenerate_distribution():
    train = np.full(50, -1)
    gold = np.full(30, -1)
    report = gbp_baseline(train, gold, seed=2, trials=5)
    assert report.accuracy == 1.0
    assert report.weighted_f1 == 1.0


def test_gbp_same_seed_same_report():
    rng = np.random.default_rng(6)
    train = rng.choice(CLASSES, 200)
    gold = rng.choice(CLASSES, 100)
    a = gbp_baseline(train, gold, seed=9, trials=20)
    b = gbp_baseline(train, gold, seed=9, trials=20)
    assert a.accuracy == b.accuracy and a.weighted_f1 == b.weighted_f1
    with pytest.raises(ValueError):
        gbp_baseline(train, gold, trials=0)


# ------------------------------------------------------------ bow baselines

def test_disjoint_vocabulary_forces_class():
    train = [(["alpha", "beta"], -1), (["gamma", "delta"], 0),
             (["epsilon", "zeta"], 1)]
    test = [(["alpha", "alpha", "beta"], -1), (["zeta"], 1), (["gamma"], 0)]
    for kind in ("naive-bayes", "logistic-regression"):
        report = bow_baselines(kind, train, test)
        assert report.accuracy == 1.0


def test_naive_bayes_matches_hand_posterior():
    # two classes, three tokens; test doc = [a, b]
    # class -1 docs: [a, a, b]; class 1 docs: [b, c]
    # theta(-1) = (3, 2, 1)/6 ; theta(1) = (1, 2, 2)/5 ; priors 1/2
    # score ratio = (3/6 * 2/6) / (1/5 * 2/5) = (1/6) / (2/25) = 25/12
    train = [(["a", "a", "b"], -1), (["b", "c"], 1)]
    test = [(["a", "b"], -1)]
    report = bow_baselines("naive-bayes", train, test)
    assert report.accuracy == 1.0  # 25/12 > 1 so class -1 wins
    flipped = bow_baselines("naive-bayes", train, [(["c", "c", "b"], 1)])
    assert flipped.accuracy == 1.0  # likelihoods now favor class 1


def test_logistic_regression_separates_counts():
    rng = np.random.default_rng(7)
    train = []
    for cls, marker in ((-1, "neg"), (0, "mid"), (1, "pos")):
        for i in range(8):
            fillers = [f"w{j}" for j in rng.integers(0, 10, 4)]
            train.append((fillers + [marker], cls))
    report = bow_baselines("logistic-regression", train, train)
    assert report.accuracy == 1.0


def test_bow_rejects_bad_input():
    with pytest.raises(DataError):
        bow_baselines("naive-bayes", [], [(["a"], 1)])
    with pytest.raises(ValueError, match="kind"):
        bow_baselines("svm", [(["a"], 1)], [(["a"], 1)])


# ------------------------------------------------- representation similarity

def test_cosine_identical_vectors():
    vectors = np.tile([[0.3, -0.4, 0.5]], (6, 1))
    assert abs(mean_pairwise_cosine(vectors) - 1.0) < 1e-12


def test_cosine_orthonormal_vectors():
    assert abs(mean_pairwise_cosine(np.eye(4) * 2.5)) < 1e-12


def test_cosine_matches_pairwise_loop():
    rng = np.random.default_rng(8)
    for _ in range(20):
        n = int(rng.integers(2, 12))
        vectors = rng.normal(size=(n, 5))
        total = 0.0
        pairs = 0
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                u, v = vectors[i], vectors[j]
                total += u @ v / (np.linalg.norm(u) * np.linalg.norm(v))
                pairs += 1
        assert abs(mean_pairwise_cosine(vectors) - total / pairs) < 1e-10


def test_cosine_input_guards():
    with pytest.raises(ValueError, match="at least 2"):
        mean_pairwise_cosine(np.ones((1, 3)))
    with pytest.raises(ValueError, match="zero vector"):
        mean_pairwise_cosine(np.array([[1.0, 0.0], [0.0, 0.0]]))


def test_representation_similarity_source_taps():
    cfg = ModelConfig(d_e=8, d_h=4, dropout=0.0)
    store = ParameterStore.create(cfg, vocab_size=30, fixing_length=6, seed=0)
    emb = representation_similarity(store, cfg, n=10, seed=3)
    rnn = representation_similarity(store, apply_variant(cfg, "st"),
                                    n=10, seed=3)
    assert -1.0 <= emb <= 1.0 and -1.0 <= rnn <= 1.0
    assert emb != rnn  # different source vectors
    assert representation_similarity(store, cfg, n=10, seed=3) == emb
    with pytest.raises(ValueError):
        representation_similarity(store, cfg, n=1, seed=3)
    with pytest.raises(ValueError):
        representation_similarity(store, cfg, n=29, seed=3)


# ------------------------------------------------------------ model adapters

def make_trained_free_model():
    cfg = ModelConfig(d_e=8, d_h=4, dropout=0.0)
    corpus = generate_synthetic_corpus(30, cue_strength=1.0, vocab_size=20,
                                       seed=11)
    token_lists = [tokenize(ex.text, "whitespace") for ex in corpus]
    vocab = build_vocabulary(token_lists, fixing_length=10)
    store = ParameterStore.create(cfg, len(vocab), 10, seed=5)
    return cfg, store, vocab, corpus


def test_evaluate_model_matches_manual_forward():
    from undertone.data import batch_arrays, encode_example
    from undertone.model import forward, predicted_labels

    cfg, store, vocab, corpus = make_trained_free_model()
    encoded = [encode_example(ex, vocab, "whitespace") for ex in corpus]
    reports = evaluate_model(store, cfg, encoded, batch_size=7)
    ids, lengths, labels = batch_arrays(encoded, cfg.tasks)
    out = forward(None, store, ids, lengths, cfg)
    for task in cfg.tasks:
        manual = compute_metrics(predicted_labels(out.probs[task].data),
                                 labels[task].argmax(axis=1) - 1)
        assert reports[task].accuracy == manual.accuracy
        assert reports[task].weighted_f1 == manual.weighted_f1
    with pytest.raises(ValueError):
        evaluate_model(store, cfg, [])


# ------------------------------------------------------------ attention maps

def test_export_attention_single_token(tmp_path):
    cfg, store, vocab, _ = make_trained_free_model()
    path = tmp_path / "att.csv"
    tokens, matrix = export_attention(store, cfg, vocab, "tok3",
                                      path=path, mode="whitespace")
    assert tokens == ["tok3"]
    np.testing.assert_allclose(matrix, [[1.0]], atol=1e-12)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["token", "tok3"]
    assert float(rows[1][1]) == 1.0


def test_export_attention_rows_sum_to_one(tmp_path):
    cfg, store, vocab, corpus = make_trained_free_model()
    text = corpus[0].text
    tokens, matrix = export_attention(store, cfg, vocab, text,
                                      mode="whitespace")
    assert len(tokens) == matrix.shape[0] == matrix.shape[1]
    np.testing.assert_allclose(matrix.sum(axis=1), 1.0, atol=1e-6)
    again = export_attention(store, cfg, vocab, text, mode="whitespace")[1]
    np.testing.assert_array_equal(matrix, again)


def test_export_attention_rejects_empty():
    cfg, store, vocab, _ = make_trained_free_model()
    with pytest.raises(DataError):
        export_attention(store, cfg, vocab, "   ", mode="whitespace")
