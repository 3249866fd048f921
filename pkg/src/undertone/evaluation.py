"""Classification metrics, cheap baselines, and model diagnostics."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data import DataError, batch_arrays, tokenize
from .model import (ModelConfig, ParameterStore, attention_source_vectors,
                    forward, predicted_labels)

CLASSES = (-1, 0, 1)


@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float
    support: float


@dataclass(frozen=True)
class MetricsReport:
    """Scores for one task; confusion rows are gold, columns predicted."""

    confusion: np.ndarray
    per_class: dict
    precision: float
    recall: float
    weighted_f1: float
    accuracy: float

    def as_row(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "weighted_f1": self.weighted_f1,
            "accuracy": self.accuracy,
        }


def _scores_from_confusion(confusion: np.ndarray) -> MetricsReport:
    total = confusion.sum()
    per_class = {}
    weighted = np.zeros(3)
    for i, cls in enumerate(CLASSES):
        tp = confusion[i, i]
        pred_total = confusion[:, i].sum()
        gold_total = confusion[i, :].sum()
        p = tp / pred_total if pred_total > 0 else 0.0
        r = tp / gold_total if gold_total > 0 else 0.0
        f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
        per_class[cls] = ClassScores(p, r, f1, float(gold_total))
        weighted += gold_total * np.array([p, r, f1])
    weighted /= total
    return MetricsReport(
        confusion=confusion,
        per_class=per_class,
        precision=float(weighted[0]),
        recall=float(weighted[1]),
        weighted_f1=float(weighted[2]),
        accuracy=float(np.trace(confusion) / total),
    )


def compute_metrics(predictions, gold) -> MetricsReport:
    predictions = np.asarray(predictions)
    gold = np.asarray(gold)
    if predictions.shape != gold.shape or predictions.ndim != 1:
        raise ValueError(
            f"predictions {predictions.shape} and gold {gold.shape} must be "
            "equal-length 1-d arrays"
        )
    if predictions.size == 0:
        raise ValueError("need at least one prediction")
    for arr, what in ((predictions, "predictions"), (gold, "gold")):
        if not np.isin(arr, CLASSES).all():
            raise ValueError(f"{what} must take values in {CLASSES}")
    confusion = np.zeros((3, 3))
    for g, p in zip(gold, predictions):
        confusion[int(g) + 1, int(p) + 1] += 1
    return _scores_from_confusion(confusion)


def _mean_reports(reports) -> MetricsReport:
    per_class = {
        cls: ClassScores(
            precision=float(np.mean([r.per_class[cls].precision for r in reports])),
            recall=float(np.mean([r.per_class[cls].recall for r in reports])),
            f1=float(np.mean([r.per_class[cls].f1 for r in reports])),
            support=float(np.mean([r.per_class[cls].support for r in reports])),
        )
        for cls in CLASSES
    }
    return MetricsReport(
        confusion=np.mean([r.confusion for r in reports], axis=0),
        per_class=per_class,
        precision=float(np.mean([r.precision for r in reports])),
        recall=float(np.mean([r.recall for r in reports])),
        weighted_f1=float(np.mean([r.weighted_f1 for r in reports])),
        accuracy=float(np.mean([r.accuracy for r in reports])),
    )


def gbp_baseline(train_labels, test_gold, seed: int = 0,
                 trials: int = 100) -> MetricsReport:
    """Guess labels by sampling the training distribution; mean over trials."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    train_labels = np.asarray(train_labels)
    test_gold = np.asarray(test_gold)
    counts = np.array([(train_labels == c).sum() for c in CLASSES], dtype=float)
    if counts.sum() == 0:
        raise ValueError("empty training labels")
    p = counts / counts.sum()
    rng = np.random.default_rng(seed)
    reports = []
    for _ in range(trials):
        preds = rng.choice(CLASSES, size=test_gold.size, p=p)
        reports.append(compute_metrics(preds, test_gold))
    return _mean_reports(reports)


BOW_KINDS = ("naive-bayes", "logistic-regression")


def _bow_matrix(token_lists, vocab: dict) -> np.ndarray:
    X = np.zeros((len(token_lists), len(vocab)))
    for i, tokens in enumerate(token_lists):
        for tok in tokens:
            j = vocab.get(tok)
            if j is not None:
                X[i, j] += 1.0
    return X


def bow_baselines(kind: str, train, test, lr: float = 0.5,
                  epochs: int = 300) -> MetricsReport:
    """Bag-of-words baseline over (tokens, label) pairs; train-only vocabulary."""
    if kind not in BOW_KINDS:
        raise ValueError(f"kind must be one of {BOW_KINDS}, got {kind!r}")
    train = list(train)
    test = list(test)
    if not train:
        raise DataError("empty training set")
    vocab = {}
    for tokens, _ in train:
        for tok in tokens:
            vocab.setdefault(tok, len(vocab))
    X = _bow_matrix([t for t, _ in train], vocab)
    y = np.array([[1.0 if lab == c else 0.0 for c in CLASSES]
                  for _, lab in train])
    X_test = _bow_matrix([t for t, _ in test], vocab)
    gold = np.array([lab for _, lab in test])

    if kind == "naive-bayes":
        class_counts = y.sum(axis=0)
        token_counts = y.T @ X
        with np.errstate(divide="ignore"):
            log_prior = np.log(class_counts / class_counts.sum())
        log_theta = np.log(
            (token_counts + 1.0)
            / (token_counts.sum(axis=1, keepdims=True) + len(vocab))
        )
        scores = X_test @ log_theta.T + log_prior
    else:
        W = np.zeros((3, len(vocab)))
        b = np.zeros(3)
        for _ in range(epochs):
            logits = X @ W.T + b
            logits -= logits.max(axis=1, keepdims=True)
            probs = np.exp(logits)
            probs /= probs.sum(axis=1, keepdims=True)
            diff = (probs - y) / len(train)
            W -= lr * (diff.T @ X)
            b -= lr * diff.sum(axis=0)
        scores = X_test @ W.T + b

    preds = np.array(CLASSES)[scores.argmax(axis=1)]
    return compute_metrics(preds, gold)


def mean_pairwise_cosine(vectors: np.ndarray) -> float:
    vectors = np.asarray(vectors, dtype=np.float64)
    n = vectors.shape[0]
    if n < 2:
        raise ValueError("need at least 2 vectors")
    norms = np.linalg.norm(vectors, axis=1)
    if (norms == 0).any():
        raise ValueError("zero vector has no direction")
    unit = vectors / norms[:, None]
    total = unit.sum(axis=0)
    # sum over ordered pairs of u_i . u_j equals |sum|^2 - n for unit rows
    return float((total @ total - n) / (n * (n - 1)))


def representation_similarity(store: ParameterStore, config: ModelConfig,
                              n: int, seed: int = 0) -> float:
    """Mean pairwise cosine of the vectors the attention stage consumes."""
    if n < 2:
        raise ValueError("need at least 2 sampled tokens")
    vocab_size = store["embedding"].data.shape[0]
    if n > vocab_size - 2:
        raise ValueError(f"cannot sample {n} tokens from {vocab_size - 2}")
    rng = np.random.default_rng(seed)
    token_ids = rng.choice(np.arange(2, vocab_size), size=n, replace=False)
    ids = np.zeros((n, store.fixing_length), dtype=np.int64)
    ids[:, 0] = token_ids
    lengths = np.ones(n, dtype=np.int64)
    source = attention_source_vectors(store, ids, lengths, config)
    return mean_pairwise_cosine(source[:, 0, :])


def evaluate_model(store: ParameterStore, config: ModelConfig, encoded,
                   batch_size: int = 64) -> dict:
    """Eval-mode predictions over encoded examples; one report per task."""
    if not encoded:
        raise ValueError("nothing to evaluate")
    preds = {task: [] for task in config.tasks}
    gold = {task: [] for task in config.tasks}
    for start in range(0, len(encoded), batch_size):
        chunk = encoded[start : start + batch_size]
        ids, lengths, labels = batch_arrays(chunk, config.tasks)
        out = forward(None, store, ids, lengths, config)
        for task in config.tasks:
            preds[task].append(predicted_labels(out.probs[task].data))
            gold[task].append(labels[task].argmax(axis=1) - 1)
    return {
        task: compute_metrics(np.concatenate(preds[task]),
                              np.concatenate(gold[task]))
        for task in config.tasks
    }


def export_attention(store: ParameterStore, config: ModelConfig, vocab,
                     text: str, path=None, mode: str = "char-cjk"):
    """Attention map for one text; returns (tokens, matrix), optionally as CSV."""
    tokens = tokenize(text, mode)[: store.fixing_length]
    if not tokens:
        raise DataError("text tokenizes to nothing")
    ids = np.zeros((1, store.fixing_length), dtype=np.int64)
    for i, tok in enumerate(tokens):
        ids[0, i] = vocab.id_of(tok)
    lengths = np.array([len(tokens)], dtype=np.int64)
    out = forward(None, store, ids, lengths, config)
    matrix = out.attention.data[0, : len(tokens), : len(tokens)]
    if path is not None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            writer.writerow(["token"] + tokens)
            for tok, row in zip(tokens, matrix):
                writer.writerow([tok] + [f"{v:.8f}" for v in row])
    return tokens, matrix
