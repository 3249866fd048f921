"""Corpus schema, tokenization, vocabulary, splits, and synthetic data.

The corpus format is UTF-8 JSON-lines. Each record carries a sentence,
an optional parent sentence, three modeled ternary labels (subtext,
sarcasm, metaphor) and several schema-only annotation fields that ride
along unmodeled. Ternary labels use -1 (no), 0 (unsure), 1 (yes).
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from undertone.autodiff import Tensor

TASKS = ("subtext", "sarcasm", "metaphor")
TERNARY = (-1, 0, 1)
AUX_TERNARY = ("exaggeration", "homophonic", "other")
EMOTIONS = frozenset(
    {"anger", "fear", "disgust", "trust", "joy", "surprise", "anticipation", "sad", None}
)
PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"

# class distributions per task, order (-1, 0, 1); heavily skewed like the
# corpora these models face in the wild
DEFAULT_IMBALANCE = {
    "subtext": (0.72, 0.05, 0.23),
    "sarcasm": (0.92, 0.01, 0.07),
    "metaphor": (0.915, 0.015, 0.07),
}


class DataError(Exception):
    """Unusable corpus or embedding input (missing file, bad record)."""


@dataclass
class LabeledExample:
    id: str
    text: str
    subtext: int
    sarcasm: int
    metaphor: int
    parent_text: str | None = None
    exaggeration: int = 0
    homophonic: int = 0
    other: int = 0
    emotion: str | None = None
    attitude: int = 0

    def label(self, task: str) -> int:
        if task not in TASKS:
            raise ValueError(f"unknown task {task!r}")
        return getattr(self, task)


@dataclass
class EncodedExample:
    id: str
    token_ids: np.ndarray  # int64 [fixing_length], padded with PAD_ID
    true_length: int
    labels: dict  # task -> one-hot float64 [3] in class order (-1, 0, 1)


@dataclass
class Vocabulary:
    token_to_id: dict
    fixing_length: int
    id_to_token: list = field(default_factory=list)

    def __post_init__(self):
        if self.fixing_length < 1:
            raise ValueError("fixing_length must be >= 1")
        if not self.id_to_token:
            self.id_to_token = [PAD_TOKEN] * (max(self.token_to_id.values()) + 1)
            for tok, i in self.token_to_id.items():
                self.id_to_token[i] = tok
            self.id_to_token[PAD_ID] = PAD_TOKEN
            self.id_to_token[UNK_ID] = UNK_TOKEN

    def __len__(self):
        return len(self.id_to_token)

    def id_of(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def tokens_of(self, ids) -> list:
        return [self.id_to_token[int(i)] for i in ids]


def _check_ternary(value, name, line_no):
    if not isinstance(value, int) or isinstance(value, bool) or value not in TERNARY:
        raise DataError(f"line {line_no}: {name}={value!r} not in {{-1, 0, 1}}")
    return value


def parse_record(obj: dict, line_no: int) -> LabeledExample:
    if not isinstance(obj, dict):
        raise DataError(f"line {line_no}: record is not a JSON object")
    if "text" not in obj or not isinstance(obj["text"], str):
        raise DataError(f"line {line_no}: missing or non-string 'text'")
    kwargs = {
        "id": str(obj.get("id", line_no)),
        "text": obj["text"],
        "parent_text": obj.get("parent_text"),
    }
    for task in TASKS:
        if task not in obj:
            raise DataError(f"line {line_no}: missing label '{task}'")
        kwargs[task] = _check_ternary(obj[task], task, line_no)
    for aux in AUX_TERNARY:
        kwargs[aux] = _check_ternary(obj.get(aux, 0), aux, line_no)
    emotion = obj.get("emotion")
    if emotion not in EMOTIONS:
        raise DataError(f"line {line_no}: emotion={emotion!r} outside the closed set")
    kwargs["emotion"] = emotion
    attitude = obj.get("attitude", 0)
    if not isinstance(attitude, int) or isinstance(attitude, bool):
        raise DataError(f"line {line_no}: attitude={attitude!r} is not an integer")
    kwargs["attitude"] = attitude
    pt = kwargs["parent_text"]
    if pt is not None and not isinstance(pt, str):
        raise DataError(f"line {line_no}: parent_text must be a string or null")
    return LabeledExample(**kwargs)


def load_corpus(path) -> list:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise DataError(f"cannot read corpus {path}: {exc}") from exc
    examples = []
    for line_no, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"line {line_no}: malformed JSON ({exc.msg})") from exc
        examples.append(parse_record(obj, line_no))
    return examples


def save_corpus(examples, path):
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            rec = {
                "id": ex.id, "text": ex.text, "parent_text": ex.parent_text,
                "subtext": ex.subtext, "sarcasm": ex.sarcasm, "metaphor": ex.metaphor,
                "exaggeration": ex.exaggeration, "homophonic": ex.homophonic,
                "other": ex.other, "emotion": ex.emotion, "attitude": ex.attitude,
            }
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")


def _is_cjk(ch: str) -> bool:
    cp = ord(ch)
    return (
        0x4E00 <= cp <= 0x9FFF      # unified ideographs
        or 0x3400 <= cp <= 0x4DBF   # extension A
        or 0xF900 <= cp <= 0xFAFF   # compatibility ideographs
        or 0x3040 <= cp <= 0x30FF   # kana
    )


def tokenize(text: str, mode: str = "char-cjk") -> list:
    if mode == "whitespace":
        return text.split()
    if mode != "char-cjk":
        raise ValueError(f"unknown tokenizer mode {mode!r}")
    tokens = []
    run = []
    for ch in text:
        if ch.isspace():
            if run:
                tokens.append("".join(run))
                run = []
        elif _is_cjk(ch):
            if run:
                tokens.append("".join(run))
                run = []
            tokens.append(ch)
        else:
            run.append(ch)
    if run:
        tokens.append("".join(run))
    return tokens


def compute_fixing_length(lengths) -> int:
    lengths = list(lengths)
    if not lengths:
        raise ValueError("compute_fixing_length: empty length list")
    if any(n <= 0 for n in lengths):
        raise ValueError("compute_fixing_length: lengths must be positive")
    ordered = sorted(lengths)
    return ordered[math.ceil(0.99 * len(ordered)) - 1]


def build_vocabulary(token_lists, fixing_length: int, min_count: int = 1) -> Vocabulary:
    counts = Counter()
    for tokens in token_lists:
        counts.update(tokens)
    ordered = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    token_to_id = {}
    next_id = 2  # 0 pad, 1 unknown, never reassigned
    for token, count in ordered:
        if count >= min_count and token not in (PAD_TOKEN, UNK_TOKEN):
            token_to_id[token] = next_id
            next_id += 1
    return Vocabulary(token_to_id=token_to_id, fixing_length=fixing_length)


def encode_example(example: LabeledExample, vocab: Vocabulary,
                   mode: str = "char-cjk") -> EncodedExample:
    tokens = tokenize(example.text, mode)[: vocab.fixing_length]
    if not tokens:
        raise DataError(f"example {example.id}: text tokenizes to nothing")
    ids = np.full(vocab.fixing_length, PAD_ID, dtype=np.int64)
    for i, tok in enumerate(tokens):
        ids[i] = vocab.id_of(tok)
    labels = {}
    for task in TASKS:
        onehot = np.zeros(3)
        onehot[example.label(task) + 1] = 1.0
        labels[task] = onehot
    return EncodedExample(id=example.id, token_ids=ids,
                          true_length=len(tokens), labels=labels)


def batch_arrays(encoded, tasks=TASKS):
    """Stack encoded examples into (ids [B,L], lengths [B], labels {task: [B,3]})."""
    ids = np.stack([e.token_ids for e in encoded])
    lengths = np.array([e.true_length for e in encoded], dtype=np.int64)
    labels = {t: np.stack([e.labels[t] for e in encoded]) for t in tasks}
    return ids, lengths, labels


def _by_class(examples):
    groups = {c: [] for c in TERNARY}
    for ex in examples:
        groups[ex.subtext].append(ex)
    return groups


def stratified_split(examples, test_fraction: float = 0.2,
                     val_fraction: float = 0.2, seed: int = 0):
    """Split per subtext class; val_fraction applies to what test leaves."""
    if not 0 <= test_fraction < 1 or not 0 <= val_fraction < 1:
        raise ValueError("fractions must lie in [0, 1)")
    rng = np.random.default_rng(seed)
    groups = _by_class(examples)
    train, val, test = [], [], []
    for cls in TERNARY:
        members = groups[cls]
        if not members:
            continue
        if len(members) < 5:
            raise DataError(
                f"subtext class {cls} has only {len(members)} examples; need >= 5"
            )
        order = rng.permutation(len(members))
        members = [members[i] for i in order]
        n_test = round(len(members) * test_fraction)
        rest = members[n_test:]
        n_val = round(len(rest) * val_fraction)
        test.extend(members[:n_test])
        val.extend(rest[:n_val])
        train.extend(rest[n_val:])
    order = rng.permutation(len(train))
    train = [train[i] for i in order]
    return train, val, test


def kfold(examples, k: int = 5, seed: int = 0):
    """Stratified k folds: deal each shuffled class round-robin."""
    if len(examples) < k:
        raise ValueError(f"need at least k={k} examples, got {len(examples)}")
    rng = np.random.default_rng(seed)
    groups = _by_class(examples)
    buckets = [[] for _ in range(k)]
    deal = 0  # rolls across classes so fold sizes stay within 1 overall
    for cls in TERNARY:
        members = groups[cls]
        order = rng.permutation(len(members))
        for idx in order:
            buckets[deal % k].append(members[idx])
            deal += 1
    folds = []
    for i in range(k):
        test = buckets[i]
        train = [ex for j in range(k) if j != i for ex in buckets[j]]
        folds.append((train, test))
    return folds


def cue_token(task: str, cls: int) -> str:
    suffix = {-1: "neg", 0: "unsure", 1: "pos"}[cls]
    return f"cue_{task}_{suffix}"


def _validate_probs(probs, what):
    probs = tuple(float(p) for p in probs)
    if len(probs) != 3 or any(p < 0 or p > 1 for p in probs):
        raise ValueError(f"{what}: need 3 probabilities in [0, 1], got {probs}")
    if abs(sum(probs) - 1.0) > 1e-9:
        raise ValueError(f"{what}: probabilities sum to {sum(probs)}, not 1")
    return probs


def generate_synthetic_corpus(n: int, imbalance=None, cue_strength: float = 0.9,
                              vocab_size: int = 200, seed: int = 0,
                              correlation: float = 0.5,
                              length_range=(6, 16)) -> list:
    """Planted-cue corpus: each task label leaves a dedicated token w.p.
    cue_strength; sarcasm/metaphor copy the subtext label w.p. correlation,
    which skews their marginals toward subtext's when the distributions
    differ (the subtext marginal itself is always exact).
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if not 0.0 <= cue_strength <= 1.0:
        raise ValueError(f"cue_strength {cue_strength} outside [0, 1]")
    if not 0.0 <= correlation <= 1.0:
        raise ValueError(f"correlation {correlation} outside [0, 1]")
    if vocab_size < 1:
        raise ValueError("vocab_size must be >= 1")
    lo, hi = length_range
    if lo < 3 or hi < lo:
        raise ValueError(f"bad length_range {length_range}; need 3 <= lo <= hi")
    imbalance = dict(DEFAULT_IMBALANCE) if imbalance is None else dict(imbalance)
    if set(imbalance) != set(TASKS):
        raise ValueError(f"imbalance must cover exactly {TASKS}")
    probs = {t: _validate_probs(imbalance[t], f"imbalance[{t}]") for t in TASKS}

    rng = np.random.default_rng(seed)
    background = [f"tok{i}" for i in range(vocab_size)]
    examples = []
    for i in range(n):
        labels = {"subtext": TERNARY[rng.choice(3, p=probs["subtext"])]}
        for task in ("sarcasm", "metaphor"):
            if rng.random() < correlation:
                labels[task] = labels["subtext"]
            else:
                labels[task] = TERNARY[rng.choice(3, p=probs[task])]
        length = int(rng.integers(lo, hi + 1))
        tokens = [background[j] for j in rng.integers(0, vocab_size, size=length)]
        for task in TASKS:
            if rng.random() < cue_strength:
                pos = int(rng.integers(0, len(tokens) + 1))
                tokens.insert(pos, cue_token(task, labels[task]))
        examples.append(LabeledExample(
            id=f"syn{i}", text=" ".join(tokens),
            subtext=labels["subtext"], sarcasm=labels["sarcasm"],
            metaphor=labels["metaphor"],
        ))
    return examples


def _seeded_row(rng, dim):
    return rng.uniform(-0.05, 0.05, size=dim)


def init_embeddings(vocab: Vocabulary, dim: int, seed: int = 0) -> Tensor:
    """Fresh trainable table: seeded uniform rows, pad row all zeros."""
    rng = np.random.default_rng(seed)
    table = rng.uniform(-0.05, 0.05, size=(len(vocab), dim))
    table[PAD_ID] = 0.0
    return Tensor(table, requires_grad=True, name="embedding")


def load_embeddings(path, dim: int, vocab: Vocabulary, seed: int = 0) -> Tensor:
    """Read GloVe-style text vectors; unseen tokens get seeded uniform rows."""
    vectors = {}
    try:
        fh = open(path, encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read embeddings {path}: {exc}") from exc
    with fh:
        for line_no, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                continue
            token, values = parts[0], parts[1:]
            if len(values) != dim:
                raise DataError(
                    f"line {line_no}: expected {dim} values, found {len(values)}"
                )
            try:
                vectors[token] = np.array([float(v) for v in values])
            except ValueError as exc:
                raise DataError(f"line {line_no}: non-numeric value") from exc
    rng = np.random.default_rng(seed)
    table = np.zeros((len(vocab), dim))
    for token, idx in sorted(vocab.token_to_id.items(), key=lambda kv: kv[1]):
        table[idx] = vectors.get(token, _seeded_row(rng, dim))
    table[UNK_ID] = _seeded_row(rng, dim)
    table[PAD_ID] = 0.0
    return Tensor(table, requires_grad=True, name="embedding")
