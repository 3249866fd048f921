"""Multi-task sequence classifier with a sharpened-attention branch.

Architecture: embedding lookup feeds two parallel branches. A recurrent
branch (bi- or uni-directional GRU or LSTM) produces a fixed context
vector from its final states. An attention branch scores token pairs,
optionally sharpens the attention distribution with a learned per-row
gain and offset (amplify what clears the offset, rectify, renormalize),
projects tokens through a value map, and pools positions by a softmax
over component sums. Each task then fuses context + pooled vector
through its own square linear map and a softmax head over the label
order (-1, 0, 1).

The sharpening parameters are kept meaningful by loss penalties (see
training.multitask_loss) rather than clamping, so their shapes and the
forward pass stay identical whether or not constraints are active.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, fields

import numpy as np

from undertone import autodiff as ad
from undertone import kernels
from undertone.autodiff import Tape, Tensor
from undertone.data import PAD_ID, TASKS

CHECKPOINT_VERSION = 1

ATTENTION_KINDS = ("sharpened", "plain")
RECURRENT_KINDS = ("gru", "lstm")
DIRECTION_KINDS = ("bi", "uni")
ATTENTION_SOURCES = ("embedding", "rnn")

# ablation family: CLI variant token -> config overrides
VARIANTS = {
    "sasicm": {},
    "sa": {"attention": "plain"},
    "lstm": {"recurrent": "lstm"},
    "wc": {"constraints_enabled": False},
    "sg": {"directions": "uni"},
    "st": {"attention_source": "rnn"},
}


@dataclass
class ModelConfig:
    d_e: int = 300
    d_h: int = 128
    attention: str = "sharpened"
    recurrent: str = "gru"
    directions: str = "bi"
    attention_source: str = "embedding"
    tasks: tuple = TASKS
    constraints_enabled: bool = True
    dropout: float = 0.1
    epsilon: float = 3e-3
    alpha: float = 1e-2
    w_thr: float = 5.0

    def __post_init__(self):
        self.tasks = tuple(self.tasks)
        if "subtext" not in self.tasks:
            raise ValueError("'subtext' is the primary task and must be present")
        if any(t not in TASKS for t in self.tasks):
            raise ValueError(f"tasks must come from {TASKS}, got {self.tasks}")
        if len(set(self.tasks)) != len(self.tasks):
            raise ValueError("duplicate task")
        if self.d_e < 1 or self.d_h < 1:
            raise ValueError("d_e and d_h must be >= 1")
        if self.attention not in ATTENTION_KINDS:
            raise ValueError(f"attention must be one of {ATTENTION_KINDS}")
        if self.recurrent not in RECURRENT_KINDS:
            raise ValueError(f"recurrent must be one of {RECURRENT_KINDS}")
        if self.directions not in DIRECTION_KINDS:
            raise ValueError(f"directions must be one of {DIRECTION_KINDS}")
        if self.attention_source not in ATTENTION_SOURCES:
            raise ValueError(f"attention_source must be one of {ATTENTION_SOURCES}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.epsilon <= 0 or self.alpha < 0 or self.w_thr <= 0:
            raise ValueError("epsilon and w_thr must be positive, alpha >= 0")

    @property
    def rnn_width(self) -> int:
        return 2 * self.d_h if self.directions == "bi" else self.d_h

    @property
    def attention_width(self) -> int:
        return self.d_e if self.attention_source == "embedding" else self.rnn_width

    @property
    def fused_width(self) -> int:
        return self.rnn_width + self.attention_width

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["tasks"] = list(self.tasks)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def apply_variant(config: ModelConfig, variant: str) -> ModelConfig:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
    d = config.to_dict()
    d.update(VARIANTS[variant])
    return ModelConfig.from_dict(d)


def _glorot(rng, shape):
    limit = math.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-limit, limit, size=shape)


_GATES = {"gru": ("reset", "update", "cand"), "lstm": ("in", "forget", "out", "cell")}


@dataclass
class ParameterStore:
    tensors: dict
    fixing_length: int
    config: ModelConfig = field(repr=False, default=None)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self.tensors

    def items(self):
        return self.tensors.items()

    def zero_grads(self):
        for t in self.tensors.values():
            t.zero_grad()

    def mask_pad_row_grad(self):
        """The pad embedding stays frozen at zero; drop any gradient on it."""
        g = self.tensors["embedding"].grad
        if g is not None:
            g[PAD_ID] = 0.0

    def n_parameters(self) -> int:
        return sum(t.data.size for t in self.tensors.values())

    @classmethod
    def create(cls, config: ModelConfig, vocab_size: int, fixing_length: int,
               seed: int = 0, embedding: Tensor | None = None) -> "ParameterStore":
        if fixing_length < 1:
            raise ValueError("fixing_length must be >= 1")
        rng = np.random.default_rng(seed)
        t = {}
        if embedding is None:
            table = rng.uniform(-0.05, 0.05, size=(vocab_size, config.d_e))
            table[PAD_ID] = 0.0
            t["embedding"] = Tensor(table, requires_grad=True, name="embedding")
        else:
            if embedding.data.shape != (vocab_size, config.d_e):
                raise ValueError(
                    f"embedding shape {embedding.data.shape} does not match "
                    f"({vocab_size}, {config.d_e})"
                )
            t["embedding"] = embedding

        a = config.attention_width
        t["att_query"] = Tensor(_glorot(rng, (a, config.d_h)), requires_grad=True)
        t["att_key"] = Tensor(_glorot(rng, (a, config.d_h)), requires_grad=True)
        t["att_value"] = Tensor(_glorot(rng, (a, a)), requires_grad=True)
        if config.attention == "sharpened":
            # start exactly on the constraint boundary: zero penalty, and the
            # sharpening stage reduces to a gentle amplification from step 1
            t["att_gain"] = Tensor(np.full(fixing_length, config.w_thr),
                                   requires_grad=True)
            t["att_offset"] = Tensor(np.full(fixing_length, config.epsilon),
                                     requires_grad=True)

        k_in = config.d_h + config.d_e
        directions = ("fwd", "bwd") if config.directions == "bi" else ("fwd",)
        for direction in directions:
            for gate in _GATES[config.recurrent]:
                name = f"{config.recurrent}_{direction}_{gate}"
                t[name] = Tensor(_glorot(rng, (k_in, config.d_h)), requires_grad=True)

        f = config.fused_width
        for task in config.tasks:
            t[f"fuse_{task}"] = Tensor(_glorot(rng, (f, f)), requires_grad=True)
            t[f"head_{task}_w"] = Tensor(_glorot(rng, (3, f)), requires_grad=True)
            t[f"head_{task}_b"] = Tensor(np.zeros(3), requires_grad=True)
        return cls(tensors=t, fixing_length=fixing_length, config=config)

    # ------------------------------------------------------------ checkpoints

    def save(self, path):
        payload = {
            "format_version": CHECKPOINT_VERSION,
            "fixing_length": self.fixing_length,
            "config": self.config.to_dict(),
            "params": {
                name: {"shape": list(t.data.shape),
                       "data": t.data.reshape(-1).tolist()}
                for name, t in sorted(self.tensors.items())
            },
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)

    @classmethod
    def load(cls, path) -> "ParameterStore":
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        version = payload.get("format_version")
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version!r}")
        config = ModelConfig.from_dict(payload["config"])
        tensors = {}
        for name, entry in payload["params"].items():
            shape = tuple(entry["shape"])
            data = np.array(entry["data"]).reshape(shape)
            tensors[name] = Tensor(data, requires_grad=True, name=name)
        return cls(tensors=tensors, fixing_length=payload["fixing_length"],
                   config=config)


@dataclass
class ForwardOutput:
    probs: dict           # task -> Tensor [B, 3]
    attention: Tensor     # [B, L, L]
    pooled: Tensor        # [B, attention_width]
    context: Tensor       # [B, rnn_width]
    fused: dict           # task -> Tensor [B, fused_width]


def length_mask(lengths, L: int) -> np.ndarray:
    return np.arange(L)[None, :] < np.asarray(lengths)[:, None]


def attention_branch(tape, source: Tensor, lengths, params: ParameterStore,
                     config: ModelConfig):
    """Score, (optionally) sharpen, and pool: returns (pooled, attention)."""
    B, L, _ = source.data.shape
    mask = length_mask(lengths, L)
    if not mask.any(axis=1).all():
        raise ValueError("attention: an example has no unmasked positions")
    key_mask = mask[:, None, :]  # broadcast over query rows

    q = ad.matmul(tape, source, params["att_query"])
    k = ad.matmul(tape, source, params["att_key"])
    scores = ad.scale(tape, ad.matmul(tape, q, k, transpose_b=True),
                      1.0 / math.sqrt(config.d_h))
    base = ad.row_softmax(tape, scores, mask=key_mask)

    if config.attention == "sharpened":
        gain = ad.reshape(tape, params["att_gain"], (L, 1))
        offset = ad.reshape(tape, params["att_offset"], (L, 1))
        sharpened = ad.mul(tape, gain, ad.sub(tape, base, offset))
        att = ad.row_softmax(tape, ad.relu(tape, sharpened), mask=key_mask)
    else:
        att = base

    values = ad.matmul(tape, source, params["att_value"])
    r = ad.matmul(tape, att, values)                  # [B, L, A] per-position
    pool_scores = ad.sum_axis(tape, r, axis=2)        # [B, L]
    weights = ad.row_softmax(tape, pool_scores, mask=mask)
    pooled = ad.matmul(tape, ad.reshape(tape, weights, (B, 1, L)), r)
    pooled = ad.reshape(tape, pooled, (B, r.data.shape[2]))
    return pooled, att


def recurrent_branch(tape, E: Tensor, lengths, params: ParameterStore,
                     config: ModelConfig):
    """Run the configured scan(s); returns (context, per-position states)."""
    lengths = np.asarray(lengths, dtype=np.int64)
    layer = kernels.gru_layer if config.recurrent == "gru" else kernels.lstm_layer
    gates = _GATES[config.recurrent]

    def run(direction, x):
        ws = [params[f"{config.recurrent}_{direction}_{g}"] for g in gates]
        return layer(tape, x, lengths, *ws)

    h_fwd = run("fwd", E)
    final_fwd = ad.select_time(tape, h_fwd, lengths - 1)
    if config.directions == "uni":
        return final_fwd, h_fwd

    reversed_E = ad.reverse_padded(tape, E, lengths)
    h_bwd = run("bwd", reversed_E)
    final_bwd = ad.select_time(tape, h_bwd, lengths - 1)
    context = ad.concat_last_axis(tape, final_fwd, final_bwd)
    aligned_bwd = ad.reverse_padded(tape, h_bwd, lengths)
    states = ad.concat_last_axis(tape, h_fwd, aligned_bwd)
    return context, states


def feature_fusion(tape, context: Tensor, pooled: Tensor, task: str,
                   params: ParameterStore, config: ModelConfig,
                   train: bool = False, rng=None) -> Tensor:
    if task not in config.tasks:
        raise ValueError(f"task {task!r} not in configured tasks {config.tasks}")
    joined = ad.concat_last_axis(tape, context, pooled)
    joined = ad.dropout(tape, joined, config.dropout, train, rng)
    return ad.matmul(tape, joined, params[f"fuse_{task}"])


def predict(tape, fused: Tensor, task: str, params: ParameterStore) -> Tensor:
    logits = ad.matmul(tape, fused, params[f"head_{task}_w"], transpose_b=True)
    logits = ad.add(tape, logits, params[f"head_{task}_b"])
    return ad.row_softmax(tape, logits)


def forward(tape, params: ParameterStore, ids, lengths, config: ModelConfig,
            train: bool = False, rng=None) -> ForwardOutput:
    ids = np.asarray(ids)
    lengths = np.asarray(lengths, dtype=np.int64)
    if ids.ndim != 2 or ids.shape[1] != params.fixing_length:
        raise ValueError(
            f"ids must be [batch, {params.fixing_length}], got {list(ids.shape)}"
        )
    if train and config.dropout > 0.0 and rng is None:
        raise ValueError("train-mode forward needs an rng for dropout")

    E = ad.embedding_lookup(tape, params["embedding"], ids)
    E = ad.dropout(tape, E, config.dropout, train, rng)
    context, states = recurrent_branch(tape, E, lengths, params, config)
    source = E if config.attention_source == "embedding" else states
    pooled, attention = attention_branch(tape, source, lengths, params, config)

    fused = {}
    probs = {}
    for task in config.tasks:
        fused[task] = feature_fusion(tape, context, pooled, task, params,
                                     config, train, rng)
        probs[task] = predict(tape, fused[task], task, params)
    return ForwardOutput(probs=probs, attention=attention, pooled=pooled,
                         context=context, fused=fused)


def predicted_labels(prob_data: np.ndarray) -> np.ndarray:
    """Class order is (-1, 0, 1), so argmax index minus 1."""
    return prob_data.argmax(axis=1) - 1


def attention_source_vectors(params: ParameterStore, ids, lengths,
                             config: ModelConfig) -> np.ndarray:
    """Eval-mode vectors the attention branch would consume, [B, L', A]."""
    ids = np.asarray(ids)
    lengths = np.asarray(lengths, dtype=np.int64)
    E = ad.embedding_lookup(None, params["embedding"], ids)
    if config.attention_source == "embedding":
        return E.data
    _, states = recurrent_branch(None, E, lengths, params, config)
    return states.data
