"""Command-line surface: data generation, training, evaluation, diagnostics."""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .autodiff import NonFiniteError
from .data import (DataError, Vocabulary, build_vocabulary,
                   compute_fixing_length, encode_example,
                   generate_synthetic_corpus, load_corpus, load_embeddings,
                   save_corpus, stratified_split, tokenize)
from .evaluation import evaluate_model
from .model import VARIANTS, ModelConfig, ParameterStore, apply_variant
from .reliability import ReliabilityCurve, simulate_reliability
from .training import TrainConfig, cross_validate, gradient_check, train

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

TOKEN_MODES = ("char-cjk", "whitespace")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    train: TrainConfig
    mode: str
    variant: str


def load_run_config(path=None, variant: str = "sasicm",
                    tasks=None) -> RunConfig:
    raw = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = json.load(fh)
        except OSError as exc:
            raise DataError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ValueError(f"config {path}: malformed JSON ({exc.msg})")
        if not isinstance(raw, dict):
            raise ValueError("config file must hold a JSON object")
    unknown = set(raw) - {"model", "train", "mode"}
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    mode = raw.get("mode", "char-cjk")
    if mode not in TOKEN_MODES:
        raise ValueError(f"mode must be one of {TOKEN_MODES}, got {mode!r}")
    model_dict = dict(raw.get("model", {}))
    if tasks:
        model_dict["tasks"] = tuple(tasks)
    model = ModelConfig.from_dict(model_dict)
    model = apply_variant(model, variant)
    train_cfg = TrainConfig.from_dict(dict(raw.get("train", {})))
    return RunConfig(model=model, train=train_cfg, mode=mode, variant=variant)


def write_manifest(out_dir: Path, command: str, run: RunConfig, **extra):
    payload = {
        "version": __version__,
        "command": command,
        "variant": run.variant,
        "mode": run.mode,
        "seed": run.train.seed,
        "model": run.model.to_dict(),
        "train": run.train.to_dict(),
    }
    payload.update(extra)
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_vocab(vocab: Vocabulary, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"fixing_length": vocab.fixing_length,
                   "token_to_id": vocab.token_to_id}, fh)


def load_vocab(path) -> Vocabulary:
    try:
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read vocabulary {path}: {exc}") from exc
    return Vocabulary(token_to_id=payload["token_to_id"],
                      fixing_length=payload["fixing_length"])


def _parse_floats(text: str, flag: str):
    try:
        return [float(v) for v in text.split(",") if v.strip() != ""]
    except ValueError:
        raise ValueError(f"{flag} expects comma-separated numbers, got {text!r}")


def _parse_grid(text: str):
    """Either comma-separated levels or start:stop:count."""
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise ValueError(f"grid {text!r} must be start:stop:count")
        start, stop = float(parts[0]), float(parts[1])
        count = int(parts[2])
        if count < 1:
            raise ValueError("grid count must be >= 1")
        return [float(v) for v in np.linspace(start, stop, count)]
    return _parse_floats(text, "--agreement-grid")


# ----------------------------------------------------------------- commands

def cmd_data_gen(args) -> int:
    imbalance = None
    if args.imbalance is not None:
        probs = _parse_floats(args.imbalance, "--imbalance")
        if len(probs) != 3:
            raise ValueError("--imbalance needs exactly three probabilities")
        from .data import DEFAULT_IMBALANCE
        imbalance = dict(DEFAULT_IMBALANCE)
        imbalance["subtext"] = tuple(probs)
    corpus = generate_synthetic_corpus(
        args.n, imbalance=imbalance, cue_strength=args.cue_strength,
        vocab_size=args.vocab_size, seed=args.seed,
        correlation=args.correlation)
    save_corpus(corpus, args.out)
    print(f"wrote {len(corpus)} examples to {args.out}")
    return EXIT_OK


def _prepare_corpus(corpus, run: RunConfig):
    if not corpus:
        raise DataError("corpus is empty")
    token_lists = [tokenize(ex.text, run.mode) for ex in corpus]
    fixing_length = compute_fixing_length([len(t) for t in token_lists])
    vocab = build_vocabulary(token_lists, fixing_length)
    return vocab, fixing_length


def cmd_train(args) -> int:
    run = load_run_config(args.config, args.variant, _tasks(args))
    corpus = load_corpus(args.corpus)
    vocab, fixing_length = _prepare_corpus(corpus, run)
    tr, val, _ = stratified_split(corpus, test_fraction=0.0,
                                  val_fraction=run.train.val_fraction,
                                  seed=run.train.seed)
    enc_tr = [encode_example(ex, vocab, run.mode) for ex in tr]
    enc_val = [encode_example(ex, vocab, run.mode) for ex in val]
    embedding = None
    if args.embeddings is not None:
        embedding = load_embeddings(args.embeddings, run.model.d_e, vocab,
                                    seed=run.train.seed)
    store, history = train(run.model, enc_tr, enc_val, run.train,
                           vocab_size=len(vocab), fixing_length=fixing_length,
                           embedding=embedding)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    store.save(out / "checkpoint.json")
    save_vocab(vocab, out / "vocab.json")
    (out / "history.csv").write_text(history.to_csv(), encoding="utf-8")
    write_manifest(out, "train", run, corpus=str(args.corpus),
                   embeddings=str(args.embeddings) if args.embeddings else None,
                   epochs_run=history.epochs_run,
                   stop_reason=history.stop_reason,
                   best_epoch=history.best_epoch)
    best = max(history.val_weighted_f1)
    print(f"trained {history.epochs_run} epochs ({history.stop_reason}); "
          f"best val weighted-F1 {best:.4f} at epoch {history.best_epoch}")
    return EXIT_OK


def cmd_eval(args) -> int:
    model_dir = Path(args.model_dir)
    store = ParameterStore.load(model_dir / "checkpoint.json")
    vocab = load_vocab(model_dir / "vocab.json")
    try:
        with open(model_dir / "manifest.json", encoding="utf-8") as fh:
            mode = json.load(fh).get("mode", "char-cjk")
    except OSError:
        mode = "char-cjk"
    corpus = load_corpus(args.corpus)
    if not corpus:
        raise DataError("corpus is empty")
    encoded = [encode_example(ex, vocab, mode) for ex in corpus]
    reports = evaluate_model(store, store.config, encoded)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["task,precision,recall,weighted_f1,accuracy"]
    for task in store.config.tasks:
        r = reports[task]
        lines.append(f"{task},{r.precision:.6f},{r.recall:.6f},"
                     f"{r.weighted_f1:.6f},{r.accuracy:.6f}")
        print(lines[-1])
    (out / "report.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return EXIT_OK


def cmd_cv(args) -> int:
    run = load_run_config(args.config, args.variant, _tasks(args))
    corpus = load_corpus(args.corpus)
    summary = cross_validate(corpus, run.model, run.train, mode=run.mode)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "cv.csv").write_text(summary.to_csv(), encoding="utf-8")
    write_manifest(out, "cv", run, corpus=str(args.corpus),
                   runs=summary.runs)
    print(f"{summary.runs} runs aggregated; see {out / 'cv.csv'}")
    return EXIT_OK


def cmd_simulate_tae(args) -> int:
    pos_rates = _parse_floats(args.pos_rates, "--pos-rates")
    levels = _parse_grid(args.agreement_grid)
    if not pos_rates or any(not 0.0 < p < 1.0 for p in pos_rates):
        raise ValueError(f"--pos-rates must lie strictly in (0, 1): {pos_rates}")
    rows = []
    for pos_rate in pos_rates:
        curve = simulate_reliability(pos_rate, levels, n_items=args.n_items,
                                     seed=args.seed)
        rows.extend(curve.rows)
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(ReliabilityCurve(rows=rows).to_csv())
    print(f"wrote {len(rows)} curve points to {args.out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    dims = [int(v) for v in args.dims.split(",")]
    if len(dims) != 3:
        raise ValueError("--dims expects L,d_e,d_h")
    L, d_e, d_h = dims
    if L < 1 or d_e < 1 or d_h < 1:
        raise ValueError("--dims must be positive")
    if L > 8 or d_e > 16:
        raise ValueError(
            f"refusing dims L={L}, d_e={d_e}: the check is meant for small "
            "instances (L <= 8, d_e <= 16)"
        )
    err = gradient_check(L=L, d_e=d_e, d_h=d_h, seed=args.seed)
    ok = err < 1e-4
    print(f"max relative error {err:.3e}: {'pass' if ok else 'FAIL'}")
    return EXIT_OK if ok else 1


# -------------------------------------------------------------------- main

def _tasks(args):
    if args.tasks is None:
        return None
    tasks = tuple(t.strip() for t in args.tasks.split(",") if t.strip())
    if not tasks:
        raise ValueError("--tasks must name at least one task")
    return tasks


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="undertone",
        description="Implicit-text multi-task classifier toolkit")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("data-gen", help="write a planted-cue synthetic corpus")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--imbalance", default=None,
                   help="subtext class probabilities 'p1,p0,p-1' summing to 1")
    g.add_argument("--cue-strength", type=float, default=0.9)
    g.add_argument("--correlation", type=float, default=0.5)
    g.add_argument("--vocab-size", type=int, default=200)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(handler=cmd_data_gen)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None,
                        help="JSON file with model/train/mode sections")
    common.add_argument("--corpus", required=True)
    common.add_argument("--variant", default="sasicm",
                        choices=sorted(VARIANTS))
    common.add_argument("--tasks", default=None,
                        help="comma-separated subset, e.g. 'subtext'")
    common.add_argument("--out-dir", required=True)

    t = sub.add_parser("train", parents=[common],
                       help="train one model on a corpus")
    t.add_argument("--embeddings", default=None,
                   help="text file of token vectors to warm-start from")
    t.set_defaults(handler=cmd_train)

    e = sub.add_parser("eval", help="score a trained model on a corpus")
    e.add_argument("--model-dir", required=True,
                   help="output directory of a previous train run")
    e.add_argument("--corpus", required=True)
    e.add_argument("--out-dir", required=True)
    e.set_defaults(handler=cmd_eval)

    c = sub.add_parser("cv", parents=[common],
                       help="repeated stratified cross-validation")
    c.set_defaults(handler=cmd_cv)

    s = sub.add_parser("simulate-tae",
                       help="agreement-sweep curves for the reliability score")
    s.add_argument("--pos-rates", default="0.05,0.1,0.2,0.5")
    s.add_argument("--agreement-grid", default="0.0:1.0:21")
    s.add_argument("--n-items", type=int, default=10000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(handler=cmd_simulate_tae)

    d = sub.add_parser("gradcheck",
                       help="finite-difference audit of the tape gradients")
    d.add_argument("--dims", default="5,8,4", help="L,d_e,d_h")
    d.add_argument("--seed", type=int, default=1)
    d.set_defaults(handler=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except NonFiniteError as exc:
        print(f"numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
