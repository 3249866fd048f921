import json

import numpy as np
import pytest

from undertone.cli import main
from undertone.data import load_corpus
from undertone.model import ParameterStore


def write_config(path, **sections):
    path.write_text(json.dumps(sections), encoding="utf-8")
    return str(path)


def gen_corpus(tmp_path, n=60, name="corpus.jsonl", seed=0):
    out = tmp_path / name
    code = main(["data-gen", "--n", str(n), "--seed", str(seed),
                 "--imbalance", "0.5,0.2,0.3", "--cue-strength", "1.0",
                 "--vocab-size", "30", "--out", str(out)])
    assert code == 0
    return str(out)


SMALL_MODEL = {"d_e": 8, "d_h": 4, "dropout": 0.1}
SMALL_TRAIN = {"max_epochs": 2, "patience": 2, "batch_size": 16, "seed": 7}


# ----------------------------------------------------------------- data-gen

def test_data_gen_n_zero_writes_empty_file(tmp_path):
    out = tmp_path / "empty.jsonl"
    assert main(["data-gen", "--n", "0", "--out", str(out)]) == 0
    assert out.read_text() == ""


def test_data_gen_rejects_bad_imbalance(tmp_path, capsys):
    out = tmp_path / "x.jsonl"
    code = main(["data-gen", "--n", "5", "--imbalance", "0.9,0.9,0.9",
                 "--out", str(out)])
    assert code == 2
    assert "sum" in capsys.readouterr().err


def test_data_gen_deterministic(tmp_path):
    a = gen_corpus(tmp_path, n=25, name="a.jsonl", seed=3)
    b = gen_corpus(tmp_path, n=25, name="b.jsonl", seed=3)
    assert open(a).read() == open(b).read()
    c = gen_corpus(tmp_path, n=25, name="c.jsonl", seed=4)
    assert open(a).read() != open(c).read()


# -------------------------------------------------------------------- train

def test_train_writes_artifacts_and_manifest(tmp_path):
    corpus = gen_corpus(tmp_path)
    cfg = write_config(tmp_path / "cfg.json", model=SMALL_MODEL,
                       train=SMALL_TRAIN)
    out = tmp_path / "run"
    code = main(["train", "--config", cfg, "--corpus", corpus,
                 "--out-dir", str(out)])
    assert code == 0
    for artifact in ("checkpoint.json", "vocab.json", "history.csv",
                     "manifest.json"):
        assert (out / artifact).exists()
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 7
    assert manifest["variant"] == "sasicm"
    assert manifest["model"]["d_e"] == 8
    assert manifest["version"]
    history = (out / "history.csv").read_text().strip().split("\n")
    assert history[0].startswith("epoch,")
    assert len(history) == manifest["epochs_run"] + 1


def test_train_same_seed_identical_history(tmp_path):
    corpus = gen_corpus(tmp_path)
    cfg = write_config(tmp_path / "cfg.json", model=SMALL_MODEL,
                       train=SMALL_TRAIN)
    outs = []
    for name in ("r1", "r2"):
        out = tmp_path / name
        assert main(["train", "--config", cfg, "--corpus", corpus,
                     "--out-dir", str(out)]) == 0
        outs.append((out / "history.csv").read_bytes())
    assert outs[0] == outs[1]


def test_train_uni_task_and_variant(tmp_path):
    corpus = gen_corpus(tmp_path)
    cfg = write_config(tmp_path / "cfg.json", model=SMALL_MODEL,
                       train=SMALL_TRAIN)
    out = tmp_path / "uni"
    code = main(["train", "--config", cfg, "--corpus", corpus,
                 "--tasks", "subtext", "--variant", "wc",
                 "--out-dir", str(out)])
    assert code == 0
    store = ParameterStore.load(out / "checkpoint.json")
    assert store.config.tasks == ("subtext",)
    assert store.config.constraints_enabled is False
    assert "fuse_subtext" in store and "fuse_sarcasm" not in store


def test_train_missing_corpus_exits_3(tmp_path, capsys):
    cfg = write_config(tmp_path / "cfg.json", model=SMALL_MODEL,
                       train=SMALL_TRAIN)
    code = main(["train", "--config", cfg, "--corpus",
                 str(tmp_path / "nope.jsonl"), "--out-dir",
                 str(tmp_path / "o")])
    assert code == 3
    assert "data error" in capsys.readouterr().err


def test_train_unknown_config_keys_exit_2(tmp_path, capsys):
    corpus = gen_corpus(tmp_path)
    bad_section = write_config(tmp_path / "a.json", optimizer={"lr": 1})
    assert main(["train", "--config", bad_section, "--corpus", corpus,
                 "--out-dir", str(tmp_path / "o1")]) == 2
    bad_key = write_config(tmp_path / "b.json",
                           model={"d_e": 8, "depth": 2})
    assert main(["train", "--config", bad_key, "--corpus", corpus,
                 "--out-dir", str(tmp_path / "o2")]) == 2
    bad_task = write_config(tmp_path / "c.json", model=SMALL_MODEL)
    assert main(["train", "--config", bad_task, "--corpus", corpus,
                 "--tasks", "sarcasm", "--out-dir",
                 str(tmp_path / "o3")]) == 2
    err = capsys.readouterr().err
    assert "config error" in err


@pytest.mark.filterwarnings("ignore:overflow")
def test_train_numeric_abort_exits_4(tmp_path, capsys):
    corpus = gen_corpus(tmp_path, n=40)
    cfg = write_config(tmp_path / "cfg.json", model=SMALL_MODEL,
                       train=SMALL_TRAIN)
    # warm-start vectors far outside float range blow up the first matmul
    examples = load_corpus(corpus)
    tokens = sorted({t for ex in examples for t in ex.text.split()})
    emb = tmp_path / "huge.vec"
    emb.write_text("\n".join(
        f"{tok} " + " ".join(["1e200"] * 8) for tok in tokens))
    code = main(["train", "--config", cfg, "--corpus", corpus,
                 "--embeddings", str(emb), "--out-dir", str(tmp_path / "o")])
    assert code == 4
    assert "numeric abort" in capsys.readouterr().err


# --------------------------------------------------------------------- eval

def test_eval_reports_all_tasks(tmp_path, capsys):
    corpus = gen_corpus(tmp_path)
    cfg = write_config(tmp_path / "cfg.json", model=SMALL_MODEL,
                       train=SMALL_TRAIN)
    run = tmp_path / "run"
    assert main(["train", "--config", cfg, "--corpus", corpus,
                 "--out-dir", str(run)]) == 0
    out = tmp_path / "eval"
    code = main(["eval", "--model-dir", str(run), "--corpus", corpus,
                 "--out-dir", str(out)])
    assert code == 0
    lines = (out / "report.csv").read_text().strip().split("\n")
    assert lines[0] == "task,precision,recall,weighted_f1,accuracy"
    assert len(lines) == 4
    for line in lines[1:]:
        parts = line.split(",")
        assert parts[0] in ("subtext", "sarcasm", "metaphor")
        assert all(0.0 <= float(v) <= 1.0 for v in parts[1:])


def test_eval_missing_checkpoint_exits_3(tmp_path):
    corpus = gen_corpus(tmp_path)
    code = main(["eval", "--model-dir", str(tmp_path / "ghost"),
                 "--corpus", corpus, "--out-dir", str(tmp_path / "o")])
    assert code == 3


# ----------------------------------------------------------------------- cv

def test_cv_counts_and_writes_summary(tmp_path):
    corpus = gen_corpus(tmp_path, n=80)
    cfg = write_config(tmp_path / "cfg.json",
                       model={"d_e": 8, "d_h": 4, "dropout": 0.0},
                       train={"max_epochs": 1, "patience": 1,
                              "batch_size": 32, "seed": 5, "folds": 2,
                              "repeats": 2})
    out = tmp_path / "cv"
    assert main(["cv", "--config", cfg, "--corpus", corpus,
                 "--out-dir", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["runs"] == 4
    lines = (out / "cv.csv").read_text().strip().split("\n")
    assert lines[0] == "task,metric,mean,std"
    assert len(lines) == 1 + 3 * 2


# --------------------------------------------------------------- simulate-tae

def test_simulate_tae_perfect_agreement_rows(tmp_path):
    out = tmp_path / "curve.csv"
    code = main(["simulate-tae", "--pos-rates", "0.2,0.5",
                 "--agreement-grid", "1.0", "--n-items", "150",
                 "--out", str(out)])
    assert code == 0
    lines = out.read_text().strip().split("\n")
    assert lines[0] == "agreement,pos_rate,kappa,accuracy,tae"
    assert len(lines) == 3
    for line in lines[1:]:
        _, _, kappa, accuracy, tae = (float(v) for v in line.split(","))
        assert kappa == accuracy == tae == 1.0


def test_simulate_tae_deterministic_bytes(tmp_path):
    args = ["simulate-tae", "--pos-rates", "0.1", "--agreement-grid",
            "0.5:1.0:4", "--n-items", "120", "--seed", "9"]
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert main(args + ["--out", str(a)]) == 0
    assert main(args + ["--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_simulate_tae_invalid_grid_exits_2(tmp_path, capsys):
    out = tmp_path / "x.csv"
    assert main(["simulate-tae", "--agreement-grid", "0.5,1.5",
                 "--out", str(out)]) == 2
    assert main(["simulate-tae", "--pos-rates", "0.0",
                 "--agreement-grid", "1.0", "--out", str(out)]) == 2
    assert "config error" in capsys.readouterr().err


# ---------------------------------------------------------------- gradcheck

def test_gradcheck_default_passes(capsys):
    assert main(["gradcheck"]) == 0
    assert "pass" in capsys.readouterr().out


def test_gradcheck_refuses_large_dims(capsys):
    assert main(["gradcheck", "--dims", "9,8,4"]) == 2
    assert main(["gradcheck", "--dims", "5,32,4"]) == 2
    assert "refusing" in capsys.readouterr().err


def test_gradcheck_deterministic(capsys):
    assert main(["gradcheck", "--dims", "4,6,3", "--seed", "4"]) in (0, 1)
    first = capsys.readouterr().out
    main(["gradcheck", "--dims", "4,6,3", "--seed", "4"])
    assert capsys.readouterr().out == first


# ------------------------------------------------------------------- parser

def test_unknown_subcommand_is_an_argparse_error():
    with pytest.raises(SystemExit):
        main(["frobnicate"])


def test_version_flag_reports(capsys):
    with pytest.raises(SystemExit):
        main(["--version"])
    assert capsys.readouterr().out.strip()
