import time
from pathlib import Path

import numpy as np
import pytest

from polyglot_ctc.cli import main
from polyglot_ctc.data import load_corpus, save_corpus
from polyglot_ctc.model import load_model


def write(path: Path, text: str) -> Path:
    path.write_text(text.strip() + "\n")
    return path


GEN = """
out = corpora
seed = 1
pool_seed = 7
feature_dim = 4
languages = A, B, T
lang.A.phones = 0,1,2,3,4
lang.A.utterances = 30
lang.B.phones = 0,1,2,5,6
lang.B.utterances = 30
lang.T.phones = 0,1,3,5
lang.T.utterances = 30
"""

TRAIN = """
epochs = 2
batch_size = 4
"""
SMALL = "hidden_dim = 6\nnum_layers = 1\n" + TRAIN


@pytest.fixture
def workdir(tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    monkeypatch.delenv("POLYGLOT_CTC_WORKERS", raising=False)
    assert main(["gen-synth", str(write(tmp_path / "gen.cfg", GEN))]) == 0
    return tmp_path


@pytest.fixture
def donor(workdir):
    cfg = write(workdir / "train.cfg", "out = donor\ncorpora = corpora/A, corpora/B\n" + SMALL)
    assert main(["train", str(cfg)]) == 0
    return workdir / "donor" / "model.pcm"


def tree_bytes(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_gen_synth_writes_each_language(workdir, capsys):
    assert sorted(p.name for p in (workdir / "corpora").iterdir()) == ["A", "B", "T"]
    assert len(load_corpus(workdir / "corpora" / "B")) == 30


def test_gen_synth_rerun_is_byte_identical(workdir):
    first = tree_bytes(workdir / "corpora")
    assert main(["gen-synth", "gen.cfg", "--out", "again"]) == 0
    assert tree_bytes(workdir / "again") == first


def test_gen_synth_duplicate_language(workdir, capsys):
    cfg = write(workdir / "dup.cfg", GEN.replace("A, B, T", "A, B, A"))
    assert main(["gen-synth", str(cfg)]) == 2
    assert "duplicate" in capsys.readouterr().err


def test_unknown_key_rejected(workdir, capsys):
    cfg = write(workdir / "bad.cfg", "out = x\ncorpora = corpora/A\nlearnign_rate = 0.1\n")
    assert main(["train", str(cfg)]) == 2
    assert "learnign_rate" in capsys.readouterr().err
    assert not (workdir / "x" / "model.pcm").exists()


def test_missing_config_and_corpus(workdir):
    assert main(["train", "nope.cfg"]) == 2
    cfg = write(workdir / "m.cfg", "out = x\ncorpora = corpora/ZZ\n")
    assert main(["train", str(cfg)]) == 2


def test_train_writes_model_and_curves(workdir, donor, capsys):
    curves = (workdir / "donor" / "curves.csv").read_text().splitlines()
    assert curves[0] == "epoch,language,mean_loss,dev_per"
    assert len(curves) == 1 + 2 * 2
    assert sorted(load_model(donor).heads) == ["A", "B"]


def test_train_rerun_is_byte_identical(workdir, donor):
    first = tree_bytes(workdir / "donor")
    assert main(["train", "train.cfg", "--out", "donor2"]) == 0
    assert tree_bytes(workdir / "donor2") == first


def test_workers_env_override(workdir, donor, monkeypatch):
    monkeypatch.setenv("POLYGLOT_CTC_WORKERS", "3")
    assert main(["train", "train.cfg", "--out", "donor3"]) == 0
    assert tree_bytes(workdir / "donor3") == tree_bytes(workdir / "donor")


def test_seed_override_changes_run(workdir, donor):
    assert main(["train", "train.cfg", "--out", "other", "--seed", "9"]) == 0
    assert (workdir / "other" / "model.pcm").read_bytes() != donor.read_bytes()


def test_adapt_softmax_keeps_encoder(workdir, donor):
    cfg = write(workdir / "adapt.cfg", f"out = ad\ndonor = {donor}\ntarget = corpora/T\nmode = adapt_softmax\n" + TRAIN)
    assert main(["adapt", str(cfg)]) == 0
    before, after = load_model(donor), load_model(workdir / "ad" / "model.pcm")
    assert after.languages == ["T"]
    for (name, a), (_, b) in zip(before.encoder.tensors(), after.encoder.tensors()):
        assert np.array_equal(a, b), name


def test_adapt_missing_donor(workdir):
    cfg = write(workdir / "adapt.cfg", "out = ad\ndonor = gone.pcm\ntarget = corpora/T\n")
    assert main(["adapt", str(cfg)]) == 2


def test_adapt_existing_language_rejected(workdir, donor):
    cfg = write(workdir / "adapt.cfg", f"out = ad\ndonor = {donor}\ntarget = corpora/A\n" + TRAIN)
    assert main(["adapt", str(cfg)]) == 2


def test_finetune(workdir, donor):
    cfg = write(workdir / "ft.cfg", f"out = ft\nmodel = {donor}\ncorpus = corpora/A\nlearning_rate = 0.2\n" + TRAIN)
    assert main(["finetune", str(cfg)]) == 0
    before, after = load_model(donor), load_model(workdir / "ft" / "model.pcm")
    assert np.array_equal(before.head("B").W, after.head("B").W)


def test_divergence_exit_code(workdir, capsys):
    cfg = write(workdir / "div.cfg", "out = dv\ncorpora = corpora/A\nlearning_rate = 1e308\ngrad_clip_norm = 1e308\n" + SMALL)
    assert main(["train", str(cfg)]) == 3
    assert "divergence" in capsys.readouterr().err


def test_eval_and_decode(workdir, donor, capsys):
    assert main(["eval", "--model", str(donor), "--corpus", "corpora/A", "--out", "ev"]) == 0
    out = capsys.readouterr().out
    assert "PER" in out and "S=" in out
    rows = (workdir / "ev" / "eval.tsv").read_text().splitlines()
    assert len(rows) == 31
    assert main(["decode", "--model", str(donor), "--corpus", "corpora/A", "--beam", "3", "--out", "ev"]) == 0
    assert len((workdir / "ev" / "hypotheses.tsv").read_text().splitlines()) == 30


def test_eval_errors(workdir, donor):
    assert main(["eval", "--model", str(donor), "--corpus", "corpora/A", "--language", "Q"]) == 2
    empty = load_corpus(workdir / "corpora" / "A").subset([])
    save_corpus(empty, workdir / "empty")
    assert main(["eval", "--model", str(donor), "--corpus", "empty"]) == 2


def test_sweep_grid(workdir, donor, capsys):
    other = workdir / "donor" / "copy.pcm"
    other.write_bytes(donor.read_bytes())
    cfg = write(
        workdir / "sweep.cfg",
        f"out = sw\ndonors = a:{donor}, b:{other}\ntarget = corpora/T\nfractions = 0.05,0.1,0.25,0.5,1.0\n" + SMALL,
    )
    assert main(["sweep", str(cfg)]) == 0
    rows = (workdir / "sw" / "sweep.csv").read_text().splitlines()
    assert rows[0] == "donor,mode,fraction,seed,dev_per,epochs,wall_seconds"
    assert len(rows) == 1 + 10 + 1
    assert "crossover" in capsys.readouterr().out
    bad = write(workdir / "bad.cfg", f"out = sw2\ndonors = a:{donor}\ntarget = corpora/T\nfractions = 0.5, 0.25\n")
    assert main(["sweep", str(bad)]) == 2


@pytest.mark.slow
def test_overfit_model_scores_training_corpus(workdir, capsys):
    cfg = write(
        workdir / "of.cfg",
        "out = of\ncorpora = corpora/A\ndev_corpora = corpora/A\nepochs = 40\nmin_epoch_batches = 20\n",
    )
    assert main(["train", str(cfg)]) == 0
    assert main(["eval", "--model", "of/model.pcm", "--corpus", "corpora/A", "--out", "of"]) == 0
    per = float(capsys.readouterr().out.split("PER ")[-1].split()[0])
    assert per < 0.05


@pytest.mark.slow
def test_noiseless_dedicated_prototypes_reach_zero(workdir, capsys):
    gen = write(
        workdir / "clean.cfg",
        "out = clean\npool_seed = 3\nfeature_dim = 6\nlanguages = Z\nlang.Z.phones = 0,1,2,3\n"
        "lang.Z.utterances = 40\nlang.Z.noise_std = 0\n",
    )
    assert main(["gen-synth", str(gen)]) == 0
    cfg = write(workdir / "z.cfg", "out = z\ncorpora = clean/Z\ndev_corpora = clean/Z\nepochs = 30\nhidden_dim = 16\n")
    assert main(["train", str(cfg)]) == 0
    assert main(["eval", "--model", "z/model.pcm", "--corpus", "clean/Z", "--out", "z"]) == 0
    assert "PER 0.0000" in capsys.readouterr().out


@pytest.mark.slow
def test_monolingual_train_time(workdir):
    gen = write(workdir / "mono.cfg", "out = mono\npool_seed = 7\nlanguages = L\nlang.L.phones = 0,1,2,3,4,5,6,7,8,9\n")
    assert main(["gen-synth", str(gen)]) == 0
    cfg = write(workdir / "t.cfg", "out = t\ncorpora = mono/L\n")
    start = time.perf_counter()
    assert main(["train", str(cfg)]) == 0
    assert time.perf_counter() - start < 300
    assert (workdir / "t" / "model.pcm").exists() and (workdir / "t" / "curves.csv").exists()
