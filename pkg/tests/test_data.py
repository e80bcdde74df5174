import numpy as np
import pytest

from polyglot_ctc.data import (
    CorpusFormatError,
    SynthLanguageSpec,
    Utterance,
    gen_synth_corpus,
    load_corpus,
    prototype_pool,
    save_corpus,
    select_fraction,
    split_dev,
)


def small_spec(**kw):
    base = dict(language_id="L1", phone_indices=[0, 1, 2, 3], num_utterances=12, seed=4)
    base.update(kw)
    return SynthLanguageSpec(**base)


def test_noiseless_frames_are_prototypes():
    spec = small_spec(noise_std=0.0, frames_per_phone=(1, 1))
    corpus = gen_synth_corpus(spec, pool_seed=9)
    pool = prototype_pool(9, spec.pool_size, spec.feature_dim)
    for u in corpus.utterances:
        assert u.num_frames == len(u.labels)
        # nearest-prototype classification over the language's phones is exact
        protos = pool[spec.phone_indices]
        d = ((u.features[:, None, :] - protos[None]) ** 2).sum(axis=2)
        assert (np.argmin(d, axis=1) + 1).tolist() == u.labels
        np.testing.assert_array_equal(u.features, protos[np.array(u.labels) - 1])


def test_generator_is_deterministic():
    a = gen_synth_corpus(small_spec(), 3)
    b = gen_synth_corpus(small_spec(), 3)
    for x, y in zip(a.utterances, b.utterances):
        assert x.features.tobytes() == y.features.tobytes() and x.labels == y.labels


def test_shared_phones_share_prototypes():
    a = gen_synth_corpus(small_spec(language_id="A", phone_indices=[0, 1, 2, 3], noise_std=0.0, frames_per_phone=(1, 1)), 1)
    b = gen_synth_corpus(
        small_spec(language_id="B", phone_indices=[2, 3, 7, 8], noise_std=0.0, frames_per_phone=(1, 1), seed=5), 1
    )
    rows = {}
    for corpus in (a, b):
        for u in corpus.utterances:
            for name, row in zip(corpus.inventory.decode(u.labels), u.features):
                rows.setdefault(name, set()).add(row.tobytes())
    assert {"p02", "p03"} <= rows.keys()
    assert all(len(v) == 1 for v in rows.values())


def test_no_adjacent_repeats():
    corpus = gen_synth_corpus(small_spec(num_utterances=50), 0)
    for u in corpus.utterances:
        assert all(a != b for a, b in zip(u.labels, u.labels[1:]))
        assert u.feasible


def test_spec_validation():
    with pytest.raises(ValueError):
        gen_synth_corpus(small_spec(phone_indices=[1]), 0)
    with pytest.raises(ValueError):
        gen_synth_corpus(small_spec(frames_per_phone=(3, 2)), 0)
    with pytest.raises(ValueError):
        gen_synth_corpus(small_spec(phone_indices=[0, 25]), 0)


def test_round_trip(tmp_path):
    corpus = gen_synth_corpus(small_spec(), 2)
    save_corpus(corpus, tmp_path / "c")
    loaded = load_corpus(tmp_path / "c")
    assert loaded.language_id == "L1"
    assert loaded.inventory.phones == corpus.inventory.phones
    assert loaded.meta["noise_std"] == "0.3"
    for x, y in zip(corpus.utterances, loaded.utterances):
        assert x.utterance_id == y.utterance_id and x.labels == y.labels
        assert x.features.tobytes() == y.features.tobytes()
    assert (tmp_path / "c" / "inventory.txt").read_text(encoding="utf-8").splitlines()[0] == "∅"


def test_unknown_phone_is_named(tmp_path):
    corpus = gen_synth_corpus(small_spec(), 2)
    save_corpus(corpus, tmp_path / "c")
    tr = tmp_path / "c" / "transcripts.tsv"
    lines = tr.read_text(encoding="utf-8").splitlines()
    lines[1] = lines[1].split("\t")[0] + "\tp00 zz9"
    tr.write_text("\n".join(lines) + "\n", encoding="utf-8")
    with pytest.raises(CorpusFormatError, match=r"transcripts.tsv:2: .*zz9"):
        load_corpus(tmp_path / "c")


def test_missing_inventory(tmp_path):
    (tmp_path / "c").mkdir()
    with pytest.raises(CorpusFormatError, match="missing inventory"):
        load_corpus(tmp_path / "c")


def test_infeasible_utterance_is_flagged(tmp_path):
    corpus = gen_synth_corpus(small_spec(num_utterances=2), 2)
    corpus.utterances.append(Utterance(np.zeros((1, 8)), [1, 2], "L1", "short"))
    save_corpus(corpus, tmp_path / "c")
    loaded = load_corpus(tmp_path / "c")
    assert loaded.infeasible == ["short"]


def test_feature_shape_mismatch(tmp_path):
    corpus = gen_synth_corpus(small_spec(num_utterances=2), 2)
    corpus.utterances.append(Utterance(np.zeros((4, 3)), [1], "L1", "odd"))
    save_corpus(corpus, tmp_path / "c")
    with pytest.raises(CorpusFormatError, match="feature dim"):
        load_corpus(tmp_path / "c")


def test_select_fraction():
    corpus = gen_synth_corpus(small_spec(num_utterances=100, phones_per_utterance=(1, 2), frames_per_phone=(1, 2)), 0)
    assert [u.utterance_id for u in select_fraction(corpus, 1.0).utterances] == [u.utterance_id for u in corpus.utterances]
    assert len(select_fraction(corpus, 0.25, seed=3)) == 25
    prev = set()
    for f in (0.05, 0.1, 0.25, 0.5, 1.0):
        ids = {u.utterance_id for u in select_fraction(corpus, f, seed=3).utterances}
        assert prev <= ids
        prev = ids
    for bad in (0.0, -0.1, 1.5):
        with pytest.raises(ValueError):
            select_fraction(corpus, bad)


def test_split_dev_is_disjoint_and_deterministic():
    corpus = gen_synth_corpus(small_spec(num_utterances=30), 0)
    tr, dv = split_dev(corpus, seed=1)
    assert len(dv) == 3 and len(tr) == 27
    assert not {u.utterance_id for u in tr.utterances} & {u.utterance_id for u in dv.utterances}
    tr2, dv2 = split_dev(corpus, seed=1)
    assert [u.utterance_id for u in dv2.utterances] == [u.utterance_id for u in dv.utterances]
