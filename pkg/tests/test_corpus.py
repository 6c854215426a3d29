import math

import pytest
from hypothesis import given, settings, strategies as st

from nmtlab.corpus import (Corpus, CorpusError, LidModel, ParallelCorpus, filter_by_language,
                           ingest, pair_synthetic, partition_by_language, split, train_lid)


def write(tmp_path, name, data):
    path = tmp_path / name
    path.write_bytes(data if isinstance(data, bytes) else data.encode("utf-8"))
    return path


def test_ingest_drops_blank_lines(tmp_path):
    c = ingest(write(tmp_path, "a.de", "hallo welt\n\nguten tag\n"), "de")
    assert c.sentences == ["hallo welt", "guten tag"]


def test_ingest_empty_file(tmp_path):
    assert len(ingest(write(tmp_path, "e.de", ""), "de")) == 0


def test_ingest_whitespace_only_line(tmp_path):
    c = ingest(write(tmp_path, "w.de", "a\n   \n  b   c  \n"), "de")
    assert c.sentences == ["a", "b c"]


def test_ingest_reports_bad_utf8_offset(tmp_path):
    path = write(tmp_path, "bad.de", b"ok\n\xff\n")
    with pytest.raises(CorpusError, match="byte offset 3"):
        ingest(path, "de")


def test_ingest_missing_file(tmp_path):
    with pytest.raises(CorpusError):
        ingest(tmp_path / "nope", "de")


def test_save_load_keeps_order(tmp_path):
    c = Corpus("de", ["b", "a", "c"])
    c.save(tmp_path / "c.de")
    assert ingest(tmp_path / "c.de", "de").sentences == ["b", "a", "c"]


def test_parallel_roundtrip(tmp_path):
    pc = ParallelCorpus("de", "hsb", [("a b", "x y"), ("c", "z")])
    pc.save(tmp_path / "train")
    assert (tmp_path / "train.de").exists() and (tmp_path / "train.hsb").exists()
    assert ParallelCorpus.load(tmp_path / "train", "de", "hsb").pairs == pc.pairs


# -- LID ----------------------------------------------------------------------------

def test_unigram_hand_computed_scores():
    m = train_lid([(Corpus("a", ["aaaa"]), "a"), (Corpus("b", ["bbbb"]), "b")], order=1)
    lam = 0.1
    seen = math.log((4 + lam) / (4 + lam * 2))
    unseen = math.log(lam / (4 + lam * 2))
    scores = m.scores("aab")
    assert scores["a"] == pytest.approx(2 * seen + unseen, abs=1e-12)
    assert scores["b"] == pytest.approx(seen + 2 * unseen, abs=1e-12)
    assert m.classify("aab")[0] == "a"


def test_disjoint_scripts_classify_training_sentences():
    latin = Corpus("de", ["guten tag", "hallo welt", "das haus ist alt"])
    cyr = Corpus("ru", ["добрый день", "привет мир", "дом старый"])
    m = train_lid([(latin, "de"), (cyr, "ru")])
    assert all(m.classify(s)[0] == "de" for s in latin)
    assert all(m.classify(s)[0] == "ru" for s in cyr)


def test_tie_goes_to_smallest_language_id():
    c = Corpus("x", ["abc abd"])
    m = train_lid([(c, "zz"), (c, "aa")])
    best, margin = m.classify("abc")
    assert margin == 0.0
    assert best == "aa"


def test_short_sentence_uses_character_fallback():
    m = train_lid([(Corpus("a", ["aaaa aaa"]), "a"), (Corpus("b", ["bbbb bbb"]), "b")], order=3)
    assert m.classify("b")[0] == "b"
    assert m.classify("aa")[0] == "a"


def test_distributions_are_proper():
    m = train_lid([(Corpus("a", ["abcab", "cab"]), "a"), (Corpus("b", ["xyz"]), "b")], order=2)
    for tables in (m._logp, m._logp1):
        for lang in m.languages:
            known, unseen = tables[lang]
            assert math.fsum(math.exp(v) for v in known.values()) + math.exp(unseen) == pytest.approx(1.0)


def test_lid_needs_two_languages_and_data():
    with pytest.raises(CorpusError):
        train_lid([(Corpus("a", ["x"]), "a")])
    with pytest.raises(CorpusError):
        train_lid([(Corpus("a", ["x"]), "a"), (Corpus("b", []), "b")])
    with pytest.raises(CorpusError):
        train_lid([(Corpus("a", ["x"]), "a"), (Corpus("b", ["y"]), "b")], order=0)


def test_lid_serialization_roundtrip(tmp_path):
    m = train_lid([(Corpus("de", ["über\tall", "guten tag"]), "de"),
                   (Corpus("hsb", ["dobry dźeń"]), "hsb")])
    m.save(tmp_path / "lid.txt")
    again = LidModel.load(tmp_path / "lid.txt")
    assert again.dumps() == m.dumps()
    for s in ["guten", "dźeń", "x"]:
        assert again.scores(s) == m.scores(s)


# -- filtering --------------------------------------------------------------------

@pytest.fixture
def lid():
    de = Corpus("de", ["das haus ist alt", "die katze schläft", "guten morgen welt"])
    ru = Corpus("ru", ["дом старый", "кошка спит", "доброе утро мир"])
    return train_lid([(de, "de"), (ru, "ru")])


def test_filter_keeps_all_in_language(lid):
    c = Corpus("de", ["das alte haus", "die welt schläft"])
    assert filter_by_language(c, lid, "de", 0.0).sentences == c.sentences
    assert all(lid.classify(s)[0] == "de" for s in c)


def test_filter_empty_and_infinite_margin(lid):
    assert len(filter_by_language(Corpus("de", []), lid, "de")) == 0
    c = Corpus("de", ["das haus"])
    assert len(filter_by_language(c, lid, "de", math.inf)) == 0


def test_filter_unknown_language(lid):
    with pytest.raises(CorpusError):
        filter_by_language(Corpus("de", ["x"]), lid, "fr")


@settings(max_examples=40, deadline=None)
@given(st.lists(st.sampled_from(["das haus", "кошка", "welt", "мир дом", "die katze spielt"]),
                max_size=12))
def test_filter_partition_is_exhaustive_and_ordered(sentences):
    de = Corpus("de", ["das haus ist alt", "die katze"])
    ru = Corpus("ru", ["дом старый", "кошка спит"])
    m = train_lid([(de, "de"), (ru, "ru")])
    c = Corpus("mix", sentences)
    kept, rejected = partition_by_language(c, m, "de", 0.0)
    assert sorted(kept.sentences + rejected.sentences) == sorted(sentences)
    it = iter(sentences)
    assert all(any(s == t for t in it) for s in kept.sentences)


# -- pairing and splitting ------------------------------------------------------------

def test_pair_synthetic_positional():
    src = Corpus("de", ["a", "b", "c"])
    pc, dropped = pair_synthetic(src, Corpus("hsb", ["x", "y", "z"]))
    assert pc.pairs == [("a", "x"), ("b", "y"), ("c", "z")]
    assert dropped == 0


def test_pair_synthetic_drops_empty():
    src = Corpus("de", ["a", "b", "c"])
    pc, dropped = pair_synthetic(src, ["x", "  ", "z"])
    assert len(pc) == 2 and dropped == 1
    assert pc.sources == ["a", "c"]


def test_pair_synthetic_length_mismatch():
    with pytest.raises(CorpusError):
        pair_synthetic(Corpus("de", ["a", "b", "c"]), ["1", "2", "3", "4"])


def _pc(n):
    return ParallelCorpus("a", "b", [(f"s{i}", f"t{i}") for i in range(n)])


def test_split_sizes_and_partition():
    train, dev, test = split(_pc(100), 10, 10, seed=3)
    assert (len(train), len(dev), len(test)) == (80, 10, 10)
    allp = train.pairs + dev.pairs + test.pairs
    assert sorted(allp) == sorted(_pc(100).pairs)


def test_split_deterministic():
    assert split(_pc(50), 5, 5, 1) == split(_pc(50), 5, 5, 1)


def test_split_insufficient():
    with pytest.raises(CorpusError):
        split(_pc(20), 10, 10, 0)
