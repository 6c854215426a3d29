from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from nmtlab.toy import CLASS_SIZES, OPEN_CLASSES, SHARED_CLASSES, ToyFamily


def family(seed=0, keep=0.0, **options):
    fam = ToyFamily.create(seed, **options)
    fam.add_language("xa")
    fam.add_language("xb", adj_after_noun=True, base="xa" if keep else None, keep=keep)
    return fam


def test_generation_is_deterministic():
    assert family(3).monolingual("xa", 50, 7).sentences == family(3).monolingual("xa", 50, 7).sentences
    assert family(3).monolingual("xa", 50, 7).sentences != family(3).monolingual("xa", 50, 8).sentences


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 50), st.sampled_from([0.0, 0.3, 1.0]))
def test_parallel_side_is_word_map_plus_local_swap(seed, keep):
    fam = family(seed, keep)
    for src, tgt in fam.parallel("xa", "xb", 30, seed).pairs:
        mapped = [fam.translate_word(w, "xa", "xb") for w in src.split()]
        out = tgt.split()
        assert sorted(mapped) == sorted(out)
        # no word moves more than one position
        assert all(w in out[max(0, i - 1):i + 2] for i, w in enumerate(mapped))


def test_names_and_numbers_are_shared():
    fam = family(1)
    a, b = fam.languages["xa"].lexicon, fam.languages["xb"].lexicon
    for cls in SHARED_CLASSES:
        assert all(a[c] == b[c] for c in fam.concepts[cls])
    content = [c for cls in OPEN_CLASSES for c in fam.concepts[cls]]
    assert not any(a[c] == b[c] for c in content)


def test_keep_shares_a_fraction_of_content_words():
    fam = family(0, keep=0.3)
    a, b = fam.languages["xa"].lexicon, fam.languages["xb"].lexicon
    content = [c for cls in OPEN_CLASSES for c in fam.concepts[cls]]
    share = sum(a[c] == b[c] for c in content) / len(content)
    assert 0.15 < share < 0.45


def test_lexicons_are_bijections():
    fam = family(2, keep=0.3, scale=3)
    for lang in fam.languages.values():
        assert len(set(lang.lexicon.values())) == len(lang.lexicon)


def test_default_options_reproduce_plain_family():
    assert family(4, scale=1, zipf=0.0).monolingual("xb", 40, 1).sentences == \
        family(4).monolingual("xb", 40, 1).sentences


@pytest.mark.parametrize("scale", [1, 2, 8])
def test_scale_multiplies_open_classes(scale):
    fam = ToyFamily.create(0, scale=scale)
    for cls, size in CLASS_SIZES.items():
        assert len(fam.concepts[cls]) == size * (scale if cls in OPEN_CLASSES else 1)


def test_zipf_skews_unconditioned_choices():
    fam = family(0, scale=4, zipf=1.0)
    nouns = fam.concepts["NOUN"]
    lex = fam.languages["xa"].lexicon
    counts = Counter(w for s in fam.monolingual("xa", 3000, 1).sentences for w in s.split())
    head = sum(counts[lex[c]] for c in nouns[:10])
    tail = sum(counts[lex[c]] for c in nouns[-10:])
    assert head > 3 * tail


@pytest.mark.parametrize("bad", [{"scale": 0}, {"zipf": -1.0}])
def test_bad_options(bad):
    with pytest.raises(ValueError):
        ToyFamily.create(0, **bad)
