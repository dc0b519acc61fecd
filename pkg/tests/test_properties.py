from collections import Counter

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from vqaprobe.metrics import PredictionRecord, flip_ratios, rob, simi
from vqaprobe.perturb import variant1, variant2, variant3
from vqaprobe.question import QTypeLexicon, Question, Vocabulary, decompose, pad

WORDS = ["is", "there", "a", "what", "color", "how", "many", "the", "dog", "red"]
word = st.sampled_from(WORDS)
tokens = st.lists(word, min_size=1, max_size=12)
phrases = st.lists(st.lists(word, min_size=1, max_size=3).map(" ".join), min_size=1, max_size=8, unique=True)


@given(tokens, phrases)
def test_decompose_total_and_longest(toks, entries):
    lex = QTypeLexicon((e, "other") for e in entries)
    prefix, postfix, qt = decompose(toks, lex)
    assert prefix + postfix == tuple(toks)
    matching = [e.split() for e in entries if toks[:len(e.split())] == e.split()]
    if qt is None:
        assert not matching and prefix == ()
    else:
        assert len(prefix) == max(len(m) for m in matching)


@given(st.lists(word, max_size=20), st.integers(1, 16))
def test_pad_length_and_idempotence(toks, L):
    v = Vocabulary(WORDS[:5])
    ids = pad(toks, L, v)
    assert ids.shape == (L,)
    back = [v.itos[i] if i else None for i in ids]
    np.testing.assert_array_equal(pad(back, L, v), ids)


@given(tokens, phrases, st.integers(0, 2**32 - 1))
def test_variants_preserve_multiset(toks, entries, seed):
    q = Question.parse(0, " ".join(toks), QTypeLexicon((e, "other") for e in entries))
    for out in (variant1(q), variant2(q, seed), variant3(q)):
        assert Counter(out) == Counter(q.tokens)
    assert variant3(Question(0, variant3(q))) == q.tokens


@st.composite
def paired_records(draw):
    n = draw(st.integers(1, 40))
    o = draw(st.lists(st.booleans(), min_size=n, max_size=n))
    v = draw(st.lists(st.booleans(), min_size=n, max_size=n))
    mk = lambda i, c: PredictionRecord(i, "a" if c else "b", "a", c, "t", "Other")
    return [mk(i, c) for i, c in enumerate(o)], [mk(i, c) for i, c in enumerate(v)]


@given(paired_records())
def test_rob_plus_c2w_is_100(pair):
    orig, var = pair
    r, (c2w, _) = rob(orig, var), flip_ratios(orig, var)
    if r is None:
        assert c2w is None
    else:
        assert r + c2w == 100.0


@settings(max_examples=50)
@given(st.integers(1, 10), st.integers(1, 6), st.integers(0, 1000))
def test_simi_bounds_and_scale(n, d, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(n, d)), rng.normal(size=(n, d))
    s = simi(a, b)
    assert -1e-12 <= s <= 2 + 1e-12
    assert abs(simi(a * rng.uniform(0.1, 10, size=(n, 1)), b) - s) < 1e-9
