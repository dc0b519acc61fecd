from collections import Counter

import pytest

from vqaprobe.perturb import PerturbSeed, VariantKind, apply_variant, morph, variant1, variant2, variant3
from vqaprobe.question import QTypeLexicon, Question
from vqaprobe.synthgen import lexicon


@pytest.fixture
def lex():
    return QTypeLexicon([("what color is", "other"), ("is there", "yesno"), ("how many", "number")])


def q(text, lex, qid=1):
    return Question.parse(qid, text, lex)


def test_variant1_flower(lex):
    flower = q("what color is the flower?", lex)
    assert " ".join(variant1(flower)) + "?" == "the flower what color is?"


def test_variant1_empty_postfix(lex):
    assert variant1(q("is there?", lex)) == ("is", "there")


def test_variant1_involution_without_redecomposition(lex):
    orig = q("what color is the flower?", lex)
    # swapping the two parts twice restores the order
    v = variant1(orig)
    n = len(orig.postfix)
    assert v[n:] + v[:n] == orig.tokens


def test_variant1_untyped_passthrough(lex):
    u = q("hello there world", lex)
    assert variant1(u) == u.tokens


def test_variant3_flower_and_involution(lex):
    flower = q("what color is the flower?", lex)
    assert " ".join(variant3(flower)) + "?" == "flower the is color what?"
    rev = Question(1, variant3(flower))
    assert variant3(rev) == flower.tokens
    pal = Question(2, ("a", "b", "a"))
    assert variant3(pal) == pal.tokens


def test_variant2_permutation_and_determinism(lex):
    flower = q("what color is the flower?", lex, qid=9)
    out = variant2(flower, 3)
    assert Counter(out) == Counter(flower.tokens)
    assert variant2(flower, 3) == out
    assert variant2(flower, PerturbSeed(3, 9)) == out


def test_variant2_single_token():
    one = Question(5, ("dog",))
    assert all(variant2(one, s) == ("dog",) for s in range(5))


def test_variant2_varies_over_seeds(lex):
    flower = q("what color is the flower?", lex)
    perms = {variant2(flower, s) for s in range(50)}
    assert len(perms) >= 2


def test_variant2_uniform_on_three_tokens():
    # 3! = 6 permutations, each should appear ~1/6 of the time over many seeds
    three = Question(0, ("a", "b", "c"))
    counts = Counter(variant2(three, s) for s in range(6000))
    assert len(counts) == 6
    assert all(abs(c / 6000 - 1 / 6) < 0.03 for c in counts.values())


def test_variant2_independent_per_question():
    a, b = Question(1, tuple("abcdefg")), Question(2, tuple("abcdefg"))
    assert variant2(a, 0) != variant2(b, 0)


def test_variant2_string_ids_and_epochs():
    s = Question("q-17", tuple("abcdef"))
    assert variant2(s, 1) == variant2(s, 1)
    per_epoch = {apply_variant(s, "variant2", 1, epoch=e) for e in range(10)}
    assert len(per_epoch) > 1


def test_variant_kind_parse():
    assert VariantKind.parse("1") is VariantKind.VARIANT1
    assert VariantKind.parse("variant3") is VariantKind.VARIANT3
    assert VariantKind.parse(VariantKind.IDENTITY) is VariantKind.IDENTITY
    with pytest.raises(ValueError):
        VariantKind.parse("4")


def test_identity_and_multiset_all_kinds(small_dataset):
    qs = small_dataset["train"].questions[:200]
    for kind in VariantKind:
        for question, toks in zip(qs, morph(qs, kind, seed=4)):
            assert Counter(toks) == Counter(question.tokens)
            if kind is VariantKind.IDENTITY:
                assert toks == question.tokens


def test_dataset_morph_deterministic(small_dataset):
    qs = small_dataset["test_ood"].questions
    assert morph(qs, "variant2", 11) == morph(qs, "variant2", 11)
    assert all(qq.qtype in lexicon() for qq in qs)
