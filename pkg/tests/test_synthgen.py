import json

import numpy as np
import pytest
from scipy.stats import chi2_contingency

from vqaprobe import synthgen as sg
from vqaprobe.exceptions import GenerationError, OracleError
from vqaprobe.question import Question


def scene_with(slots, noise=0.0):
    """slots: list of (object name, color name)."""
    s = np.zeros((len(slots), len(sg.OBJECTS) + len(sg.COLORS)))
    for i, (o, c) in enumerate(slots):
        s[i, sg.OBJECTS.index(o)] = 1.0
        s[i, len(sg.OBJECTS) + sg.COLORS.index(c)] = 1.0
    return s + noise


def ask(text):
    return Question.parse(0, text, sg.lexicon())


def answer(text, slots):
    return sg.ANSWERS[sg.answer_oracle(ask(text), scene_with(slots))]


def test_oracle_examples():
    assert answer("is there a flower?", [("flower", "red"), ("dog", "blue")]) == "yes"
    assert answer("is there a flower?", [("cat", "red")]) == "no"
    assert answer("how many dog are there?", [("dog", "red")] * 3 + [("cat", "red")]) == "3"
    assert answer("what color is the shirt?", [("shirt", "red"), ("hat", "blue")]) == "red"
    assert answer("is the big hat blue in the picture?", [("hat", "blue")]) == "yes"
    assert answer("what is the color of the small kite here?", [("kite", "green")]) == "green"


def test_oracle_rejects_unknown_templates():
    with pytest.raises(OracleError):
        sg.answer_oracle(Question(0, ("why", "not")), scene_with([("dog", "red")]))
    with pytest.raises(OracleError):
        sg.answer_oracle(ask("is there a unicorn?"), scene_with([("dog", "red")]))
    with pytest.raises(OracleError):  # ambiguous color
        sg.answer_oracle(ask("what color is the dog?"), scene_with([("dog", "red"), ("dog", "blue")]))


def test_every_sample_consistent(small_dataset):
    for split in small_dataset.splits.values():
        for q, s, a in zip(split.questions, split.scenes, split.answers):
            assert sg.answer_oracle(q, s) == a


def test_scene_invariants(small_dataset):
    s = small_dataset["train"].scenes
    n_obj = len(sg.OBJECTS)
    assert s.shape[1:] == (6, n_obj + len(sg.COLORS))
    # one active object and one active color per slot, noise below 0.1
    assert np.all((s[..., :n_obj] > 0.5).sum(-1) == 1)
    assert np.all((s[..., n_obj:] > 0.5).sum(-1) == 1)
    off = np.where(s > 0.5, s - 1.0, s)
    assert np.abs(off).max() < 0.1


def test_targets_one_hot(small_dataset):
    t = small_dataset["test_id"].targets()
    assert np.allclose(t.sum(1), 1) and np.all(t.argmax(1) == small_dataset["test_id"].answers)


def test_marginals_match_requested(small_dataset):
    cfg = small_dataset.config
    for name, skew in (("train", cfg.prefix_skew), ("test_ood", cfg.ood_skew)):
        emp = sg.empirical_marginals(small_dataset[name])
        for qt, part in skew.items():
            for a, p in part.items():
                assert abs(emp[qt].get(a, 0.0) - p) < 0.03 + 0.02


def test_custom_skew_counts(tmp_path):
    cfg = sg.BiasConfig(n_train=2000, n_test=400, seed=3,
                        prefix_skew={"is there a": {"yes": 0.85}}, ood_skew={"is there a": {"yes": 0.30}})
    ds = sg.generate(cfg)
    sg.save(ds, tmp_path)
    # recount straight from the emitted files
    qs = {r["question_id"]: r for r in map(json.loads, (tmp_path / "test_ood_questions.jsonl").open())}
    ans = [json.loads(l) for l in (tmp_path / "test_ood_answers.jsonl").open()]
    sel = [a["answer"] for a in ans if qs[a["question_id"]]["question_type"] == "is there a"]
    assert abs(sel.count("yes") / len(sel) - 0.30) <= 0.03 + 1 / len(sel)


def test_uniform_control_indistinguishable():
    uniform = {qt: {} for qt in sg.TEMPLATES}
    cfg = sg.BiasConfig(n_train=4000, n_test=4000, seed=5, prefix_skew=uniform, ood_skew=uniform,
                        cooccur_skew=0.125, cooccur_skew_ood=0.125)
    ds = sg.generate(cfg)
    for qt in sg.TEMPLATES:
        support = sg.answers_for(qt)
        rows = []
        for name in ("train", "test_ood"):
            sp = ds[name]
            got = [sg.ANSWERS[a] for q, a in zip(sp.questions, sp.answers) if q.qtype == qt]
            rows.append([got.count(a) + 1 for a in support])
        assert chi2_contingency(np.array(rows))[1] > 0.01, qt


@pytest.mark.parametrize("bad", [
    {"n_train": 0},
    {"n_slots": 0},
    {"noise": 0.2},
    {"prefix_skew": {"how many": {"yes": 0.5}}},
    {"prefix_skew": {"is there a": {"yes": 0.7, "no": 0.6}}},
    {"ood_skew": {"how many": {"9": 0.5}}},
])
def test_infeasible_configs(bad):
    with pytest.raises(GenerationError):
        sg.generate(sg.BiasConfig(**{"n_test": 50, **bad}))


def test_unknown_config_key():
    with pytest.raises(GenerationError):
        sg.BiasConfig.from_dict({"n_trian": 5})


def test_answer_distribution_spreads_remainder():
    d = sg.answer_distribution("is there a", {"yes": 0.85})
    assert d == pytest.approx({"yes": 0.85, "no": 0.15})
    c = sg.answer_distribution("what color is", {"red": 0.3})
    assert c["red"] == 0.3 and sum(c.values()) == pytest.approx(1.0) and c["blue"] == pytest.approx(0.1)


def test_deterministic_files(tmp_path):
    cfg = sg.BiasConfig(n_train=300, n_test=100, seed=9)
    a, b = tmp_path / "a", tmp_path / "b"
    sg.save(sg.generate(cfg), a)
    sg.save(sg.generate(cfg), b)
    for f in sorted(a.iterdir()):
        assert f.read_bytes() == (b / f.name).read_bytes(), f.name


def test_save_load_roundtrip(tmp_path, small_dataset):
    sg.save(small_dataset, tmp_path)
    back = sg.load(tmp_path)
    for name in sg.SPLITS:
        x, y = small_dataset[name], back[name]
        assert [q.tokens for q in x.questions] == [q.tokens for q in y.questions]
        assert [q.qtype for q in x.questions] == [q.qtype for q in y.questions]
        np.testing.assert_array_equal(x.answers, y.answers)
        np.testing.assert_allclose(x.scenes, y.scenes, atol=1e-6)


def test_majority_gap(small_dataset):
    table = sg.majority_baseline(small_dataset["train"])
    assert sg.majority_accuracy(table, small_dataset["test_id"]) >= 65
    assert sg.majority_accuracy(table, small_dataset["test_ood"]) <= 40


def test_read_vqa_json(tmp_path):
    (tmp_path / "q.json").write_text(json.dumps({"questions": [
        {"question_id": 11, "image_id": 1, "question": "What color is the shirt?"},
        {"question_id": 12, "image_id": 1, "question": "Is this a cowboy hat?"}]}))
    (tmp_path / "a.json").write_text(json.dumps({"annotations": [
        {"question_id": 11, "question_type": "what color is the", "answer_type": "other"},
        {"question_id": 12, "question_type": "is this a", "answer_type": "yes/no"}]}))
    qs = sg.read_vqa_json(tmp_path / "q.json", tmp_path / "a.json")
    assert qs[0].prefix == ("what", "color", "is", "the") and qs[1].answer_type == "YesNo"
    assert qs[1].postfix == ("cowboy", "hat")
