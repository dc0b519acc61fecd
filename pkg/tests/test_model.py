import math

import numpy as np
import pytest
from sklearn.base import clone

from gradcheck import CASES, check_case
from vqaprobe.exceptions import ModelError
from vqaprobe.model import (VQAClassifier, VQAInputs, ce_loss, dump_attention, forward, init_params,
                            loss_and_grads, predict_index, softmax)


@pytest.mark.parametrize("case", CASES, ids=lambda c: f"{c['mode']}-{c['debias']}-{c.get('mix_level', '')}")
@pytest.mark.parametrize("seed", [0, 1])
def test_gradients_match_finite_differences(case, seed):
    errs = check_case(seed, case)
    assert max(errs.values()) < 1e-3, errs


def test_gradients_soft_targets():
    errs = check_case(5, CASES[0], soft=True)
    assert max(errs.values()) < 1e-3, errs


def test_ce_loss_examples():
    loss, _ = ce_loss(np.full((1, 4), 0.25), [2])
    assert loss == pytest.approx(math.log(4), abs=1e-12)
    onehot = np.eye(3)[[1]]
    assert ce_loss(onehot, onehot)[0] == pytest.approx(0.0, abs=1e-12)
    # clamped log keeps a zero-probability target finite
    assert math.isfinite(ce_loss(np.array([[1.0, 0.0]]), [1])[0])


def test_predict_index():
    assert predict_index(np.array([0.1, 0.7, 0.2])) == 1
    assert predict_index(np.array([0.5, 0.5])) == 0
    rng = np.random.default_rng(0)
    for _ in range(200):
        p = rng.dirichlet(np.ones(7))
        best = 0
        for i in range(len(p)):
            if p[i] > p[best]:
                best = i
        assert predict_index(p) == best


def test_prediction_invariant_to_logit_shift():
    rng = np.random.default_rng(1)
    z = rng.normal(size=(20, 6))
    assert np.array_equal(predict_index(softmax(z)), predict_index(softmax(z + 5.0)))
    assert np.array_equal(predict_index(softmax(z)), predict_index(softmax(3.0 * z)))


@pytest.fixture
def toy():
    rng = np.random.default_rng(3)
    params = init_params(20, 6, 9, 5, 8, 10, seed=3)
    ids = np.zeros((10, 6), dtype=np.int64)
    for r in range(10):
        m = rng.integers(1, 7)
        ids[r, :m] = rng.integers(1, 20, size=m)
    scenes = rng.normal(size=(10, 4, 9))
    return params, ids, scenes


def test_forward_simplex_outputs(toy):
    params, ids, scenes = toy
    enc = forward(params, ids, scenes)
    for arr in (enc.p, enc.token_attn, enc.obj_attn):
        assert np.all(arr >= 0) and np.allclose(arr.sum(1), 1, atol=1e-6)
    assert np.all(enc.token_attn[ids == 0] == 0)


def test_slot_permutation_invariance(toy):
    params, ids, scenes = toy
    perm = np.random.default_rng(0).permutation(scenes.shape[1])
    a = forward(params, ids, scenes).p
    b = forward(params, ids, scenes[:, perm]).p
    np.testing.assert_allclose(a, b, atol=1e-12)


def test_q_only_ignores_scene(toy):
    params, ids, scenes = toy
    a = forward(params, ids, scenes, mode="q_only").p
    b = forward(params, ids, scenes * -3 + 1, mode="q_only").p
    c = forward(params, ids, None, mode="q_only").p
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(a, c)


def test_forward_errors(toy):
    params, ids, scenes = toy
    with pytest.raises(ModelError):
        forward(params, np.zeros((2, 6), dtype=np.int64), scenes[:2])      # all padding
    with pytest.raises(ModelError):
        forward(params, ids, scenes[:, :, :5])                             # wrong scene width
    with pytest.raises(ModelError):
        forward(params, ids, None)                                         # missing scene
    with pytest.raises(ModelError):
        forward(params, np.full((1, 6), 99), scenes[:1])                   # id out of vocabulary
    with pytest.raises(ModelError):
        forward(params, np.ones((1, 9), dtype=np.int64), scenes[:1])       # longer than the model


def test_loss_decreases_on_fixed_batch():
    from vqaprobe.model import Adam
    rng = np.random.default_rng(0)
    params = init_params(15, 6, 8, 5, 8, 12, seed=0)
    ids = rng.integers(1, 15, size=(50, 6))
    scenes = rng.normal(size=(50, 3, 8))
    y = rng.integers(0, 5, size=50)
    opt = Adam(params, lr=1e-2)
    first = loss_and_grads(params, ids, scenes, y)[0]
    for _ in range(200):
        loss, grads, _ = loss_and_grads(params, ids, scenes, y)
        opt.step(params, grads)
    assert loss < first


def test_dump_attention():
    pairs = dump_attention(np.array([0.2, 0.3, 0.0, 0.1]), ["is", "this", None, "hat"])
    assert [w for w, _ in pairs] == ["is", "this", "hat"]
    assert sum(v for _, v in pairs) == pytest.approx(1.0)
    assert dump_attention(np.array([0.7, 0.0]), ["dog", None]) == [("dog", 1.0)]


def _fit_data(n=120, seed=0):
    rng = np.random.default_rng(seed)
    ids = rng.integers(1, 12, size=(n, 5))
    scenes = rng.normal(size=(n, 3, 6))
    y = (ids[:, 0] % 3)
    return VQAInputs(ids, scenes), y


def test_classifier_fit_predict_and_params():
    X, y = _fit_data()
    clf = VQAClassifier(epochs=30, batch_size=32, lr=1e-2, embed_dim=8, hidden_dim=8, vocab_size=12,
                        n_answers=3, max_len=5, seed=1).fit(X, y)
    assert clf.score(X, y) > 0.9
    assert clf.predict_proba(X).shape == (120, 3)
    assert len(clf.loss_curve_) == 30 and clf.loss_curve_[-1] < clf.loss_curve_[0]
    assert clone(clf).get_params() == clf.get_params()


def test_classifier_deterministic():
    X, y = _fit_data()
    kw = dict(epochs=3, batch_size=32, embed_dim=8, hidden_dim=8, vocab_size=12, n_answers=3, max_len=5, seed=4)
    a, b = VQAClassifier(**kw).fit(X, y), VQAClassifier(**kw).fit(X, y)
    for k in a.params_:
        np.testing.assert_array_equal(a.params_[k], b.params_[k])


def test_zero_epochs_is_initialization():
    X, y = _fit_data()
    clf = VQAClassifier(epochs=0, embed_dim=8, hidden_dim=8, vocab_size=12, n_answers=3, max_len=5, seed=2).fit(X, y)
    init = init_params(12, 5, 6, 3, 8, 8, 0.08, 2)
    for k in init:
        np.testing.assert_array_equal(clf.params_[k], init[k])


def test_checkpoint_roundtrip(tmp_path):
    X, y = _fit_data()
    clf = VQAClassifier(epochs=2, embed_dim=8, hidden_dim=8, vocab_size=12, n_answers=3, max_len=5).fit(X, y)
    clf.save(tmp_path / "c.json", extra={"note": 1})
    back = VQAClassifier.load(tmp_path / "c.json")
    for k in clf.params_:
        np.testing.assert_array_equal(clf.params_[k], back.params_[k])
    np.testing.assert_array_equal(clf.predict_proba(X), back.predict_proba(X))
    assert back.extra_ == {"note": 1}
    back.save(tmp_path / "d.json", extra={"note": 1})
    assert (tmp_path / "c.json").read_bytes() == (tmp_path / "d.json").read_bytes()


def test_checkpoint_rejects_foreign_file(tmp_path):
    (tmp_path / "x.json").write_text('{"format": "other"}')
    with pytest.raises(ModelError):
        VQAClassifier.load(tmp_path / "x.json")


def test_classifier_input_validation():
    X, y = _fit_data()
    clf = VQAClassifier(epochs=1, embed_dim=8, hidden_dim=8, vocab_size=12, n_answers=3, max_len=5)
    with pytest.raises(ModelError):
        clf.fit(VQAInputs(X.ids, None), y)
    with pytest.raises(ModelError):
        VQAClassifier(debias="mixing", epochs=1, vocab_size=12, n_answers=3, max_len=5).fit(X, y)
