"""Miniature VQA classifier with hand-written backpropagation.

Question encoder: word + position embeddings pooled by a learned token
attention.  Scene encoder: question-guided softmax attention over object
slots.  Fusion: elementwise product of the question encoding and the
projected scene encoding through a tanh layer (the question encoding alone in
``q_only`` mode).  Head: softmax(W h + b).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .debias import contrastive_loss, mix_features as mix
from .exceptions import ModelError
from .fileio import atomic_write_text
from .question import PAD_ID

CHECKPOINT_FORMAT = "vqaprobe-checkpoint"
CHECKPOINT_VERSION = 1
LOG_EPS = 1e-12

PARAM_NAMES = ("embed", "pos", "attn_u", "attn_b", "obj_map", "proj_w", "proj_b",
               "fuse_w", "fuse_b", "cls_w", "cls_b")


@dataclass
class VQAInputs:
    """Model inputs: padded question ids (n, L), scenes (n, K, D_v), optional variant ids."""
    ids: np.ndarray
    scenes: np.ndarray | None = None
    variant_ids: np.ndarray | None = None

    def __len__(self):
        return len(self.ids)

    def take(self, idx) -> "VQAInputs":
        return VQAInputs(self.ids[idx],
                         None if self.scenes is None else self.scenes[idx],
                         None if self.variant_ids is None else self.variant_ids[idx])


@dataclass
class Encodings:
    q_enc: np.ndarray        # (n, d)
    token_attn: np.ndarray   # (n, L), zero on padding
    obj_attn: np.ndarray | None  # (n, K); None in q_only mode
    h: np.ndarray            # (n, d_h)
    p: np.ndarray            # (n, |A|)


def init_params(vocab_size: int, max_len: int, scene_dim: int, n_answers: int, embed_dim: int = 64,
                hidden_dim: int = 128, scale: float = 0.08, seed: int = 0) -> dict[str, np.ndarray]:
    """Uniform(-scale, scale) weights, zero biases."""
    rng = np.random.default_rng(seed)
    shapes = {
        "embed": (vocab_size, embed_dim),
        "pos": (max_len, embed_dim),
        "attn_u": (embed_dim,),
        "obj_map": (embed_dim, scene_dim),
        "proj_w": (embed_dim, scene_dim),
        "fuse_w": (hidden_dim, embed_dim),
        "cls_w": (n_answers, hidden_dim),
    }
    params = {k: rng.uniform(-scale, scale, size=s) for k, s in shapes.items()}
    params["attn_b"] = np.zeros(())
    params["proj_b"] = np.zeros(embed_dim)
    params["fuse_b"] = np.zeros(hidden_dim)
    params["cls_b"] = np.zeros(n_answers)
    return {k: params[k] for k in PARAM_NAMES}


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def predict_index(p: np.ndarray) -> np.ndarray | int:
    """Arg-max answer; ties go to the lowest index."""
    return np.argmax(p, axis=-1)


def check_params(params: dict):
    missing = set(PARAM_NAMES) - set(params)
    if missing:
        raise ModelError(f"missing parameters {sorted(missing)}")
    d = params["embed"].shape[1]
    expect = {
        "pos": (None, d), "attn_u": (d,), "obj_map": (d, None), "proj_w": (d, None),
        "proj_b": (d,), "fuse_w": (None, d),
    }
    for k, shape in expect.items():
        got = params[k].shape
        if len(got) != len(shape) or any(s is not None and s != g for s, g in zip(shape, got)):
            raise ModelError(f"parameter {k} has shape {got}, expected {shape}")
    if params["cls_w"].shape[1] != params["fuse_w"].shape[0]:
        raise ModelError("classifier and fusion widths disagree")


# ---------------------------------------------------------------- forward / backward

def encode_question(params, ids):
    ids = np.asarray(ids)
    if ids.ndim != 2:
        raise ModelError(f"question ids must be 2-D, got shape {ids.shape}")
    n, L = ids.shape
    if L > params["pos"].shape[0]:
        raise ModelError(f"question length {L} exceeds the model's {params['pos'].shape[0]}")
    if ids.size and (ids.min() < 0 or ids.max() >= params["embed"].shape[0]):
        raise ModelError("question ids outside the model vocabulary")
    mask = ids != PAD_ID
    if not mask.any(axis=1).all():
        raise ModelError("every question needs at least one non-pad token")
    x = params["embed"][ids] + params["pos"][:L]
    t = np.tanh(x)
    s = t @ params["attn_u"] + params["attn_b"]
    s = np.where(mask, s, -np.inf)
    alpha = softmax(s, axis=1)
    q = np.einsum("nl,nld->nd", alpha, x)
    return q, (ids, x, t, alpha)


def encode_question_backward(params, cache, dq, grads):
    ids, x, t, alpha = cache
    L = ids.shape[1]
    dalpha = np.einsum("nld,nd->nl", x, dq)
    ds = alpha * (dalpha - np.sum(alpha * dalpha, axis=1, keepdims=True))
    grads["attn_u"] += np.einsum("nl,nld->d", ds, t)
    grads["attn_b"] += ds.sum()
    dx = alpha[..., None] * dq[:, None, :] + ds[..., None] * params["attn_u"] * (1.0 - t * t)
    grads["pos"][:L] += dx.sum(axis=0)
    np.add.at(grads["embed"], ids, dx)


def fuse(params, q, scenes, mode):
    if mode == "full":
        if scenes is None:
            raise ModelError("full mode needs scene features")
        scenes = np.asarray(scenes, dtype=np.float64)
        if scenes.ndim != 3 or scenes.shape[0] != q.shape[0] or scenes.shape[2] != params["obj_map"].shape[1]:
            raise ModelError(f"scene array has shape {scenes.shape}")
        qm = q @ params["obj_map"]
        beta = softmax(np.einsum("ne,nke->nk", qm, scenes), axis=1)
        vhat = np.einsum("nk,nke->ne", beta, scenes)
        g = vhat @ params["proj_w"].T + params["proj_b"]
        f = q * g
        cache = (mode, q, scenes, beta, vhat, g, f)
    elif mode == "q_only":
        f = q
        beta = None
        cache = (mode, q, None, None, None, None, f)
    else:
        raise ModelError(f"unknown model mode {mode!r}")
    h = np.tanh(f @ params["fuse_w"].T + params["fuse_b"])
    return h, beta, cache + (h,)


def fuse_backward(params, cache, dh, grads):
    mode, q, scenes, beta, vhat, g, f, h = cache
    dpre = dh * (1.0 - h * h)
    grads["fuse_w"] += dpre.T @ f
    grads["fuse_b"] += dpre.sum(axis=0)
    df = dpre @ params["fuse_w"]
    if mode == "q_only":
        return df
    dq = df * g
    dg = df * q
    grads["proj_w"] += dg.T @ vhat
    grads["proj_b"] += dg.sum(axis=0)
    dvhat = dg @ params["proj_w"]
    dbeta = np.einsum("ne,nke->nk", dvhat, scenes)
    dz = beta * (dbeta - np.sum(beta * dbeta, axis=1, keepdims=True))
    dqm = np.einsum("nk,nke->ne", dz, scenes)
    grads["obj_map"] += q.T @ dqm
    return dq + dqm @ params["obj_map"].T


def head(params, h):
    return softmax(h @ params["cls_w"].T + params["cls_b"], axis=1)


def ce_loss(p, targets):
    """Mean cross-entropy -1/N sum a_i . log p_i and its gradient wrt the logits.

    `targets` are answer distributions (rows summing to 1) or answer indices.
    """
    p = np.asarray(p, dtype=np.float64)
    targets = np.asarray(targets)
    if targets.ndim == 1:
        a = np.zeros_like(p)
        a[np.arange(len(p)), targets] = 1.0
    else:
        a = targets.astype(np.float64)
    n = len(p)
    loss = -np.sum(a * np.log(np.maximum(p, LOG_EPS))) / n
    dlogits = (p * a.sum(axis=1, keepdims=True) - a) / n
    return float(loss), dlogits


def head_backward(params, h, dlogits, grads):
    grads["cls_w"] += dlogits.T @ h
    grads["cls_b"] += dlogits.sum(axis=0)
    return dlogits @ params["cls_w"]


def forward(params, ids, scenes=None, mode="full", variant_ids=None, alpha=0.5,
            mix_level="question") -> Encodings:
    """Inference pass.  With `variant_ids`, question (or fused) features are mixed by `alpha`."""
    q, qc = encode_question(params, ids)
    token_attn = qc[3]
    if variant_ids is not None and mix_level == "question":
        q = mix(q, encode_question(params, variant_ids)[0], alpha)
    h, beta, _ = fuse(params, q, scenes, mode)
    if variant_ids is not None and mix_level == "fused":
        qv, _ = encode_question(params, variant_ids)
        h = mix(h, fuse(params, qv, scenes, mode)[0], alpha)
    return Encodings(q, token_attn, beta, h, head(params, h))


def loss_and_grads(params, ids, scenes, targets, mode="full", variant_ids=None, debias="none",
                   lam=1.0, alpha=0.5, mix_level="question"):
    """Training objective and its gradient for every parameter.

    debias = "none": cross-entropy on the original question.
    debias = "mixing": cross-entropy on mixed original/variant features.
    debias = "contrastive": cross-entropy + lam * contrastive loss between the
    fused features of original and variant questions.
    """
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    q, qc = encode_question(params, ids)
    info = {}
    if debias == "none":
        h, _, fc = fuse(params, q, scenes, mode)
        loss, dlog = ce_loss(head(params, h), targets)
        encode_question_backward(params, qc, fuse_backward(params, fc, head_backward(params, h, dlog, grads), grads), grads)
    elif debias == "mixing":
        qv, vc = encode_question(params, variant_ids)
        if mix_level == "question":
            h, _, fc = fuse(params, mix(q, qv, alpha), scenes, mode)
            loss, dlog = ce_loss(head(params, h), targets)
            dq = fuse_backward(params, fc, head_backward(params, h, dlog, grads), grads)
            encode_question_backward(params, qc, alpha * dq, grads)
            encode_question_backward(params, vc, (1.0 - alpha) * dq, grads)
        elif mix_level == "fused":
            h1, _, fc1 = fuse(params, q, scenes, mode)
            h2, _, fc2 = fuse(params, qv, scenes, mode)
            h = mix(h1, h2, alpha)
            loss, dlog = ce_loss(head(params, h), targets)
            dh = head_backward(params, h, dlog, grads)
            encode_question_backward(params, qc, fuse_backward(params, fc1, alpha * dh, grads), grads)
            encode_question_backward(params, vc, fuse_backward(params, fc2, (1.0 - alpha) * dh, grads), grads)
        else:
            raise ModelError(f"unknown mix level {mix_level!r}")
    elif debias == "contrastive":
        qv, vc = encode_question(params, variant_ids)
        h, _, fc = fuse(params, q, scenes, mode)
        hv, _, fcv = fuse(params, qv, scenes, mode)
        ce, dlog = ce_loss(head(params, h), targets)
        con, dh_con, dhv_con = contrastive_loss(h, hv)
        loss = ce + lam * con
        info = {"ce": ce, "con": con}
        dh = head_backward(params, h, dlog, grads) + lam * dh_con
        encode_question_backward(params, qc, fuse_backward(params, fc, dh, grads), grads)
        encode_question_backward(params, vc, fuse_backward(params, fcv, lam * dhv_con, grads), grads)
    else:
        raise ModelError(f"unknown debias method {debias!r}")
    return loss, grads, info


class Adam:
    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, g in grads.items():
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


# ---------------------------------------------------------------- estimator

def check_inputs(X, mode="full", need_variant=False) -> VQAInputs:
    if not isinstance(X, VQAInputs):
        if isinstance(X, tuple):
            X = VQAInputs(*X)
        else:
            raise ModelError(f"expected VQAInputs, got {type(X).__name__}")
    ids = np.asarray(X.ids)
    if ids.ndim != 2 or not np.issubdtype(ids.dtype, np.integer):
        raise ModelError("ids must be a 2-D integer array")
    scenes = None if X.scenes is None else np.asarray(X.scenes, dtype=np.float64)
    if mode == "full":
        if scenes is None or scenes.ndim != 3 or len(scenes) != len(ids):
            raise ModelError("full mode needs a (n, K, D_v) scene array aligned with the questions")
        if not np.isfinite(scenes).all():
            raise ModelError("scene features must be finite")
    var = None if X.variant_ids is None else np.asarray(X.variant_ids)
    if need_variant and var is None:
        raise ModelError("this debias method needs variant question ids")
    if var is not None and var.shape != ids.shape:
        raise ModelError("variant ids must have the same shape as ids")
    return VQAInputs(ids, scenes, var)


class VQAClassifier(ClassifierMixin, BaseEstimator):
    """Attention-pooled question encoder + object attention + fused classifier.

    Parameters follow scikit-learn conventions; ``fit`` takes a `VQAInputs` and
    answer indices (or answer distributions).  ``debias`` selects plain
    training, feature mixing with the variant question, or the contrastive
    objective; mixing also applies at prediction time when ``mix_at_eval``.
    """

    def __init__(self, mode="full", embed_dim=64, hidden_dim=128, epochs=15, batch_size=128,
                 lr=1e-3, init_scale=0.08, seed=0, debias="none", lam=1.0, alpha=0.5,
                 mix_level="question", mix_at_eval=True, vocab_size=None, n_answers=None,
                 max_len=None):
        self.mode = mode
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.init_scale = init_scale
        self.seed = seed
        self.debias = debias
        self.lam = lam
        self.alpha = alpha
        self.mix_level = mix_level
        self.mix_at_eval = mix_at_eval
        self.vocab_size = vocab_size
        self.n_answers = n_answers
        self.max_len = max_len

    def _check_config(self):
        if self.mode not in ("full", "q_only"):
            raise ModelError(f"mode must be 'full' or 'q_only', got {self.mode!r}")
        if self.debias not in ("none", "mixing", "contrastive"):
            raise ModelError(f"unknown debias method {self.debias!r}")
        if self.mix_level not in ("question", "fused"):
            raise ModelError(f"unknown mix level {self.mix_level!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ModelError("alpha must lie in [0, 1]")
        if self.lam < 0:
            raise ModelError("lam must be non-negative")
        if self.epochs < 0 or self.batch_size < 1:
            raise ModelError("epochs must be >= 0 and batch_size >= 1")

    def fit(self, X, y, epoch_inputs: Callable[[int], VQAInputs] | None = None, on_epoch=None):
        """Train for ``epochs`` passes with Adam.

        `epoch_inputs(epoch)` may supply fresh inputs each epoch (re-sampled
        variants); `on_epoch(epoch, mean_loss)` is called after every epoch.
        """
        self._check_config()
        need_var = self.debias != "none"
        X = check_inputs(X, self.mode, need_var)
        y = np.asarray(y)
        if len(y) != len(X):
            raise ModelError("X and y have different lengths")
        n_answers = self.n_answers or (int(y.max()) + 1 if y.ndim == 1 else y.shape[1])
        self.classes_ = np.arange(n_answers)
        vocab_size = self.vocab_size or int(X.ids.max()) + 1
        max_len = self.max_len or X.ids.shape[1]
        scene_dim = X.scenes.shape[2] if X.scenes is not None else 1
        self.params_ = init_params(vocab_size, max_len, scene_dim, n_answers, self.embed_dim,
                                   self.hidden_dim, self.init_scale, self.seed)
        self.loss_curve_ = []
        opt = Adam(self.params_, lr=self.lr)
        rng = np.random.default_rng([self.seed, 1])
        for epoch in range(self.epochs):
            data = X if epoch_inputs is None else check_inputs(epoch_inputs(epoch), self.mode, need_var)
            order = rng.permutation(len(data))
            total = 0.0
            for start in range(0, len(order), self.batch_size):
                idx = order[start:start + self.batch_size]
                b = data.take(idx)
                loss, grads, _ = loss_and_grads(self.params_, b.ids, b.scenes, y[idx], self.mode, b.variant_ids,
                                                self.debias, self.lam, self.alpha, self.mix_level)
                if not np.isfinite(loss):
                    raise ModelError(f"non-finite loss at epoch {epoch}")
                opt.step(self.params_, grads)
                total += loss * len(idx)
            mean = total / len(order)
            if not np.isfinite(mean):
                raise ModelError(f"non-finite loss at epoch {epoch}")
            self.loss_curve_.append(mean)
            if on_epoch is not None:
                on_epoch(epoch, mean)
        return self

    def encode(self, X, batch_size=1024) -> Encodings:
        """Forward pass returning every intermediate the analyses need."""
        check_is_fitted(self, "params_")
        mixing = self.debias == "mixing" and self.mix_at_eval
        X = check_inputs(X, self.mode, mixing)
        parts = []
        for start in range(0, len(X), batch_size):
            b = X.take(slice(start, start + batch_size))
            parts.append(forward(self.params_, b.ids, b.scenes, self.mode,
                                 b.variant_ids if mixing else None, self.alpha, self.mix_level))
        if not parts:
            raise ModelError("no samples to encode")
        cat = lambda xs: None if xs[0] is None else np.concatenate(xs)
        return Encodings(*(cat([getattr(p, f) for p in parts]) for f in ("q_enc", "token_attn", "obj_attn", "h", "p")))

    def predict_proba(self, X):
        return self.encode(X).p

    def predict(self, X):
        return predict_index(self.predict_proba(X))

    # checkpoints -------------------------------------------------------

    def save(self, path, extra: dict | None = None):
        """JSON dump with a shape header per tensor; floats round-trip exactly."""
        check_is_fitted(self, "params_")
        doc = {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "estimator": self.get_params(),
            "classes": self.classes_.tolist(),
            "loss_curve": list(self.loss_curve_),
            "tensors": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in self.params_.items()},
            "extra": extra or {},
        }
        atomic_write_text(path, json.dumps(doc, sort_keys=True))

    @classmethod
    def load(cls, path):
        doc = json.loads(Path(path).read_text())
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise ModelError(f"{path} is not a checkpoint")
        if doc.get("version") != CHECKPOINT_VERSION:
            raise ModelError(f"unsupported checkpoint version {doc.get('version')}")
        clf = cls(**doc["estimator"])
        clf.params_ = {k: np.asarray(t["data"], dtype=np.float64).reshape(t["shape"]) for k, t in doc["tensors"].items()}
        check_params(clf.params_)
        clf.classes_ = np.asarray(doc["classes"])
        clf.loss_curve_ = doc["loss_curve"]
        clf.extra_ = doc.get("extra", {})
        return clf


def dump_attention(token_attn_row, tokens) -> list[tuple[str, float]]:
    """(word, weight) pairs for the non-pad positions of one question, renormalized to sum 1.

    `tokens` is the rendered token sequence aligned with the padded positions;
    ``None`` marks a padding slot.
    """
    pairs = [(tok, float(w)) for tok, w in zip(tokens, token_attn_row) if tok is not None]
    total = sum(w for _, w in pairs)
    if total <= 0:
        raise ModelError("no attention mass on the question's tokens")
    return [(tok, w / total) for tok, w in pairs]
