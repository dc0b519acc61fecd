"""Central finite-difference gradient checking for the model's loss."""
import numpy as np

from vqaprobe.model import init_params, loss_and_grads

FLOOR = 1e-7


def rel_error(a, b) -> float:
    """||a - b|| / max(||a||, ||b||, FLOOR); the floor keeps exactly-zero gradients comparable."""
    a, b = np.ravel(a), np.ravel(b)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), FLOOR))


def numeric_grads(f, params, eps=1e-4):
    out = {}
    for k, v in params.items():
        g = np.zeros_like(v)
        it = np.nditer(v, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = v[i]
            v[i] = old + eps
            fp = f()
            v[i] = old - eps
            fm = f()
            v[i] = old
            g[i] = (fp - fm) / (2 * eps)
        out[k] = g
    return out


def random_batch(seed, n=4, vocab=11, L=5, K=3, Dv=7, A=5, d=6, dh=7, soft=False):
    rng = np.random.default_rng(seed)
    params = init_params(vocab, L, Dv, A, d, dh, scale=0.5, seed=seed)
    for k in ("attn_b", "proj_b", "fuse_b", "cls_b"):   # non-zero biases exercise their gradients
        params[k] = rng.normal(0, 0.3, size=params[k].shape)
    lengths = rng.integers(1, L + 1, size=n)
    ids = np.zeros((n, L), dtype=np.int64)
    var = np.zeros((n, L), dtype=np.int64)
    for r, m in enumerate(lengths):
        ids[r, :m] = rng.integers(1, vocab, size=m)
        var[r, :m] = rng.permutation(ids[r, :m])
    scenes = rng.normal(size=(n, K, Dv))
    if soft:
        targets = rng.dirichlet(np.ones(A), size=n)
    else:
        targets = rng.integers(0, A, size=n)
    return params, ids, var, scenes, targets


CASES = [
    dict(mode="full", debias="none"),
    dict(mode="q_only", debias="none"),
    dict(mode="full", debias="contrastive", lam=0.7),
    dict(mode="full", debias="mixing", alpha=0.3, mix_level="question"),
    dict(mode="full", debias="mixing", alpha=0.6, mix_level="fused"),
]


def check_case(seed, case, eps=1e-4, soft=False) -> dict:
    """Max per-tensor relative error for one random batch and objective."""
    params, ids, var, scenes, targets = random_batch(seed, soft=soft)
    kw = dict(case)
    mode = kw.pop("mode")
    sc = scenes if mode == "full" else None
    vids = var if kw.get("debias", "none") != "none" else None
    f = lambda: loss_and_grads(params, ids, sc, targets, mode, vids, **kw)[0]
    _, analytic, _ = loss_and_grads(params, ids, sc, targets, mode, vids, **kw)
    numeric = numeric_grads(f, params, eps)
    return {k: rel_error(analytic[k], numeric[k]) for k in params}
