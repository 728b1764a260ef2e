"""Independent reference implementations used to verify the library.

Everything here is deliberately written the slow, obvious way (explicit
loops, pure python floats) and never calls into the code paths it checks.
"""

from __future__ import annotations

import math

import numpy as np


def finite_difference_grads(f, arrays: list[np.ndarray], h: float = 1e-3) -> list[np.ndarray]:
    """Central-difference gradients of scalar f(arrays) w.r.t. each array.

    Arrays must be float64; f is re-evaluated from scratch per coordinate.
    """
    grads = []
    for a in arrays:
        assert a.dtype == np.float64
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = f(arrays)
            flat[i] = orig - h
            fm = f(arrays)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def max_rel_err(analytic: list[np.ndarray], numeric: list[np.ndarray]) -> float:
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.abs(a) + np.abs(n) + 1e-8
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def adam_scalar_steps(
    theta0: float,
    grad_fn,
    steps: int,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> list[float]:
    """Textbook bias-corrected Adam on a scalar, pure python floats."""
    theta = theta0
    m = 0.0
    v = 0.0
    out = []
    for t in range(1, steps + 1):
        g = grad_fn(theta)
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = m / (1.0 - beta1**t)
        v_hat = v / (1.0 - beta2**t)
        theta = theta - lr * m_hat / (math.sqrt(v_hat) + eps)
        out.append(theta)
    return out


def auc_pairwise(labels: np.ndarray, scores: np.ndarray) -> float:
    """Brute-force P(score+ > score-) + 0.5 P(tie) over all pairs."""
    pos = [float(s) for s, y in zip(scores, labels) if y == 1]
    neg = [float(s) for s, y in zip(scores, labels) if y == 0]
    assert pos and neg
    wins = 0.0
    for p in pos:
        for n in neg:
            if p > n:
                wins += 1.0
            elif p == n:
                wins += 0.5
    return wins / (len(pos) * len(neg))


def logloss_direct(labels, probs, eps: float = 1e-7) -> float:
    total = 0.0
    for y, p in zip(labels, probs):
        p = min(max(float(p), eps), 1.0 - eps)
        total += -(y * math.log(p) + (1 - y) * math.log(1.0 - p))
    return total / len(labels)


def cin_brute_force(
    E: np.ndarray,
    layer_weights: list[np.ndarray],
    head_w: np.ndarray,
    head_b: float,
) -> np.ndarray:
    """Compressed-interaction logits by materializing every Hadamard product.

    E: (B, F, d). layer_weights[k]: (H_k, H_{k-1}, F). The h-th map of layer
    k is sum_{i,j} W[h,i,j] * (X_prev[i] * X0[j]); each map is sum-pooled
    over d and all pooled values feed a linear head.
    """
    B, F, d = E.shape
    X0 = E
    X_prev = E
    pooled_all = []
    for W in layer_weights:
        H, H_prev, F_w = W.shape
        assert H_prev == X_prev.shape[1] and F_w == F
        X_next = np.zeros((B, H, d), dtype=np.float64)
        for b in range(B):
            for h in range(H):
                acc = np.zeros(d, dtype=np.float64)
                for i in range(H_prev):
                    for j in range(F):
                        acc += W[h, i, j] * (X_prev[b, i] * X0[b, j])
                X_next[b, h] = acc
        pooled_all.append(X_next.sum(axis=2))
        X_prev = X_next
    feats = np.concatenate(pooled_all, axis=1)
    return feats @ head_w + head_b


def stub_vector_reference(text: str, dim: int, salt: str) -> np.ndarray:
    """Recompute the documented stub rule: SHA-256(salt+text) seeds PCG64,
    which emits dim uniforms in [-1, 1]."""
    import hashlib

    digest = hashlib.sha256((salt + text).encode("utf-8")).digest()
    seed = int.from_bytes(digest, "big")
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.uniform(-1.0, 1.0, size=dim).astype(np.float32)
