"""Slow reference implementations used as independent test oracles."""

import numpy as np


def brute_force_ranks(clip, p, d):
    T, H, W, C = clip.shape
    L = T // d
    ranks = np.zeros((L, H // p, W // p), dtype=np.int64)
    for t in range(L):
        a = t * d
        b = (t + 1) * d + d - 1 if t + 1 < L else t * d + d - 1
        for i in range(H // p):
            for j in range(W // p):
                pa = clip[a, i * p:(i + 1) * p, j * p:(j + 1) * p].astype(np.int64)
                pb = clip[b, i * p:(i + 1) * p, j * p:(j + 1) * p].astype(np.int64)
                ranks[t, i, j] = np.abs(pa - pb).sum()
    return ranks


def brute_force_mask(clip, p, d, k):
    ranks = brute_force_ranks(clip, p, d)
    L, Hp, Wp = ranks.shape
    n_keep = int(np.floor((1 - k) * L + 0.5))
    keep = np.zeros(ranks.shape, dtype=bool)
    for i in range(Hp):
        for j in range(Wp):
            order = sorted(range(L), key=lambda t: (ranks[t, i, j], t), reverse=True)
            for t in order[:n_keep]:
                keep[t, i, j] = True
    return keep
