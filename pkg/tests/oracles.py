"""Straightforward reference implementations used to cross-check the package.

These are deliberately naive (explicit loops, no vectorization, no shared
code with ``nrqi``) so that agreement is meaningful.
"""

import math
from collections import Counter

import numpy as np


def reflect_index(i, n):
    """Half-sample symmetric reflection: -1 -> 0, -2 -> 1, n -> n-1, n+1 -> n-2."""
    while i < 0 or i >= n:
        if i < 0:
            i = -i - 1
        if i >= n:
            i = 2 * n - i - 1
    return i


def window_weights(K, L, sigma_w):
    w = {}
    for k in range(-K, K + 1):
        for l in range(-L, L + 1):
            w[(k, l)] = math.exp(-(k * k + l * l) / (2 * sigma_w * sigma_w))
    total = sum(w.values())
    return {key: v / total for key, v in w.items()}


def brute_local_stats(img, K=3, L=3, sigma_w=7 / 6):
    M, N = img.shape
    w = window_weights(K, L, sigma_w)
    mu = np.zeros((M, N))
    sd = np.zeros((M, N))
    for i in range(M):
        for j in range(N):
            m = 0.0
            for (k, l), wk in w.items():
                m += wk * img[reflect_index(i + k, M), reflect_index(j + l, N)]
            v = 0.0
            for (k, l), wk in w.items():
                d = img[reflect_index(i + k, M), reflect_index(j + l, N)] - m
                v += wk * d * d
            mu[i, j] = m
            sd[i, j] = math.sqrt(v)
    return mu, sd


def brute_mscn(img, C=1.0, K=3, L=3, sigma_w=7 / 6):
    mu, sd = brute_local_stats(img, K, L, sigma_w)
    M, N = img.shape
    out = np.zeros((M, N))
    for i in range(M):
        for j in range(N):
            out[i, j] = (img[i, j] - mu[i, j]) / (sd[i, j] + C)
    return out


def brute_products(m):
    M, N = m.shape
    H = np.zeros((M, N - 1))
    V = np.zeros((M - 1, N))
    DL = np.zeros((M - 1, N - 1))
    DR = np.zeros((M - 1, N - 1))
    for i in range(M):
        for j in range(N - 1):
            H[i, j] = m[i, j] * m[i, j + 1]
    for i in range(M - 1):
        for j in range(N):
            V[i, j] = m[i, j] * m[i + 1, j]
    for i in range(M - 1):
        for j in range(N - 1):
            DR[i, j] = m[i, j] * m[i + 1, j + 1]
    for i in range(M - 1):
        for j in range(1, N):
            DL[i, j - 1] = m[i, j] * m[i + 1, j - 1]
    return H, V, DL, DR


def literal_mad(xs):
    xs = sorted(float(x) for x in xs)
    n = len(xs)
    med = xs[n // 2] if n % 2 else 0.5 * (xs[n // 2 - 1] + xs[n // 2])
    devs = sorted(abs(x - med) for x in xs)
    return devs[n // 2] if n % 2 else 0.5 * (devs[n // 2 - 1] + devs[n // 2])


def literal_fusion(scores):
    """``scores`` is a list of 4-tuples; returns per-frame fused values."""
    mads = [literal_mad([s[d] for s in scores]) for d in range(4)]
    total = sum(mads)
    return [sum(mads[d] / total * s[d] for d in range(4)) for s in scores]


def adjusted_rand_index(a, b):
    """ARI from the contingency table (Hubert and Arabie)."""
    def comb2(n):
        return n * (n - 1) / 2
    n = len(a)
    pairs = Counter(zip(a, b))
    ra = Counter(a)
    rb = Counter(b)
    index = sum(comb2(v) for v in pairs.values())
    sa = sum(comb2(v) for v in ra.values())
    sb = sum(comb2(v) for v in rb.values())
    expected = sa * sb / comb2(n)
    maximum = 0.5 * (sa + sb)
    if maximum == expected:
        return 1.0
    return (index - expected) / (maximum - expected)


def ggd_rho(alpha):
    return math.gamma(2 / alpha) ** 2 / (math.gamma(1 / alpha) * math.gamma(3 / alpha))
