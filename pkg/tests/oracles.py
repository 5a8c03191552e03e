"""Independent reference computations used only by the tests.

Everything here is deliberately naive: plain Python, exhaustive
enumeration, and ``math.fsum``.  None of it shares code with the package.
"""
from __future__ import annotations

import math
from functools import lru_cache


def compositions(N: int, M: int):
    """All loop sequences ``((l1, t1), ...)`` with sums exactly ``(N, M)``."""
    if N == 0 and M == 0:
        yield ()
        return
    for l in range(1, N + 1):
        for t in range(1, M + 1):
            for rest in compositions(N - l, M - t):
                yield ((l, t),) + rest


def composition_weight(loops, K, h):
    return math.prod(math.exp(h) * K(l + t) for l, t in loops)


def brute_zc(K, h, N, M):
    return math.fsum(composition_weight(c, K, h) for c in compositions(N, M))


def brute_zf(K, Kf, h, N, M):
    terms = []
    for i in range(N + 1):
        for j in range(M + 1):
            zc = 1.0 if (N - i, M - j) == (0, 0) else brute_zc(K, h, N - i, M - j)
            terms.append(Kf(i) * Kf(j) * zc)
    return math.fsum(terms)


def trajectory_law(K, h, N, M):
    """Exact law of the constrained trajectory as a dict composition -> probability."""
    w = {c: composition_weight(c, K, h) for c in compositions(N, M)}
    z = math.fsum(w.values())
    return {c: v / z for c, v in w.items() if v > 0}


def free_end_law(K, Kf, h, N, M):
    """Exact law of ``(V1, V2)`` under the free measure."""
    out = {}
    for i in range(N + 1):
        for j in range(M + 1):
            zc = 1.0 if (N - i, M - j) == (0, 0) else brute_zc(K, h, N - i, M - j)
            out[(i, j)] = Kf(i) * Kf(j) * zc
    z = math.fsum(out.values())
    return {k: v / z for k, v in out.items() if v > 0}


def hit_prob_by_paths(K, h, nh, N, M):
    """``P((N, M) in tau_hat)`` by summing tilted path probabilities.

    The tilted step law is ``K(l+t) exp(h - l nh)``; a path reaching
    ``(N, M)`` is any composition, so the probability is the sum of the
    products of step probabilities over compositions.
    """
    @lru_cache(maxsize=None)
    def reach(n, m):
        if n == 0 and m == 0:
            return 1.0
        terms = []
        for l in range(1, n + 1):
            for t in range(1, m + 1):
                p = K(l + t) * math.exp(h - l * nh)
                if p:
                    terms.append(p * reach(n - l, m - t))
        return math.fsum(terms)

    return reach(N, M)


def nh_two_point(p, q, h):
    """``N(h)`` for masses ``K(2)=p, K(3)=q``: ``q x^2 + (p + q) x = e^-h``."""
    a, b, c = q, p + q, -math.exp(-h)
    x = (-b + math.sqrt(b * b - 4 * a * c)) / (2 * a)
    return -math.log(x)


def two_point_moments(p, q, h):
    """``(mu1, mu2)`` of the tilted law for the two-point kernel."""
    x = math.exp(-nh_two_point(p, q, h))
    e = math.exp(h)
    # pairs (l, t): (1,1) weight p x; (1,2) q x; (2,1) q x^2
    w11, w12, w21 = e * p * x, e * q * x, e * q * x * x
    mu1 = w11 + w12 + 2 * w21
    mu2 = w11 + 2 * w12 + w21
    return mu1, mu2


def symmetric_lambda(K, smax, h, lo=0.0, hi=None):
    """Root of ``sum_s K(s)(s-1) exp(h - lambda s) = 1`` by plain bisection."""
    hi = h if hi is None else hi
    f = lambda lam: math.fsum(K(s) * (s - 1) * math.exp(h - lam * s) for s in range(2, smax + 1)) - 1
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
