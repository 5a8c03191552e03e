"""Exact polymer samplers and estimators of ``P((N, M) in tau_hat)``.

Backward sampling walks from ``(N, M)`` to the origin, choosing each
predecessor ``(n - l, m - t)`` with probability
``e^h K(l + t) Z(n - l, m - t) / Z(n, m)``.  Candidates are grouped by loop
length ``s = l + t`` (a contiguous run of anti-diagonal ``n + m - s``) and
scanned in increasing ``s``; the position inside the run is then located by
bisection on the diagonal prefix sums.

Random numbers come from ``numpy.random.Generator`` over the counter-based
Philox bit generator; independent streams are spawned from one
``SeedSequence``.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np
from numba import njit

from .errors import OutOfDomainError, UnreachableTargetError
from .loop_law import FreeEndWeights, TiltedLaw
from .partition import (NO_EXP, PartitionTable, _CANCEL_RATIO, _TINY, free_end_terms, run_total)


def make_rng(seed) -> np.random.Generator:
    """Philox generator from an int seed, a ``SeedSequence`` or an existing generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seed))


def spawn_rngs(seed, count: int) -> list:
    """``count`` independent Philox streams derived from ``seed`` (int, sequence or generator)."""
    if isinstance(seed, np.random.Generator):
        return seed.spawn(count)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.Generator(np.random.Philox(child)) for child in ss.spawn(count)]


@dataclass(frozen=True)
class Trajectory:
    loops: tuple
    free_end_1: int = 0
    free_end_2: int = 0

    @property
    def kappa(self) -> int:
        return len(self.loops)

    @property
    def N(self) -> int:
        return sum(l for l, _ in self.loops) + self.free_end_1

    @property
    def M(self) -> int:
        return sum(t for _, t in self.loops) + self.free_end_2

    def to_json(self) -> dict:
        return {"loops": [[int(l), int(t)] for l, t in self.loops],
                "v1": int(self.free_end_1), "v2": int(self.free_end_2)}

    @classmethod
    def from_json(cls, obj) -> "Trajectory":
        return cls(tuple((int(l), int(t)) for l, t in obj["loops"]), int(obj.get("v1", 0)),
                   int(obj.get("v2", 0)))


@dataclass(frozen=True)
class TrajectoryBatch:
    """Flat storage of many trajectories: loops of sample ``k`` are rows ``offsets[k]:offsets[k+1]``."""

    l: np.ndarray
    t: np.ndarray
    offsets: np.ndarray
    v1: np.ndarray
    v2: np.ndarray

    def __len__(self) -> int:
        return len(self.v1)

    def __getitem__(self, k: int) -> Trajectory:
        a, b = self.offsets[k], self.offsets[k + 1]
        return Trajectory(tuple(zip(self.l[a:b].tolist(), self.t[a:b].tolist())),
                          int(self.v1[k]), int(self.v2[k]))

    def __iter__(self) -> Iterator[Trajectory]:
        return (self[k] for k in range(len(self)))

    def order_stats(self):
        """Arrays ``(kappa, M1, M2)`` for every trajectory."""
        return _order_stats(self.t, self.offsets)


@njit(cache=True)
def _order_stats(t, offsets):
    n = len(offsets) - 1
    kappa = np.empty(n, np.int64)
    m1 = np.zeros(n, np.int64)
    m2 = np.zeros(n, np.int64)
    for k in range(n):
        a, b = offsets[k], offsets[k + 1]
        kappa[k] = b - a
        for r in range(a, b):
            v = t[r]
            if v > m1[k]:
                m2[k] = m1[k]
                m1[k] = v
            elif v > m2[k]:
                m2[k] = v
    return kappa, m1, m2


# ---------------------------------------------------------------------------
# backward sampling kernels


@njit(cache=True)
def _pick_in_run(fr, ex, PF, SF, E, dp, lo, hi, u):
    """Index ``i`` in ``[lo, hi]`` drawn proportionally to ``Z(i, dp - i)``."""
    a = PF[dp, lo]
    b = SF[dp, hi + 1]
    if a <= b:
        seg = PF[dp, hi + 1] - a
        exc = a
    else:
        seg = SF[dp, lo] - b
        exc = b
    if seg <= _TINY or exc > _CANCEL_RATIO * seg:
        kmax = NO_EXP
        for i in range(lo, hi + 1):
            if fr[i, dp - i] != 0.0 and ex[i, dp - i] > kmax:
                kmax = ex[i, dp - i]
        tot = 0.0
        for i in range(lo, hi + 1):
            if fr[i, dp - i] != 0.0:
                tot += math.ldexp(fr[i, dp - i], ex[i, dp - i] - kmax)
        target = u * tot
        acc = 0.0
        last = lo
        for i in range(lo, hi + 1):
            if fr[i, dp - i] != 0.0:
                acc += math.ldexp(fr[i, dp - i], ex[i, dp - i] - kmax)
                last = i
                if acc > target:
                    return i
        return last
    target = u * seg
    # smallest i with cumulative(i) > target, cumulative(i) = sum over [lo, i]
    left = lo
    right = hi
    use_prefix = a <= b
    while left < right:
        mid = (left + right) // 2
        if use_prefix:
            c = PF[dp, mid + 1] - a
        else:
            c = SF[dp, lo] - SF[dp, mid + 1]
        if c > target:
            right = mid
        else:
            left = mid + 1
    i = left
    while i > lo and fr[i, dp - i] == 0.0:
        i -= 1
    return i


@njit(cache=True)
def _backward(fr, ex, PF, SF, E, Kh, n, m, rng, out_l, out_t, start):
    """Fill loops from ``(n, m)`` back to the origin; returns the new write position."""
    k = start
    while n > 0 or m > 0:
        d = n + m
        base = ex[n, m]
        target = rng.random() * fr[n, m]
        acc = 0.0
        chosen = -1
        for s in range(2, d + 1):
            w = Kh[s]
            if w == 0.0:
                continue
            dp = d - s
            lo = max(0, dp - m + 1)
            hi = min(n - 1, dp)
            if lo > hi:
                continue
            sf, se = run_total(fr, ex, PF, SF, E, dp, lo, hi)
            if sf == 0.0:
                continue
            acc += math.ldexp(w * sf, se - base)
            chosen = s
            if acc > target:
                break
        dp = d - chosen
        lo = max(0, dp - m + 1)
        hi = min(n - 1, dp)
        i = _pick_in_run(fr, ex, PF, SF, E, dp, lo, hi, rng.random())
        j = dp - i
        out_l[k] = n - i
        out_t[k] = m - j
        k += 1
        n = i
        m = j
    # loops were written from the end backwards; restore forward order
    a = start
    b = k - 1
    while a < b:
        out_l[a], out_l[b] = out_l[b], out_l[a]
        out_t[a], out_t[b] = out_t[b], out_t[a]
        a += 1
        b -= 1
    return k


@njit(cache=True, nogil=True)
def _sample_batch(fr, ex, PF, SF, E, Kh, N, M, count, rng, cum, ncols):
    """``count`` trajectories; free ends drawn from ``cum`` when it is non-empty."""
    cap = count * 4 + 16
    out_l = np.empty(cap, np.int64)
    out_t = np.empty(cap, np.int64)
    offsets = np.zeros(count + 1, np.int64)
    v1 = np.zeros(count, np.int64)
    v2 = np.zeros(count, np.int64)
    pos = 0
    for c in range(count):
        i = 0
        j = 0
        if len(cum) > 0:
            idx = np.searchsorted(cum, rng.random() * cum[-1], side="right")
            if idx >= len(cum):
                idx = len(cum) - 1
            i = idx // ncols
            j = idx % ncols
        v1[c] = i
        v2[c] = j
        # at most min(n, m) loops remain; grow buffers when needed
        need = pos + min(N - i, M - j) + 1
        if need > len(out_l):
            size = max(need, 2 * len(out_l))
            nl = np.empty(size, np.int64)
            nt = np.empty(size, np.int64)
            nl[:pos] = out_l[:pos]
            nt[:pos] = out_t[:pos]
            out_l = nl
            out_t = nt
        pos = _backward(fr, ex, PF, SF, E, Kh, N - i, M - j, rng, out_l, out_t, pos)
        offsets[c + 1] = pos
    return out_l[:pos], out_t[:pos], offsets, v1, v2


def _check_table(table: PartitionTable) -> PartitionTable:
    table = table.ensure_prefix()
    if not np.any(table.kernel):
        raise ValueError("table carries no loop weights; reload it with its loop law")
    return table


def _free_end_cdf(table: PartitionTable, fw: FreeEndWeights) -> np.ndarray:
    f, k = free_end_terms(table, fw)
    nz = f != 0
    if not np.any(nz):
        raise UnreachableTargetError("Z^f vanishes at this endpoint")
    kmax = int(k[nz].max())
    w = np.where(nz, np.ldexp(f, np.where(nz, k - kmax, 0)), 0.0)
    return np.cumsum(w.ravel())


def sample_constrained_batch(table: PartitionTable, count: int, rng) -> TrajectoryBatch:
    table = _check_table(table)
    if table.mantissa[table.N, table.M] == 0.0:
        raise UnreachableTargetError(f"Z^c({table.N}, {table.M}) = 0")
    out = _sample_batch(table.mantissa, table.exponent, table.diag_prefix, table.diag_suffix,
                        table.diag_exp, table.kernel, table.N, table.M, int(count), make_rng(rng),
                        np.zeros(0), 1)
    return TrajectoryBatch(*out)


def sample_free_batch(table: PartitionTable, fw: FreeEndWeights, count: int, rng) -> TrajectoryBatch:
    table = _check_table(table)
    cum = _free_end_cdf(table, fw)
    out = _sample_batch(table.mantissa, table.exponent, table.diag_prefix, table.diag_suffix,
                        table.diag_exp, table.kernel, table.N, table.M, int(count), make_rng(rng),
                        cum, table.M + 1)
    return TrajectoryBatch(*out)


def sample_constrained(table: PartitionTable, rng) -> Trajectory:
    """One exact draw from the constrained polymer measure at ``(N, M)``."""
    return sample_constrained_batch(table, 1, rng)[0]


def sample_free(table: PartitionTable, fw: FreeEndWeights, rng) -> Trajectory:
    """One exact draw from the free polymer measure at ``(N, M)``."""
    return sample_free_batch(table, fw, 1, rng)[0]


# ---------------------------------------------------------------------------
# tilted law: forward sampling


def total_length_pmf(tl: TiltedLaw, smax: int) -> np.ndarray:
    """``P(l + t = s)`` for ``0 <= s <= smax`` under the tilted law."""
    s = np.arange(smax + 1, dtype=float)
    x = tl.x
    geo = x * -np.expm1((s - 1) * math.log(x)) / (1 - x)
    p = math.exp(tl.h) * np.asarray(tl.base.K(np.arange(smax + 1)), dtype=float) * geo
    p[:2] = 0.0
    return p


@njit(cache=True)
def _l_given_s(s, log_x, u):
    """Geometric law of ratio ``x`` truncated to ``{1, ..., s-1}``, by inversion."""
    q = -math.expm1((s - 1) * log_x)
    l = int(math.ceil(math.log1p(-u * q) / log_x))
    if l < 1:
        l = 1
    if l > s - 1:
        l = s - 1
    return l


@njit(cache=True)
def _draw_increments(cdf, log_x, size, rng, out_l, out_t):
    """Draw from the table part; entries needing the tail are marked ``-1``."""
    for k in range(size):
        u = rng.random()
        s = np.searchsorted(cdf, u, side="right")
        if s >= len(cdf):
            out_l[k] = -1
            out_t[k] = -1
            continue
        l = _l_given_s(s, log_x, rng.random())
        out_l[k] = l
        out_t[k] = s - l


def _tail_total_length(tl: TiltedLaw, start: int, u: float) -> int:
    """Inverse CDF of the total length beyond ``start`` (analytic tail only)."""
    law = tl.base
    x = tl.x
    eh = math.exp(tl.h)

    def survival(a):  # P(S > a) for a >= start
        return eh * x / (1 - x) * law.power_tail(0, a) - eh / (1 - x) * _geo_tail(a)

    def _geo_tail(a):
        n = np.arange(a + 1, a + 1 + int(math.ceil(41.5 / tl.nh)) + 2)
        return float(np.sum(law.K(n) * x ** (n - 1) * x))

    total = survival(start)
    target = u * total  # draw S > start with P(S > v | S > start) compared to 1 - u
    lo, hi = start, 2 * start
    while survival(hi) > target:
        lo, hi = hi, 2 * hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if survival(mid) > target:
            lo = mid
        else:
            hi = mid
    return hi


def sample_tilted_increments(tl: TiltedLaw, size: int, rng) -> np.ndarray:
    """``size`` draws ``(l, t)`` from the tilted law, as an ``(size, 2)`` array."""
    rng = make_rng(rng)
    smax = tl.base.s_max
    cdf = np.cumsum(total_length_pmf(tl, smax))
    out_l = np.empty(size, np.int64)
    out_t = np.empty(size, np.int64)
    log_x = -tl.nh
    _draw_increments(cdf, log_x, int(size), rng, out_l, out_t)
    for k in np.nonzero(out_l < 0)[0]:
        if not tl.base.has_tail:  # rounding at the top of a finite table
            s = int(np.nonzero(np.diff(np.concatenate([[0.0], cdf])) > 0)[0][-1])
        else:
            s = _tail_total_length(tl, smax, rng.random())
        l = int(_l_given_s(s, log_x, rng.random()))
        out_l[k], out_t[k] = l, s - l
    return np.column_stack([out_l, out_t])


def sample_tilted_increment(tl: TiltedLaw, rng) -> tuple:
    l, t = sample_tilted_increments(tl, 1, rng)[0]
    return int(l), int(t)


# ---------------------------------------------------------------------------
# hitting-probability estimators


@dataclass(frozen=True)
class HitEstimate:
    p_hat: float
    stderr: float
    n_samples: int
    method: str
    restricted: float | None = None
    complement: float | None = None

    def to_json(self) -> dict:
        out = {"p_hat": self.p_hat, "stderr": self.stderr, "n": self.n_samples, "method": self.method}
        if self.restricted is not None:
            out["restricted"] = self.restricted
            out["complement"] = self.complement
        return out


@njit(cache=True)
def _build_alias(p):
    """Vose alias tables for probabilities ``p`` (summing to one)."""
    n = len(p)
    prob = np.zeros(n)
    alias = np.zeros(n, np.int64)
    scaled = p * n
    small = np.empty(n, np.int64)
    large = np.empty(n, np.int64)
    ns = 0
    nl = 0
    for i in range(n):
        if scaled[i] < 1.0:
            small[ns] = i
            ns += 1
        else:
            large[nl] = i
            nl += 1
    while ns > 0 and nl > 0:
        ns -= 1
        s = small[ns]
        nl -= 1
        g = large[nl]
        prob[s] = scaled[s]
        alias[s] = g
        scaled[g] = scaled[g] + scaled[s] - 1.0
        if scaled[g] < 1.0:
            small[ns] = g
            ns += 1
        else:
            large[nl] = g
            nl += 1
    for k in range(nl):
        prob[large[k]] = 1.0
    for k in range(ns):
        prob[small[k]] = 1.0
    return prob, alias


@njit(cache=True, inline="always")
def _alias_draw(prob, alias, u):
    n = len(prob)
    v = u * n
    i = int(v)
    if i >= n:
        i = n - 1
    if v - i < prob[i]:
        return i
    return alias[i]


class _PairTable:
    """Alias sampler over pairs ``(l, t)`` with a final escape entry (``l = -1``)."""

    def __init__(self, tl: TiltedLaw, l_max: int, t_lo: int, t_hi: int, scale: float = 1.0):
        ls = np.arange(1, l_max + 1)
        ts = np.arange(t_lo, t_hi + 1)
        if len(ts) == 0 or len(ls) == 0:
            w = np.zeros(0)
            L = np.zeros(0, np.int64)
            T = np.zeros(0, np.int64)
        else:
            Lg, Tg = np.meshgrid(ls, ts, indexing="ij")
            w = np.asarray(tl.pmf(Lg, Tg), dtype=float).ravel() / scale
            L, T = Lg.ravel(), Tg.ravel()
            keep = w > 0
            w, L, T = w[keep], L[keep], T[keep]
        escape = max(0.0, 1.0 - math.fsum(w))
        self.mass = math.fsum(w)
        p = np.concatenate([w, [escape]])
        p = p / p.sum()
        self.L = np.concatenate([L, [-1]]).astype(np.int64)
        self.T = np.concatenate([T, [-1]]).astype(np.int64)
        self.prob, self.alias = _build_alias(p)


@njit(cache=True, nogil=True)
def _naive_paths(prob, alias, L, T, N, M, n, rng, cap, jlo, jhi):
    """Return ``(hits, hits outside the one-jump event)`` over ``n`` paths."""
    hits = 0
    other = 0
    for _ in range(n):
        a = 0
        b = 0
        in_j = 0
        over = 0
        while True:
            k = _alias_draw(prob, alias, rng.random())
            l = L[k]
            if l < 0:
                break
            t = T[k]
            a += l
            b += t
            if jlo <= t <= jhi:
                in_j += 1
            elif t > cap:
                over += 1
            if a >= N or b >= M:
                if a == N and b == M:
                    hits += 1
                    if not (in_j == 1 and over == 0):
                        other += 1
                break
    return hits, other


@njit(cache=True, nogil=True)
def _onejump_paths(jprob, jalias, JL, JT, wprob, walias, WL, WT, N, M, n, rng):
    """Sums of ``(kappa)`` and ``(kappa^2)`` over hitting samples (jump first)."""
    s1 = 0.0
    s2 = 0.0
    for _ in range(n):
        k = _alias_draw(jprob, jalias, rng.random())
        x = JL[k]
        if x < 0:
            continue
        tx = N - x
        ty = M - JT[k]
        if tx == 0 and ty == 0:
            s1 += 1.0
            s2 += 1.0
            continue
        if tx <= 0 or ty <= 0:
            continue
        a = 0
        b = 0
        steps = 0
        while True:
            q = _alias_draw(wprob, walias, rng.random())
            l = WL[q]
            if l < 0:
                break
            a += l
            b += WT[q]
            steps += 1
            if a >= tx or b >= ty:
                if a == tx and b == ty:
                    kap = steps + 1.0
                    s1 += kap
                    s2 += kap * kap
                break
    return s1, s2


def _run_streams(fn, n_samples: int, rng, streams: int, threads: int):
    """Split ``n_samples`` over ``streams`` independent generators and run them."""
    if streams <= 1:
        return [fn(int(n_samples), make_rng(rng))]
    gens = spawn_rngs(rng, streams)
    sizes = [n_samples // streams + (1 if k < n_samples % streams else 0) for k in range(streams)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            return list(pool.map(fn, sizes, gens))
    return [fn(sz, g) for sz, g in zip(sizes, gens)]


def estimate_hit_naive(tl: TiltedLaw, N: int, M: int, n_samples: int, rng, streams: int = 1,
                       threads: int = 1) -> HitEstimate:
    """Fraction of independent tilted renewal paths that visit ``(N, M)``."""
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    tab = _PairTable(tl, N, 1, M)
    parts = _run_streams(
        lambda n, g: _naive_paths(tab.prob, tab.alias, tab.L, tab.T, N, M, n, g, M, M + 1, M),
        n_samples, rng, streams, threads)
    hits = sum(p[0] for p in parts)
    p = hits / n_samples
    return HitEstimate(p, math.sqrt(p * (1 - p) / n_samples), int(n_samples), "naive")


@dataclass(frozen=True)
class JumpWindow:
    cap: int
    lo: int
    hi: int

    @property
    def empty(self) -> bool:
        return self.lo > self.hi


def default_jump_window(tl: TiltedLaw, N: int, M: int, eps: float = 0.1, cap: int | None = None,
                        half_width: int | None = None) -> JumpWindow:
    """Cap ``m_N/eps`` on ordinary loops and window ``t_N +- a_N/eps`` for the big one."""
    t_N = M - tl.gamma_c * N
    if t_N <= 0:
        raise OutOfDomainError(f"t_N = {t_N:.6g} is not positive")
    if cap is None:
        cap = int(math.ceil(tl.scaling_m(N) / eps))
    if half_width is None:
        half_width = int(math.ceil(tl.scaling_a(N) / eps))
    lo = max(cap + 1, int(math.floor(t_N - half_width)))
    hi = int(math.ceil(t_N + half_width))
    return JumpWindow(int(cap), lo, hi)


def estimate_hit_onejump(tl: TiltedLaw, N: int, M: int, n_samples: int, rng, eps: float = 0.1,
                         cap: int | None = None, half_width: int | None = None,
                         complement: bool = True, streams: int = 1, threads: int = 1) -> HitEstimate:
    """One-big-jump estimator of ``P((N, M) in tau_hat)``.

    The restricted event has exactly one loop with second coordinate in the
    window ``J`` and every other loop at most ``cap``.  By exchangeability
    its probability is ``sum_k k P(first loop in J, others capped, kappa = k)``,
    so the jump is drawn first from the tilted law restricted to ``J`` and
    the remaining walk is simulated with killing above ``cap``; a hit after
    ``kappa`` loops scores ``P(tau2 in J) * kappa``.  With ``complement`` the
    rest of the hitting probability is estimated from plain paths, using
    the same number of samples.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    win = default_jump_window(tl, N, M, eps, cap, half_width)
    jump_rng, rest_rng = spawn_rngs(rng, 2)
    restricted = 0.0
    var_r = 0.0
    if not win.empty:
        t_hi = min(win.hi, M)
        qJ = float(np.sum(tl.marginal2_pmf(np.arange(win.lo, win.hi + 1))))
        if qJ > 0 and win.lo <= t_hi:
            jt = _PairTable(tl, N, win.lo, t_hi, scale=qJ)
            wt = _PairTable(tl, N, 1, min(win.cap, M))
            parts = _run_streams(
                lambda n, g: _onejump_paths(jt.prob, jt.alias, jt.L, jt.T, wt.prob, wt.alias,
                                            wt.L, wt.T, N, M, n, g),
                n_samples, jump_rng, streams, threads)
            s1 = sum(p[0] for p in parts)
            s2 = sum(p[1] for p in parts)
            mean = s1 / n_samples
            restricted = qJ * mean
            var_r = qJ * qJ * max(s2 / n_samples - mean * mean, 0.0) / n_samples
    if not complement:
        return HitEstimate(restricted, math.sqrt(var_r), int(n_samples), "one_big_jump", restricted, None)
    tab = _PairTable(tl, N, 1, M)
    parts = _run_streams(
        lambda n, g: _naive_paths(tab.prob, tab.alias, tab.L, tab.T, N, M, n, g, win.cap, win.lo, win.hi),
        n_samples, rest_rng, streams, threads)
    other = sum(p[1] for p in parts)
    pc = other / n_samples
    var_c = pc * (1 - pc) / n_samples
    return HitEstimate(restricted + pc, math.sqrt(var_r + var_c), int(n_samples), "one_big_jump",
                       restricted, pc)

