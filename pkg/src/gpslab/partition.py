"""Exact constrained and free partition functions.

``Z^c(n, m) = sum_{l<=n, t<=m} e^h K(l+t) Z^c(n-l, m-t)`` with ``Z^c(0,0) = 1``.

Values grow like ``exp(N F)``, so every cell is stored as a base-2
mantissa/exponent pair.  The fast evaluator walks anti-diagonals
``d = n + m``: all predecessors of a cell with a given loop length ``s``
lie on the single anti-diagonal ``d - s`` and form a contiguous run of it,
so each cell is a ``K``-weighted sum of run totals.  Run totals come from
per-diagonal prefix and suffix sums kept in a shared per-diagonal scale.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
from numba import njit, prange

from .errors import EmptyKernelError, InconsistencyError, OutOfDomainError
from .loop_law import FreeEndWeights, LoopLaw

NO_EXP = np.iinfo(np.int64).min // 4
# a run total is recomputed cell by cell when the subtracted prefix exceeds it
# by more than this factor, or when it is close to the subnormal range
_CANCEL_RATIO = 64.0
_TINY = 2.0 ** -900

MAGIC = b"GPSZ1"


@dataclass(frozen=True)
class ScaledValue:
    """``mantissa * 2**exponent`` with mantissa in ``[1, 2)``, or ``(0, 0)``."""

    mantissa: float
    exponent: int

    def __post_init__(self):
        m = float(self.mantissa)
        if m == 0.0:
            object.__setattr__(self, "exponent", 0)
        elif not (1.0 <= m < 2.0):
            raise ValueError(f"mantissa {m} outside [1, 2)")
        object.__setattr__(self, "mantissa", m)
        object.__setattr__(self, "exponent", int(self.exponent))

    @classmethod
    def from_float(cls, x: float) -> "ScaledValue":
        if x < 0 or not math.isfinite(x):
            raise ValueError("scaled values are finite and non-negative")
        if x == 0:
            return cls(0.0, 0)
        f, e = math.frexp(x)
        return cls(2 * f, e - 1)

    @classmethod
    def from_log(cls, log_x: float) -> "ScaledValue":
        if log_x == -math.inf:
            return cls(0.0, 0)
        l2 = log_x / math.log(2.0)
        e = math.floor(l2)
        m = 2.0 ** (l2 - e)
        if m >= 2.0:
            m, e = m / 2, e + 1
        return cls(m, e)

    @property
    def is_zero(self) -> bool:
        return self.mantissa == 0.0

    def log(self) -> float:
        if self.is_zero:
            return -math.inf
        return math.log(self.mantissa) + self.exponent * math.log(2.0)

    def to_float(self) -> float:
        try:
            return math.ldexp(self.mantissa, self.exponent)
        except OverflowError:
            return math.inf

    def __mul__(self, other: float) -> "ScaledValue":
        if other == 0 or self.is_zero:
            return ScaledValue(0.0, 0)
        f, e = math.frexp(self.mantissa * other)
        return ScaledValue(2 * f, self.exponent + e - 1)

    __rmul__ = __mul__


# ---------------------------------------------------------------------------
# numba kernels


@njit(cache=True, inline="always")
def _accumulate(acc, acc_e, f, k):
    """Add ``f * 2**k`` to the running sum ``acc * 2**acc_e``."""
    if acc == 0.0:
        return f, k
    if k > acc_e:
        return math.ldexp(acc, acc_e - k) + f, k
    return acc + math.ldexp(f, k - acc_e), acc_e


@njit(cache=True, inline="always")
def _store(fr, ex, n, m, acc, acc_e):
    if acc > 0.0:
        f, e = math.frexp(acc)
        fr[n, m] = 2.0 * f
        ex[n, m] = acc_e + e - 1
    else:
        fr[n, m] = 0.0
        ex[n, m] = 0


@njit(cache=True)
def _finish_diagonal(d, N, M, fr, ex, PF, SF, E):
    i_lo = max(0, d - M)
    i_hi = min(N, d)
    emax = NO_EXP
    for i in range(i_lo, i_hi + 1):
        if fr[i, d - i] != 0.0 and ex[i, d - i] > emax:
            emax = ex[i, d - i]
    E[d] = emax
    PF[d, 0] = 0.0
    for i in range(N + 1):
        v = 0.0
        if emax != NO_EXP and i_lo <= i <= i_hi and fr[i, d - i] != 0.0:
            v = math.ldexp(fr[i, d - i], ex[i, d - i] - emax)
        PF[d, i + 1] = PF[d, i] + v
    SF[d, N + 1] = 0.0
    for i in range(N, -1, -1):
        v = 0.0
        if emax != NO_EXP and i_lo <= i <= i_hi and fr[i, d - i] != 0.0:
            v = math.ldexp(fr[i, d - i], ex[i, d - i] - emax)
        SF[d, i] = SF[d, i + 1] + v


@njit(cache=True)
def _direct_run(fr, ex, dp, lo, hi):
    """Exact sum of cells ``(i, dp - i)`` for ``i`` in ``[lo, hi]``."""
    acc = 0.0
    acc_e = 0
    for i in range(lo, hi + 1):
        f = fr[i, dp - i]
        if f != 0.0:
            acc, acc_e = _accumulate(acc, acc_e, f, ex[i, dp - i])
    return acc, acc_e


@njit(cache=True)
def run_total(fr, ex, PF, SF, E, dp, lo, hi):
    """Total of the run ``i in [lo, hi]`` on anti-diagonal ``dp`` as ``(f, k)``.

    Uses whichever of the prefix or suffix difference subtracts less, and
    falls back to direct summation when cancellation would cost precision.
    """
    if E[dp] == NO_EXP or lo > hi:
        return 0.0, 0
    a = PF[dp, lo]
    b = SF[dp, hi + 1]
    if a <= b:
        seg = PF[dp, hi + 1] - a
        exc = a
    else:
        seg = SF[dp, lo] - b
        exc = b
    if seg <= _TINY or exc > _CANCEL_RATIO * seg:
        return _direct_run(fr, ex, dp, lo, hi)
    return seg, E[dp]


@njit(cache=True, parallel=True)
def _fast_kernel(Kh, N, M, fr, ex, PF, SF, E, base_exp):
    fr[0, 0] = 1.0
    ex[0, 0] = base_exp
    _finish_diagonal(0, N, M, fr, ex, PF, SF, E)
    for d in range(1, N + M + 1):
        n_lo = max(1, d - M)
        n_hi = min(N, d - 1)
        for n in prange(n_lo, n_hi + 1):
            m = d - n
            acc = 0.0
            acc_e = 0
            for dp in range(0, d - 1):
                w = Kh[d - dp]
                if w == 0.0:
                    continue
                lo = max(0, dp - m + 1)
                hi = min(n - 1, dp)
                sf, se = run_total(fr, ex, PF, SF, E, dp, lo, hi)
                if sf == 0.0:
                    continue
                f, e2 = math.frexp(w * sf)
                acc, acc_e = _accumulate(acc, acc_e, f, se + e2)
            _store(fr, ex, n, m, acc, acc_e)
        _finish_diagonal(d, N, M, fr, ex, PF, SF, E)


@njit(cache=True)
def _naive_kernel(Kh, N, M, fr, ex, base_exp):
    fr[0, 0] = 1.0
    ex[0, 0] = base_exp
    for d in range(1, N + M + 1):
        for n in range(max(1, d - M), min(N, d - 1) + 1):
            m = d - n
            kmax = NO_EXP
            for l in range(1, n + 1):
                for t in range(1, m + 1):
                    w = Kh[l + t]
                    z = fr[n - l, m - t]
                    if w != 0.0 and z != 0.0:
                        f, e = math.frexp(w * z)
                        k = e + ex[n - l, m - t]
                        if k > kmax:
                            kmax = k
            acc = 0.0
            if kmax != NO_EXP:
                for l in range(1, n + 1):
                    for t in range(1, m + 1):
                        w = Kh[l + t]
                        z = fr[n - l, m - t]
                        if w != 0.0 and z != 0.0:
                            f, e = math.frexp(w * z)
                            acc += math.ldexp(f, e + ex[n - l, m - t] - kmax)
            _store(fr, ex, n, m, acc, kmax)


# ---------------------------------------------------------------------------
# tables


@dataclass(frozen=True, eq=False)
class PartitionTable:
    """Scaled table of ``Z^c(n, m)`` for ``0 <= n <= N``, ``0 <= m <= M``.

    ``diag_prefix[d, k]`` is the sum over ``i < k`` of ``Z^c(i, d - i)``
    in units of ``2**diag_exp[d]``; ``diag_suffix[d, k]`` sums ``i >= k``.
    """

    N: int
    M: int
    h: float
    mantissa: np.ndarray = field(repr=False)
    exponent: np.ndarray = field(repr=False)
    kernel: np.ndarray = field(repr=False)
    loop_cap: int | None = None
    diag_exp: np.ndarray | None = field(default=None, repr=False)
    diag_prefix: np.ndarray | None = field(default=None, repr=False)
    diag_suffix: np.ndarray | None = field(default=None, repr=False)

    def cell(self, n: int, m: int) -> ScaledValue:
        return ScaledValue(float(self.mantissa[n, m]), int(self.exponent[n, m]))

    def log_z(self, n: int, m: int) -> float:
        return self.cell(n, m).log()

    def log_table(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(self.mantissa) + self.exponent * math.log(2.0)

    def ensure_prefix(self) -> "PartitionTable":
        """Return a table carrying per-diagonal prefix sums (needed by the sampler)."""
        if self.diag_prefix is not None:
            return self
        E, PF, SF = _diagonal_sums(self.N, self.M, self.mantissa, self.exponent)
        return PartitionTable(self.N, self.M, self.h, self.mantissa, self.exponent, self.kernel,
                              self.loop_cap, E, PF, SF)


def _diagonal_sums(N, M, fr, ex):
    D = N + M
    E = np.full(D + 1, NO_EXP, dtype=np.int64)
    PF = np.zeros((D + 1, N + 2))
    SF = np.zeros((D + 1, N + 2))
    for d in range(D + 1):
        _finish_diagonal(d, N, M, fr, ex, PF, SF, E)
    return E, PF, SF


def loop_weights(law: LoopLaw, h: float, size: int, loop_cap: int | None = None) -> np.ndarray:
    """``e^h K(s)`` for ``0 <= s <= size``, zeroed beyond ``loop_cap``."""
    s = np.arange(size + 1)
    Kh = math.exp(h) * np.asarray(law.K(s), dtype=float)
    if loop_cap is not None:
        if loop_cap < 2:
            raise EmptyKernelError(f"loop_cap={loop_cap} leaves no admissible loop")
        Kh[loop_cap + 1:] = 0.0
    return Kh


def compute_zc(law: LoopLaw, h: float, N: int, M: int, loop_cap: int | None = None,
               method: str = "fast", _base_exponent: int = 0) -> PartitionTable:
    """Table of ``Z^c(n, m)`` up to ``(N, M)``.

    ``method="fast"`` costs ``O(N M (N + M))``; ``method="naive"`` is the
    direct ``O(N^2 M^2)`` recursion kept as a reference.  ``loop_cap``
    restricts the kernel to loops of total length at most ``loop_cap``
    without renormalizing.
    """
    N, M = int(N), int(M)
    if N < 1 or M < 1:
        raise OutOfDomainError("N and M must be at least 1")
    Kh = loop_weights(law, h, N + M, loop_cap)
    fr = np.zeros((N + 1, M + 1))
    ex = np.zeros((N + 1, M + 1), dtype=np.int64)
    if method == "fast":
        D = N + M
        E = np.full(D + 1, NO_EXP, dtype=np.int64)
        PF = np.zeros((D + 1, N + 2))
        SF = np.zeros((D + 1, N + 2))
        _fast_kernel(Kh, N, M, fr, ex, PF, SF, E, np.int64(_base_exponent))
        return PartitionTable(N, M, float(h), fr, ex, Kh, loop_cap, E, PF, SF)
    if method == "naive":
        _naive_kernel(Kh, N, M, fr, ex, np.int64(_base_exponent))
        return PartitionTable(N, M, float(h), fr, ex, Kh, loop_cap)
    raise ValueError(f"unknown method {method!r}")


def free_end_arrays(fw: FreeEndWeights, N: int, M: int):
    return (np.asarray(fw.weight(np.arange(N + 1)), dtype=float),
            np.asarray(fw.weight(np.arange(M + 1)), dtype=float))


def free_end_terms(table: PartitionTable, fw: FreeEndWeights):
    """Per-``(i, j)`` terms ``K_f(i) K_f(j) Z^c(N-i, M-j)`` as ``(f, k)`` arrays."""
    N, M = table.N, table.M
    kf1, kf2 = free_end_arrays(fw, N, M)
    z = table.mantissa[::-1, ::-1]  # z[i, j] = Z^c(N - i, M - j)
    e = table.exponent[::-1, ::-1]
    w = kf1[:, None] * kf2[None, :] * z
    f, e2 = np.frexp(w)
    return f, e2.astype(np.int64) + e


def compute_zf(law: LoopLaw, fw: FreeEndWeights, h: float, N: int, M: int,
               table: PartitionTable | None = None) -> ScaledValue:
    """``Z^f(N, M) = sum_{i<=N, j<=M} K_f(i) K_f(j) Z^c(N - i, M - j)``."""
    if table is None:
        table = compute_zc(law, h, N, M)
    if (table.N, table.M) != (N, M):
        raise ValueError("table dimensions do not match (N, M)")
    f, k = free_end_terms(table, fw)
    nz = f != 0
    if not np.any(nz):
        return ScaledValue(0.0, 0)
    kmax = int(k[nz].max())
    total = float(np.sum(np.ldexp(f[nz], k[nz] - kmax)))
    fm, e = math.frexp(total)
    return ScaledValue(2 * fm, kmax + e - 1)


def hitting_prob_exact(law: LoopLaw, h: float, N: int, M: int,
                       table: PartitionTable | None = None, nh: float | None = None) -> float:
    """``P((N, M) in tau_hat) = exp(-N N(h)) Z^c(N, M)``."""
    from .free_energy import solve_nh

    if nh is None:
        nh = solve_nh(law, h)
    if table is None:
        table = compute_zc(law, h, N, M)
    log_p = table.log_z(N, M) - N * nh
    p = math.exp(log_p) if log_p > -math.inf else 0.0
    if p > 1.0 + 1e-9:
        raise InconsistencyError(f"hitting probability {p} exceeds 1")
    return min(p, 1.0)


@dataclass(frozen=True)
class FreeEnergyEstimate:
    N_grid: tuple
    values: tuple
    extrapolated: float

    def as_list(self) -> list:
        return [*self.values, self.extrapolated]


def _extrapolate(N_grid, values) -> float:
    """Fit ``f_N = F + (a log N + b) / N`` on the last three points (two: drop log)."""
    pts = [(n, v) for n, v in zip(N_grid, values) if math.isfinite(v)]
    if not pts:
        return -math.inf
    if len(pts) == 1:
        return pts[0][1]
    if len(pts) == 2:
        (n1, f1), (n2, f2) = pts
        return (n2 * f2 - n1 * f1) / (n2 - n1)
    ns = np.array([p[0] for p in pts[-3:]], dtype=float)
    fs = np.array([p[1] for p in pts[-3:]])
    A = np.column_stack([np.ones(3), np.log(ns) / ns, 1.0 / ns])
    return float(np.linalg.solve(A, fs)[0])


def dp_free_energy(law: LoopLaw, h: float, gamma: float, N_grid) -> FreeEnergyEstimate:
    """``(1/N) log Z^c(N, floor(gamma N))`` along ``N_grid`` plus an extrapolated limit."""
    grid = [int(n) for n in N_grid]
    if not grid or any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("N_grid must be non-empty and increasing")
    Ms = [int(math.floor(gamma * n)) for n in grid]
    if min(Ms) < 1:
        raise OutOfDomainError("floor(gamma N) must be at least 1")
    table = compute_zc(law, h, grid[-1], max(Ms))
    values = tuple(table.log_z(n, m) / n for n, m in zip(grid, Ms))
    return FreeEnergyEstimate(tuple(grid), values, _extrapolate(grid, values))


# ---------------------------------------------------------------------------
# binary dump: magic, N, M (int64), h (float64), then per cell f64 mantissa + i64 exponent


_CELL = np.dtype([("mantissa", "<f8"), ("exponent", "<i8")])


def dump_table(table: PartitionTable, path) -> None:
    cells = np.empty((table.N + 1, table.M + 1), dtype=_CELL)
    cells["mantissa"] = table.mantissa
    cells["exponent"] = table.exponent
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<qqd", table.N, table.M, table.h))
        fh.write(cells.tobytes(order="C"))


def load_table(path, law: LoopLaw | None = None, loop_cap: int | None = None) -> PartitionTable:
    """Read a dumped table; pass ``law`` to restore the loop weights for sampling."""
    raw = Path(path).read_bytes()
    if raw[:5] != MAGIC:
        raise ValueError("not a partition table dump")
    N, M, h = struct.unpack_from("<qqd", raw, 5)
    cells = np.frombuffer(raw, dtype=_CELL, offset=5 + 24, count=(N + 1) * (M + 1))
    cells = cells.reshape(N + 1, M + 1)
    fr = np.ascontiguousarray(cells["mantissa"])
    ex = np.ascontiguousarray(cells["exponent"])
    Kh = loop_weights(law, h, N + M, loop_cap) if law is not None else np.zeros(N + M + 1)
    return PartitionTable(int(N), int(M), float(h), fr, ex, Kh, loop_cap).ensure_prefix()


def set_threads(n: int | None) -> None:
    """Bound the worker threads used by the anti-diagonal kernels."""
    if n:
        numba.set_num_threads(max(1, min(int(n), numba.config.NUMBA_NUM_THREADS)))
