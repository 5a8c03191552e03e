"""Closed-form asymptotic predictions for hitting probabilities and ``Z^f``.

All predictions are evaluated from the tilted law: ``P(tau2 = t)`` comes
from the exact marginal table, so no asymptotic equivalent of the marginal
is substituted unless stated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import OutOfDomainError, SpecInfeasibleError, WrongBranchError
from .loop_law import FreeEndWeights, LoopLaw, TiltedLaw
from .partition import compute_zc


def _excess(tl: TiltedLaw, N: int, M: float) -> float:
    t = M - tl.gamma_c * N
    if not t > 0:
        raise OutOfDomainError(f"t_N = M - gamma_c N = {t:.6g} must be positive")
    return t


def thm21_prediction(tl: TiltedLaw, N: int, M: float) -> float:
    """``(N / mu1_hat^2) P(tau2 = ceil(t_N))`` with ``t_N = M - gamma_c N``."""
    t = _excess(tl, N, M)
    return N / tl.mu1_hat ** 2 * tl.marginal2_pmf(int(math.ceil(t)))


def _kbar0(fw: FreeEndWeights) -> float:
    # sum_{j>=0} K_f(j) when finite; zero on the non-summable branch
    return fw.total_with_zero if fw.finite else 0.0


def thm22_prediction(law: LoopLaw, fw: FreeEndWeights, tl: TiltedLaw, N: int, M: float) -> tuple:
    """``(bl_term, us_term)`` whose sum predicts ``exp(-N N(h)) Z^f(N, M)``.

    ``bl_term = Kbar (N/mu1_hat^2) G P(tau2 = ceil(t))`` and
    ``us_term = G K_f(ceil(t)) / mu1_hat`` with ``G = sum_i K_f(i) exp(-i N(h))``.
    ``Kbar`` sums the free-end weights from ``j = 0`` when they are summable
    and is zero otherwise.
    """
    if fw.alpha_bar == 1 and not fw.finite:
        raise WrongBranchError("alpha_bar = 1 with non-summable weights: use appA_predictions")
    t = int(math.ceil(_excess(tl, N, M)))
    G = fw.geometric_sum(tl.nh)
    bl = _kbar0(fw) * N / tl.mu1_hat ** 2 * G * tl.marginal2_pmf(t)
    us = G * float(fw.weight(t)) / tl.mu1_hat
    return bl, us


def appA_predictions(law: LoopLaw, fw: FreeEndWeights, tl: TiltedLaw, N: int, t_N: float) -> tuple:
    """``(mixed_term, us_term)`` on the ``alpha_bar = 1``, non-summable branch."""
    if fw.finite or fw.alpha_bar != 1:
        raise WrongBranchError("the mixed branch needs alpha_bar = 1 with non-summable weights")
    if not t_N > 0:
        raise OutOfDomainError("t_N must be positive")
    t = int(math.ceil(t_N))
    G = fw.geometric_sum(tl.nh)
    mixed = N / tl.mu1_hat ** 2 * tl.marginal2_pmf(t) * fw.kbar(t) * G
    us = G * float(fw.weight(t)) / tl.mu1_hat
    return mixed, us


# ---------------------------------------------------------------------------
# moderate-deviation window (finite variance)


@dataclass(frozen=True)
class ConjectureParams:
    """Constants of the Gaussian-versus-big-jump competition.

    ``cross_sign = +1`` uses the covariance combination
    ``gamma_c^2 s1^2 + 2 rho gamma_c s1 s2 + s2^2`` as written in the source
    derivation; ``-1`` gives the variance of ``tau2 - gamma_c tau1``.
    """

    c_bold: float
    a_c: float | None
    c1: float | None
    theta0: float
    Qmin: float
    cross_sign: int = 1
    variance: float = field(default=math.nan, repr=False)


def q_theta(tl: TiltedLaw, theta, cross_sign: int = 1):
    """``Q(theta)``: the quadratic form in the exponent of the local estimate."""
    g, s1, s2, r = tl.gamma_c, math.sqrt(tl.sigma1_sq), math.sqrt(tl.sigma2_sq), tl.rho
    th = np.asarray(theta, dtype=float)
    return (th ** 2 / (g * g * s1 * s1) - cross_sign * 2 * r * th * (1 - th) / (g * s1 * s2)
            + (1 - th) ** 2 / (s2 * s2))


def _variance(tl: TiltedLaw, cross_sign: int) -> float:
    g, s1, s2 = tl.gamma_c, math.sqrt(tl.sigma1_sq), math.sqrt(tl.sigma2_sq)
    return g * g * s1 * s1 + cross_sign * 2 * tl.rho * g * s1 * s2 + s2 * s2


def conjecture_params(tl: TiltedLaw, c1: float | None = None, cross_sign: int = 1) -> ConjectureParams:
    """Closed-form ``c_bold``, ``a_c``, ``theta0`` and ``Qmin`` (finite variances only)."""
    if cross_sign not in (1, -1):
        raise ValueError("cross_sign must be +1 or -1")
    if not (math.isfinite(tl.sigma1_sq) and math.isfinite(tl.sigma2_sq)):
        raise OutOfDomainError("the Gaussian window needs finite variances (alpha > 1)")
    if tl.sigma1_sq <= 0 or tl.sigma2_sq <= 0:
        raise OutOfDomainError("degenerate fixture: a coordinate has zero variance")
    D = _variance(tl, cross_sign)
    g, s1, s2, r = tl.gamma_c, math.sqrt(tl.sigma1_sq), math.sqrt(tl.sigma2_sq), tl.rho
    # Q = a th^2 - 2 b th (1 - th) + c (1 - th)^2 is stationary at th = (b + c) / (a + 2b + c)
    a = 1 / (g * g * s1 * s1)
    b = cross_sign * r / (g * s1 * s2)
    c = 1 / (s2 * s2)
    theta0 = (c + b) / (a + 2 * b + c)
    Qmin = (1 - r * r) / D
    c_bold = tl.mu1_hat / (2 * D)
    alpha = tl.base.alpha
    a_c = math.sqrt((alpha - 1) / (2 * c_bold)) if alpha > 1 and math.isfinite(alpha) else None
    return ConjectureParams(c_bold, a_c, c1, theta0, Qmin, cross_sign, D)


def qmin_by_grid(tl: TiltedLaw, cross_sign: int = 1, lo: float = -0.5, hi: float = 1.5,
                 step: float = 1e-3) -> tuple:
    """``(theta0, Qmin)`` by a grid scan refined with a bounded scalar minimizer."""
    grid = np.arange(lo, hi + step / 2, step)
    vals = q_theta(tl, grid, cross_sign)
    k = int(np.argmin(vals))
    left, right = grid[max(k - 1, 0)], grid[min(k + 1, len(grid) - 1)]
    res = minimize_scalar(lambda th: float(q_theta(tl, th, cross_sign)), bounds=(left, right),
                          method="bounded", options={"xatol": 1e-12})
    return float(res.x), float(res.fun)


def conjecture_B(params: ConjectureParams, tl: TiltedLaw, N: int, t_N: float) -> tuple:
    """``(bigjump_term, gaussian_term)`` for ``P((N, gamma_c N + t_N) in tau_hat)``."""
    if not tl.base.alpha > 1:
        raise OutOfDomainError("the crossover conjecture needs alpha > 1")
    if params.c1 is None:
        raise ValueError("c1 is unknown: supply it or fit it with crossover_scan")
    bj = N / tl.mu1_hat ** 2 * tl.marginal2_pmf(int(math.ceil(t_N)))
    gauss = params.c1 / math.sqrt(N) * math.exp(-params.c_bold * t_N * t_N / N)
    return bj, gauss


@dataclass(frozen=True)
class CrossoverRow:
    a: float
    t_N: float
    M: int
    exact: float
    bigjump: float
    gaussian: float
    dominant: str
    feasible: bool = True


@dataclass(frozen=True)
class CrossoverScan:
    rows: tuple
    params: ConjectureParams
    a_star: float | None
    a_c: float | None

    @property
    def dominance(self) -> list:
        return [r.dominant for r in self.rows if r.feasible]

    @property
    def flips(self) -> int:
        d = self.dominance
        return sum(1 for x, y in zip(d, d[1:]) if x != y)


def crossover_scan(law: LoopLaw, tl: TiltedLaw, N: int, a_grid: Sequence[float],
                   params: ConjectureParams | None = None, fit_rows: int = 1,
                   table=None) -> CrossoverScan:
    """Exact hitting probabilities across the window ``t_N = a sqrt(N log N)``.

    One partition table of size ``N x max M`` serves every row.  ``c1`` is
    the least-squares amplitude of ``exact - bigjump`` against the Gaussian
    shape over the ``fit_rows`` smallest values of ``a``.  ``a_star`` is
    the geometric midpoint of the first adjacent pair with different
    dominance.
    """
    if not law.alpha > 1:
        raise OutOfDomainError("the crossover scan needs alpha > 1")
    params = params or conjecture_params(tl)
    grid = sorted(float(a) for a in a_grid)
    scale = math.sqrt(N * math.log(N))
    targets = []
    for a in grid:
        t = a * scale
        M = int(round(tl.gamma_c * N + t))
        targets.append((a, t, M, t > 0 and M - tl.gamma_c * N > 0))
    M_max = max(M for *_, M, ok in targets if ok) if any(ok for *_, ok in targets) else 0
    if M_max == 0:
        raise SpecInfeasibleError("no row of the scan has positive excess")
    if table is None or table.N < N or table.M < M_max:
        table = compute_zc(law, tl.h, N, M_max)
    raw = []
    for a, t, M, ok in targets:
        if not ok:
            raw.append((a, t, M, math.nan, math.nan, math.nan, False))
            continue
        t_exact = M - tl.gamma_c * N
        exact = math.exp(table.log_z(N, M) - N * tl.nh)
        bj = N / tl.mu1_hat ** 2 * tl.marginal2_pmf(int(math.ceil(t_exact)))
        shape = math.exp(-params.c_bold * t_exact ** 2 / N) / math.sqrt(N)
        raw.append((a, t_exact, M, exact, bj, shape, True))
    fit = [r for r in raw if r[6]][:fit_rows]
    num = sum((r[3] - r[4]) * r[5] for r in fit)
    den = sum(r[5] ** 2 for r in fit)
    c1 = params.c1 if params.c1 is not None else (num / den if den > 0 else 0.0)
    params = replace(params, c1=c1)
    rows = []
    for a, t, M, exact, bj, shape, ok in raw:
        g = c1 * shape if ok else math.nan
        dom = ("bigjump" if bj >= g else "gaussian") if ok else "infeasible"
        rows.append(CrossoverRow(a, t, M, exact, bj, g, dom, ok))
    feas = [r for r in rows if r.feasible]
    a_star = None
    for x, y in zip(feas, feas[1:]):
        if x.dominant != y.dominant:
            a_star = math.sqrt(x.a * y.a)
            break
    return CrossoverScan(tuple(rows), params, a_star, params.a_c)


# ---------------------------------------------------------------------------
# Cramér border


@dataclass(frozen=True)
class BoundaryShape:
    """``P((N, M) in tau_hat) a_N`` at the two integers ``M`` around ``gamma_c N``."""

    N_grid: tuple
    M_lo: tuple
    M_hi: tuple
    products_lo: tuple
    products_hi: tuple
    products: tuple
    degenerate: bool = False


def boundary_shape_check(tl: TiltedLaw, N_grid: Sequence[int], table=None) -> BoundaryShape:
    """Products ``P((N, M) in tau_hat) a_N`` along the border ``M ~ gamma_c N``.

    ``products`` uses the nearest integer ``M``; both neighbours are kept.
    Degenerate fixtures (a coordinate with zero variance) are flagged.
    """
    grid = sorted(int(n) for n in N_grid)
    if not grid or grid[0] < 1:
        raise ValueError("N_grid must contain positive integers")
    M_top = int(math.floor(tl.gamma_c * grid[-1])) + 1
    if table is None or table.N < grid[-1] or table.M < M_top:
        table = compute_zc(tl.base, tl.h, grid[-1], M_top)
    lo, hi, plo, phi, pnear = [], [], [], [], []
    for n in grid:
        x = tl.gamma_c * n
        m0, m1 = int(math.floor(x)), int(math.floor(x)) + 1
        a_n = tl.scaling_a(n)
        p0 = math.exp(table.log_z(n, m0) - n * tl.nh) * a_n if m0 >= 1 else 0.0
        p1 = math.exp(table.log_z(n, m1) - n * tl.nh) * a_n
        lo.append(m0)
        hi.append(m1)
        plo.append(p0)
        phi.append(p1)
        pnear.append(p0 if x - m0 <= m1 - x else p1)
    degenerate = tl.sigma1_sq == 0 or tl.sigma2_sq == 0
    return BoundaryShape(tuple(grid), tuple(lo), tuple(hi), tuple(plo), tuple(phi), tuple(pnear),
                         degenerate)
