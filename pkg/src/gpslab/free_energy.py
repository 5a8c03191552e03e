"""Tilt equations, free energy and regime classification.

``N(h)`` is the one-sided tilt: the exponential rate of ``Z^c(N, M)`` when
the excess ``M - gamma_c N`` is absorbed by a single big loop.  Inside the
Cramér window ``(1/gamma_c, gamma_c)`` both coordinates are tilted instead.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .errors import NonCramerSignal, OutOfDomainError
from .loop_law import LoopLaw, TiltedLaw, build_tilted_law

BOUNDARY_TOL = 1e-9
_XTOL = 1e-15
_RTOL = 4 * np.finfo(float).eps


def _tilt_mass(law: LoopLaw, h: float, lam1: float, lam2: float) -> float:
    return math.exp(h) * float(law.tilt_sums(lam1, lam2, count=1)[0])


@lru_cache(maxsize=256)
def solve_nh(law: LoopLaw, h: float) -> float:
    """Root ``N`` of ``sum_{n,m} K(n+m) exp(-n N) = exp(-h)``.

    The left side is strictly decreasing in ``N``; at ``N = h`` it is at most
    ``exp(-h)`` by persistence, so ``(0, h]`` always brackets the root.
    """
    h = float(h)
    if not h > 0:
        raise OutOfDomainError(f"N(h) is defined for h > 0, got {h}")
    target = math.exp(-h)

    def f(nh):
        return float(law.tilt_sums(nh, 0.0, count=1)[0]) - target

    if f(h) >= 0.0:  # only equality is possible (delta kernel)
        return h
    return brentq(f, 0.0, h, xtol=_XTOL * min(1.0, h), rtol=_RTOL, maxiter=500)


@lru_cache(maxsize=256)
def tilted_law(law: LoopLaw, h: float) -> TiltedLaw:
    """The tilted law at ``h`` with ``N(h)`` solved internally."""
    return build_tilted_law(law, float(h), solve_nh(law, float(h)))


def gamma_c(law: LoopLaw, h: float) -> float:
    """Critical ratio ``mu2_hat / mu1_hat``."""
    return tilted_law(law, h).gamma_c


@dataclass(frozen=True)
class TiltSolution:
    lambda1: float
    lambda2: float
    free_energy: float
    slope: float
    boundary: bool

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "free_energy", "slope"):
            object.__setattr__(self, name, float(getattr(self, name)))


def _lambda1_on_curve(law: LoopLaw, h: float, lam2: float, nh: float) -> float:
    """Solve the normalization for ``lambda1`` given ``lambda2`` in ``[0, nh]``."""
    f = lambda lam1: _tilt_mass(law, h, lam1, lam2) - 1.0  # noqa: E731
    if f(0.0) <= 0.0:
        return 0.0
    if f(nh) >= 0.0:
        return nh
    return brentq(f, 0.0, nh, xtol=_XTOL, rtol=_RTOL, maxiter=500)


def _slope(law: LoopLaw, lam1: float, lam2: float) -> float:
    s = law.tilt_sums(lam1, lam2, count=3)
    return float(s[2] / s[1])


def solve_cramer_tilt(law: LoopLaw, h: float, gamma: float) -> TiltSolution:
    """Two-sided tilt ``(lambda1, lambda2)`` with mean slope ``gamma``.

    Walks the normalization curve, parametrized by ``lambda2`` in
    ``[0, N(h)]``; along it the slope ``E[t]/E[l]`` falls from ``gamma_c``
    to ``1/gamma_c``.  Within ``1e-9`` of either end the boundary tilt is
    returned.
    """
    if not h > 0:
        raise OutOfDomainError("the Cramér tilt needs h > 0")
    tl = tilted_law(law, h)
    nh, gc = tl.nh, tl.gamma_c
    if abs(gamma - gc) <= BOUNDARY_TOL:
        return TiltSolution(nh, 0.0, nh, gc, True)
    if abs(gamma - 1.0 / gc) <= BOUNDARY_TOL:
        return TiltSolution(0.0, nh, gamma * nh, 1.0 / gc, True)
    if not (1.0 / gc < gamma < gc):
        raise NonCramerSignal(
            f"gamma={gamma} lies outside the Cramér window ({1 / gc:.12g}, {gc:.12g}); use N(h)")

    def excess(lam2):
        lam1 = _lambda1_on_curve(law, h, lam2, nh)
        return _slope(law, lam1, lam2) - gamma

    lam2 = brentq(excess, 0.0, nh, xtol=_XTOL, rtol=_RTOL, maxiter=500)
    lam1 = _lambda1_on_curve(law, h, lam2, nh)
    return TiltSolution(lam1, lam2, lam1 + gamma * lam2, _slope(law, lam1, lam2), False)


def symmetric_tilt(law: LoopLaw, h: float) -> float:
    """``lambda*`` solving ``sum_s K(s)(s-1) exp(h - lambda* s) = 1``."""
    f = lambda lam: _tilt_mass(law, h, lam, lam) - 1.0  # noqa: E731
    return brentq(f, 0.0, max(h, 1e-300), xtol=_XTOL, rtol=_RTOL, maxiter=500)


def free_energy(law: LoopLaw, h: float, gamma: float) -> float:
    """Free energy density ``F_gamma(h)`` of the constrained model.

    Zero for ``h <= 0``.  For ``gamma >= gamma_c`` it is ``N(h)`` and for
    ``gamma <= 1/gamma_c`` it is ``gamma N(h)`` (strand roles swapped).
    Both branches assume a subexponential loop tail: a law with bounded
    support has a Cramér tilt with negative ``lambda2`` beyond ``gamma_c``
    and a smaller free energy.
    """
    if gamma <= 0:
        raise OutOfDomainError("gamma must be positive")
    if h <= 0:
        return 0.0
    tl = tilted_law(law, h)
    gc = tl.gamma_c
    if gamma >= gc - BOUNDARY_TOL:
        return tl.nh
    if gamma <= 1.0 / gc + BOUNDARY_TOL:
        return gamma * tl.nh
    return solve_cramer_tilt(law, h, gamma).free_energy


# ---------------------------------------------------------------------------
# regime classification


@dataclass(frozen=True)
class TRule:
    """Excess rule ``t_N``: ``linear`` (cN), ``power`` (N^p) or ``sqrtlog`` (a sqrt(N log N))."""

    kind: str
    param: float

    def __post_init__(self):
        if self.kind not in ("linear", "power", "sqrtlog"):
            raise ValueError(f"unknown t_N rule {self.kind!r}")

    def __call__(self, N: float) -> float:
        if self.kind == "linear":
            return self.param * N
        if self.kind == "power":
            return float(N) ** self.param
        return self.param * math.sqrt(N * math.log(N))

    @classmethod
    def parse(cls, text: str) -> "TRule":
        """Parse ``linear(0.5)``, ``power(0.8)`` or ``sqrtlog(2)``."""
        kind, _, rest = text.partition("(")
        if not rest.endswith(")"):
            raise ValueError(f"malformed t_N rule {text!r}")
        return cls(kind.strip(), float(rest[:-1]))


@dataclass(frozen=True)
class RegimeReport:
    gamma: float
    gamma_c: float
    regime: str
    N_grid: tuple
    t_N: tuple
    bigjump1_ok: bool
    bigjump2_ok: bool | None
    C0: float
    ratios: tuple = field(default=(), repr=False)
    a_c: float | None = None
    window_amplitude: float | None = None


def classify_regime(law: LoopLaw, h: float, gamma_or_tN_rule, N_grid: Sequence[int],
                    C0: float = 64.0) -> RegimeReport:
    """Cramér / non-Cramér classification plus big-jump condition flags.

    ``gamma_or_tN_rule`` is either a fixed ratio ``gamma`` (so that
    ``t_N = (gamma - gamma_c) N``) or a callable ``N -> t_N``.

    ``bigjump1_ok`` is a trend test for ``t_N / a_N -> infinity``: the ratios
    must be non-decreasing on the grid, end above 1, and grow at least like
    ``(log N)^0.25``.  ``bigjump2_ok`` (finite-variance branch only) requires
    ``t_N^2 / (N sigma(t_N)) >= C0 log N`` at every grid point.
    """
    grid = [int(n) for n in N_grid]
    if not grid:
        raise ValueError("N_grid must be non-empty")
    tl = tilted_law(law, h)
    gc = tl.gamma_c
    if callable(gamma_or_tN_rule):
        tN = [float(gamma_or_tN_rule(n)) for n in grid]
        gamma = gc + tN[-1] / grid[-1]
    else:
        gamma = float(gamma_or_tN_rule)
        tN = [(gamma - gc) * n for n in grid]
    cramer = (1.0 / gc + BOUNDARY_TOL) < gamma < (gc - BOUNDARY_TOL)
    ratios = [t / tl.scaling_a(n) for n, t in zip(grid, tN)]

    if cramer or ratios[-1] <= 1.0:
        bj1 = False
    elif len(grid) == 1:
        bj1 = ratios[0] >= math.log(grid[0])
    else:
        logs = np.log(ratios)
        non_decreasing = bool(np.all(np.diff(logs) >= -1e-12))
        slope = np.polyfit(np.log(np.log(grid)), logs, 1)[0] if all(r > 0 for r in ratios) else -1
        bj1 = non_decreasing and slope > 0.25

    bj2 = None
    a_c = None
    amp = None
    if tl.alpha2 >= 2.0:
        bj2 = all(
            t > 0 and t * t / (n * tl.sigma_trunc(int(math.ceil(t)))) >= C0 * math.log(n)
            for n, t in zip(grid, tN)
        )
        if tl.base.alpha > 1.0 and math.isfinite(tl.base.alpha):
            from .asymptotics import conjecture_params

            a_c = conjecture_params(tl).a_c
            amp = tN[-1] / math.sqrt(grid[-1] * math.log(grid[-1]))
    return RegimeReport(
        gamma=gamma, gamma_c=gc, regime="cramer" if cramer else "non_cramer",
        N_grid=tuple(grid), t_N=tuple(tN), bigjump1_ok=bool(bj1), bigjump2_ok=bj2,
        C0=C0, ratios=tuple(ratios), a_c=a_c, window_amplitude=amp,
    )

