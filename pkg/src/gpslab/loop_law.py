"""Loop law K, free-end weights K_f and the tilted inter-arrival law.

A loop of first-strand length ``l`` and second-strand length ``t`` has
probability ``K(l + t)``, with ``K(s) = c_K L(s) s^-(2 + alpha)`` for
``s >= 2``.  Persistence means ``sum_s (s - 1) K(s) = 1``.

Laws are stored as a table on ``[2, S_max]``.  With ``analytic_tail`` the
power law continues past ``S_max`` and every infinite sum adds a tail term
(Hurwitz zeta for constant ``L``, Euler-Maclaurin otherwise); without it
the law is exactly finitely supported.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Callable, Mapping

import numpy as np
from scipy import integrate, signal, special

from .errors import InvalidSpecError, StaleTiltError

SV_FAMILIES = ("constant", "log_power")

# x**n below this is treated as zero when truncating geometric sums
_GEOM_EPS = 1e-18


def slowly_varying(family: str, beta: float, s):
    """Evaluate L(s) for the supported slowly varying families."""
    s = np.asarray(s, dtype=float)
    if family == "constant":
        return np.ones_like(s)
    if family == "log_power":
        return np.log(math.e + s) ** beta
    raise InvalidSpecError(f"unknown slowly varying family {family!r}")


@dataclass(frozen=True)
class KernelSpec:
    alpha: float
    sv_family: str = "constant"
    sv_beta: float = 0.0
    support_cap: int = 10_000
    analytic_tail: bool = False

    def __post_init__(self):
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise InvalidSpecError(f"alpha must be a finite positive number, got {self.alpha}")
        if self.sv_family not in SV_FAMILIES:
            raise InvalidSpecError(f"sv_family must be one of {SV_FAMILIES}")
        if not math.isfinite(self.sv_beta):
            raise InvalidSpecError("sv_beta must be finite")
        if int(self.support_cap) != self.support_cap or self.support_cap < 2:
            raise InvalidSpecError(f"support_cap must be an integer >= 2, got {self.support_cap}")

    def unnormalized(self, s):
        s = np.asarray(s, dtype=float)
        return slowly_varying(self.sv_family, self.sv_beta, s) * s ** -(2.0 + self.alpha)

    @classmethod
    def from_dict(cls, cfg: Mapping[str, Any]) -> "KernelSpec":
        return cls(
            alpha=float(cfg["alpha"]),
            sv_family=cfg.get("sv_family", "constant"),
            sv_beta=float(cfg.get("sv_beta", 0.0)),
            support_cap=int(cfg.get("support_cap", 10_000)),
            analytic_tail=bool(cfg.get("analytic_tail", False)),
        )


# ---------------------------------------------------------------------------
# summation helpers


def _nderiv(f: Callable[[float], float], x: float, order: int) -> float:
    h = max(1e-3 * abs(x), 1e-2)
    if order == 1:
        return (f(x + h) - f(x - h)) / (2 * h)
    if order == 3:
        return (f(x + 2 * h) - 2 * f(x + h) + 2 * f(x - h) - f(x - 2 * h)) / (2 * h**3)
    raise ValueError(order)


def em_sum(f: Callable[[float], float], a: int, b: float = math.inf, split: float | None = None) -> float:
    """Euler-Maclaurin estimate of ``sum_{s=a}^{b} f(s)`` for smooth f.

    Intended for power-law-like summands far from the origin (``a`` in the
    hundreds or more), where the remainder after the third-derivative term
    is far below double precision.  ``split`` is an interior point where the
    integrand changes character; the quadrature is done in two pieces.
    """
    if b < a:
        return 0.0
    pieces = [a, b] if split is None or not (a < split < b) else [a, split, b]
    val = 0.0
    with warnings.catch_warnings():
        # roundoff warnings at the 1e-12 request are expected and harmless here
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        for lo, hi in zip(pieces[:-1], pieces[1:]):
            part, _ = integrate.quad(f, lo, hi, epsabs=0.0, epsrel=1e-12, limit=400)
            val += part
    val += 0.5 * f(a) - _nderiv(f, a, 1) / 12 + _nderiv(f, a, 3) / 720
    if math.isfinite(b):
        val += 0.5 * f(b) + _nderiv(f, b, 1) / 12 - _nderiv(f, b, 3) / 720
    return val


def _faulhaber(q: int, n):
    """sum_{j=1}^{n} j**q as a polynomial in (real) n."""
    bern = special.bernoulli(q).copy()
    if q >= 1:
        bern[1] = 0.5
    out = np.zeros_like(np.asarray(n, dtype=float))
    for i in range(q + 1):
        out = out + special.comb(q + 1, i, exact=False) * bern[i] * n ** (q + 1 - i)
    return out / (q + 1)


def geom_power_sums(d: float, n):
    """Return ``(S0, S1, S2)`` with ``Sk = sum_{j=1}^{n} j**k exp(-d j)``.

    Smooth in ``n``, so it can be integrated over continuous ``n``.  Uses
    closed forms unless ``d * n`` is small, where a Taylor expansion in
    ``d`` over power sums avoids cancellation.
    """
    n = np.asarray(n, dtype=float)
    if d == 0.0:
        return n, n * (n + 1) / 2, n * (n + 1) * (2 * n + 1) / 6
    x = d * n
    out = [np.empty_like(n) for _ in range(3)]
    big = x > 0.1
    if np.any(big):
        nb = n[big]
        r = math.exp(-d)
        om = -math.expm1(-d)
        q = np.exp(-d * nb)
        out[0][big] = r * (-np.expm1(-d * nb)) / om
        out[1][big] = r * (1 - (nb + 1) * q + nb * q * r) / om**2
        out[2][big] = (
            r * (1 + r - (nb + 1) ** 2 * q + (2 * nb**2 + 2 * nb - 1) * q * r - nb**2 * q * r**2) / om**3
        )
    small = ~big
    if np.any(small):
        ns = n[small]
        for k in range(3):
            acc = np.zeros_like(ns)
            for p in range(16):
                acc = acc + (-d) ** p / math.factorial(p) * _faulhaber(k + p, ns)
            out[k][small] = acc
    return tuple(out)


def _moment_combos(s, S0, S1, S2, swap: bool):
    """Per-s sums of {1, l, t, l^2, t^2, l t} given geometric sums over j."""
    ones, jj, jsq = S0, S1, S2
    other = s * S0 - S1
    other_sq = s * s * S0 - 2 * s * S1 + S2
    cross = s * S1 - S2
    if swap:  # j indexes t instead of l
        return [ones, other, jj, other_sq, jsq, cross]
    return [ones, jj, other, jsq, other_sq, cross]


def _saturated_poly(d: float, swap: bool):
    """Ascending coefficients in s of the per-s moment sums for large s.

    With ``d > 0`` the inner sums over ``j = 1..s-1`` have converged to
    constants; with ``d = 0`` they are exact polynomials in ``s``.
    """
    P = np.polynomial.polynomial
    if d == 0.0:
        n = np.array([-1.0, 1.0])  # s - 1
        S0 = n
        S1 = P.polymul(n, [0.0, 0.5])
        S2 = P.polymul(P.polymul(n, [0.0, 1.0]), [-1.0 / 6.0, 2.0 / 6.0])
    else:
        r = math.exp(-d)
        om = -math.expm1(-d)
        S0, S1, S2 = np.array([r / om]), np.array([r / om**2]), np.array([r * (1 + r) / om**3])
    s1 = np.array([0.0, 1.0])
    other = P.polysub(P.polymul(s1, S0), S1)
    other_sq = P.polyadd(P.polysub(P.polymul([0.0, 0.0, 1.0], S0), P.polymul([0.0, 2.0], S1)), S2)
    cross = P.polysub(P.polymul(s1, S1), S2)
    if swap:
        return [S0, other, S1, other_sq, S2, cross]
    return [S0, S1, other, S2, other_sq, cross]


# ---------------------------------------------------------------------------
# loop law


@dataclass(frozen=True, eq=False)
class LoopLaw:
    """Normalized loop law on total length ``s >= 2``.

    ``pmf[s]`` holds ``K(s)`` for ``0 <= s <= S_max`` (zero below 2).
    ``spec`` is ``None`` for explicit finite fixtures, which are treated as
    having all moments finite.
    """

    spec: KernelSpec | None
    c_K: float
    pmf: np.ndarray
    persistence_defect: float
    label: str = ""

    @property
    def s_max(self) -> int:
        return len(self.pmf) - 1

    @property
    def has_tail(self) -> bool:
        return self.spec is not None and self.spec.analytic_tail

    @property
    def degenerate(self) -> bool:
        return self.spec is None

    @property
    def alpha(self) -> float:
        return math.inf if self.spec is None else self.spec.alpha

    @property
    def alpha2(self) -> float:
        return min(1.0 + self.alpha, 2.0)

    @classmethod
    def from_pmf(cls, masses: Mapping[int, float], label: str = "table") -> "LoopLaw":
        """Finite law from explicit masses; they must already satisfy persistence."""
        if not masses:
            raise InvalidSpecError("empty mass table")
        smax = max(int(s) for s in masses)
        if min(int(s) for s in masses) < 2:
            raise InvalidSpecError("loop lengths start at 2")
        pmf = np.zeros(smax + 1)
        for s, p in masses.items():
            if p < 0:
                raise InvalidSpecError("negative mass")
            pmf[int(s)] = float(p)
        defect = abs(math.fsum((s - 1) * pmf[s] for s in range(2, smax + 1)) - 1.0)
        if defect > 1e-12:
            raise InvalidSpecError(f"masses violate persistence (defect {defect:.3e})")
        return cls(spec=None, c_K=1.0, pmf=pmf, persistence_defect=defect, label=label)

    # -- pointwise evaluation -------------------------------------------

    def K(self, s):
        """K(s) for integer ``s`` (array or scalar); zero outside the support."""
        s_arr = np.asarray(s)
        out = np.zeros(s_arr.shape, dtype=float)
        inside = (s_arr >= 2) & (s_arr <= self.s_max)
        out[inside] = self.pmf[s_arr[inside].astype(np.int64)]
        if self.has_tail:
            beyond = s_arr > self.s_max
            out[beyond] = self.c_K * self.spec.unnormalized(s_arr[beyond])
        return out if out.ndim else float(out)

    def kernel_at(self, t: float) -> float:
        """``L(t) t^-(2+alpha)`` at real ``t`` (normalization included).

        Explicit fixtures fall back to the table at ``ceil(t)``.
        """
        if self.spec is None:
            return float(self.K(int(math.ceil(t))))
        if not self.has_tail and t > self.s_max:
            return 0.0
        return float(self.c_K * self.spec.unnormalized(t))

    def sv_full(self, t: float) -> float:
        """The slowly varying factor including normalization, ``c_K L(t)``."""
        if self.spec is None:
            raise InvalidSpecError("explicit fixtures carry no slowly varying factor")
        return self.c_K * float(slowly_varying(self.spec.sv_family, self.spec.sv_beta, t))

    def power_tail(self, k: int, u):
        """``sum_{s > u} s^k K(s)`` for ``u >= S_max``; zero for finite laws."""
        u_arr = np.asarray(u, dtype=float)
        if not self.has_tail:
            return np.zeros_like(u_arr) if u_arr.ndim else 0.0
        expo = 2.0 + self.alpha - k
        if expo <= 1.0:
            return np.full_like(u_arr, np.inf) if u_arr.ndim else math.inf
        if self.spec.sv_family == "constant":
            out = self.c_K * special.zeta(expo, u_arr + 1.0)
        else:
            f = lambda x: self.c_K * x**k * float(self.spec.unnormalized(x))  # noqa: E731
            out = np.vectorize(lambda a: em_sum(f, int(a) + 1))(u_arr)
        return out if np.ndim(out) else float(out)

    # -- exponentially weighted sums ------------------------------------

    def tilt_sums(self, lam1: float, lam2: float, count: int = 6) -> np.ndarray:
        """Sums of ``{1, l, t, l^2, t^2, l t}`` against ``exp(-lam1 l - lam2 t) K(l+t)``.

        Returns the first ``count`` entries in that order (no ``e^h``
        factor).  Divergent entries come back as ``inf``.
        """
        if lam1 < 0 or lam2 < 0:
            raise ValueError("tilt parameters must be non-negative")
        swap = lam1 < lam2
        lo, d = (lam1, lam2 - lam1) if swap else (lam2, lam1 - lam2)
        S = self.s_max
        s = np.arange(2, S + 1, dtype=float)
        j = np.arange(1, S, dtype=float)
        w = np.exp(-d * j)
        S0 = np.cumsum(w)
        S1 = np.cumsum(j * w)
        S2 = np.cumsum(j * j * w)
        base = self.pmf[2:] * np.exp(-lo * s)
        combos = _moment_combos(s, S0, S1, S2, swap)[:count]
        out = np.array([np.sum(base * c) for c in combos])
        if self.has_tail:
            out = out + self._tilt_tail(lo, d, swap, count)
        return out

    def _poly_tail(self, coeffs, u: int) -> float:
        """``sum_{s > u} P(s) K(s)`` for a polynomial P given by ascending coefficients."""
        total = 0.0
        for k, ck in enumerate(coeffs):
            if ck != 0.0:
                total += ck * self.power_tail(k, u)
        return total

    def _tilt_tail(self, lo: float, d: float, swap: bool, count: int) -> np.ndarray:
        S = self.s_max
        out = np.zeros(count)
        if lo == 0.0:
            # polynomial growth in s of each entry once inner sums saturate
            if d == 0.0:
                degree = [1, 2, 2, 3, 3, 3]
            else:
                degree = [0, 0, 1, 0, 2, 1]
                if swap:
                    degree = [0, 1, 0, 2, 0, 1]
            for idx in range(count):
                if degree[idx] >= 1.0 + self.alpha:
                    out[idx] = math.inf
        spec = self.spec
        c = self.c_K
        # beyond `cut` the inner geometric sums have saturated (or are exact
        # polynomials when d = 0), so with lo = 0 the rest is a polynomial tail
        if lo == 0.0:
            cut = S if d == 0.0 else S + int(math.ceil(60.0 / d))
        else:
            cut = None
        for idx in range(count):
            if out[idx] == math.inf:
                continue

            def g(x, idx=idx):
                sums = geom_power_sums(d, np.array([x - 1.0]))
                vals = _moment_combos(x, *sums, swap)
                return float(c * spec.unnormalized(x) * math.exp(-lo * x) * vals[idx][0])

            if cut is None:
                out[idx] = em_sum(g, S + 1, split=S + 1 + 60.0 / lo)
                continue
            val = em_sum(g, S + 1, cut) if cut > S else 0.0
            out[idx] = val + self._poly_tail(_saturated_poly(d, swap)[idx], cut)
        return out


def build_loop_law(spec: KernelSpec) -> LoopLaw:
    S = int(spec.support_cap)
    if S < 2:
        raise InvalidSpecError("S_max must be at least 2")
    s = np.arange(2, S + 1, dtype=float)
    raw = spec.unnormalized(s)
    mass = math.fsum((s - 1) * raw)
    if spec.analytic_tail:
        if spec.alpha <= 0:
            raise InvalidSpecError("analytic tail requires alpha > 0")
        probe = LoopLaw(spec, 1.0, np.zeros(S + 1), 0.0)
        mass += probe.power_tail(1, S) - probe.power_tail(0, S)
    c_K = 1.0 / mass
    pmf = np.zeros(S + 1)
    pmf[2:] = c_K * raw
    law = LoopLaw(spec, c_K, pmf, 0.0, label=f"power(alpha={spec.alpha})")
    total = math.fsum((s - 1) * pmf[2:])
    if law.has_tail:
        total += law.power_tail(1, S) - law.power_tail(0, S)
    object.__setattr__(law, "persistence_defect", abs(total - 1.0))
    return law


def delta_law() -> LoopLaw:
    """Every loop is a single bound pair ``(1, 1)``."""
    return LoopLaw.from_pmf({2: 1.0}, label="delta")


def two_point_law(p: float = 0.5) -> LoopLaw:
    """Support {2, 3} with ``K(2) = p`` and ``K(3) = (1 - p) / 2``."""
    return LoopLaw.from_pmf({2: p, 3: (1.0 - p) / 2.0}, label=f"two_point({p})")


# ---------------------------------------------------------------------------
# free ends


@dataclass(frozen=True, eq=False)
class FreeEndWeights:
    """Free-end weights ``K_f(j) = Lbar(j) j^-alpha_bar`` with ``K_f(0) = 1``.

    ``total`` is ``sum_{j>=1} K_f(j)`` (``inf`` when divergent) and
    ``partial_sums[x]`` is ``Kbar(x) = sum_{j=1}^{x} K_f(j)``.
    """

    alpha_bar: float
    sv_bar_family: str
    sv_bar_beta: float
    pmf: np.ndarray
    partial_sums: np.ndarray
    total: float

    @property
    def j_max(self) -> int:
        return len(self.pmf) - 1

    @property
    def finite(self) -> bool:
        return math.isfinite(self.total)

    @property
    def pinned(self) -> bool:
        return self.sv_bar_family == "none"

    @property
    def total_with_zero(self) -> float:
        """``sum_{j>=0} K_f(j)``."""
        return 1.0 + self.total

    def weight(self, j):
        j_arr = np.asarray(j)
        out = np.zeros(j_arr.shape, dtype=float)
        inside = (j_arr >= 0) & (j_arr <= self.j_max)
        out[inside] = self.pmf[j_arr[inside].astype(np.int64)]
        beyond = j_arr > self.j_max
        if np.any(beyond) and not self.pinned:
            out[beyond] = self._formula(j_arr[beyond])
        return out if out.ndim else float(out)

    def weight_at(self, t: float) -> float:
        """``Lbar(t) t^-alpha_bar`` at real ``t``."""
        if self.pinned:
            return 0.0
        return float(self._formula(t))

    def sv_at(self, t: float) -> float:
        if self.pinned:
            return 0.0
        return float(slowly_varying(self.sv_bar_family, self.sv_bar_beta, t))

    def _formula(self, j):
        j = np.asarray(j, dtype=float)
        return slowly_varying(self.sv_bar_family, self.sv_bar_beta, j) * j ** (-self.alpha_bar)

    def kbar(self, x: int) -> float:
        """``Kbar(x) = sum_{j=1}^{x} K_f(j)``."""
        x = int(x)
        if x <= 0:
            return 0.0
        if x <= self.j_max:
            return float(self.partial_sums[x])
        if self.pinned:
            return float(self.partial_sums[-1])
        f = lambda u: float(self._formula(u))  # noqa: E731
        return float(self.partial_sums[-1]) + em_sum(f, self.j_max + 1, x)

    def geometric_sum(self, nh: float) -> float:
        """``sum_{i>=0} K_f(i) exp(-i nh)``."""
        i = np.arange(self.j_max + 1, dtype=float)
        val = float(np.sum(self.pmf * np.exp(-nh * i)))
        if not self.pinned and math.exp(-nh * self.j_max) > _GEOM_EPS:
            f = lambda u: float(self._formula(u)) * math.exp(-nh * u)  # noqa: E731
            val += em_sum(f, self.j_max + 1)
        return val

    @classmethod
    def identity(cls, j_max: int = 1) -> "FreeEndWeights":
        """Weights that forbid free ends (``K_f(j) = 0`` for ``j >= 1``)."""
        pmf = np.zeros(j_max + 1)
        pmf[0] = 1.0
        return cls(0.0, "none", 0.0, pmf, np.zeros(j_max + 1), 0.0)


def _free_end_divergent(alpha_bar: float, family: str, beta: float) -> bool:
    if alpha_bar < 1:
        return True
    if alpha_bar > 1:
        return False
    return not (family == "log_power" and beta < -1)


def build_free_end_weights(alpha_bar: float, sv_bar_family: str = "constant", J_max: int = 10_000,
                           sv_bar_beta: float = 0.0) -> FreeEndWeights:
    if int(J_max) != J_max or J_max < 1:
        raise InvalidSpecError("J_max must be an integer >= 1")
    if not math.isfinite(alpha_bar):
        raise InvalidSpecError("alpha_bar must be finite")
    if sv_bar_family not in SV_FAMILIES:
        raise InvalidSpecError(f"sv_bar_family must be one of {SV_FAMILIES}")
    j = np.arange(1, J_max + 1, dtype=float)
    pmf = np.empty(J_max + 1)
    pmf[0] = 1.0
    pmf[1:] = slowly_varying(sv_bar_family, sv_bar_beta, j) * j ** (-alpha_bar)
    partial = np.concatenate([[0.0], np.cumsum(pmf[1:])])
    if _free_end_divergent(alpha_bar, sv_bar_family, sv_bar_beta):
        total = math.inf
    elif sv_bar_family == "constant":
        total = math.fsum(pmf[1:]) + float(special.zeta(alpha_bar, J_max + 1.0))
    else:
        f = lambda u: float(slowly_varying(sv_bar_family, sv_bar_beta, u)) * u ** (-alpha_bar)  # noqa: E731
        total = math.fsum(pmf[1:]) + em_sum(f, J_max + 1)
    return FreeEndWeights(alpha_bar, sv_bar_family, sv_bar_beta, pmf, partial, total)


# ---------------------------------------------------------------------------
# tilted law


@dataclass(frozen=True, eq=False)
class TiltedLaw:
    """Inter-arrival law ``Khat(n, m) = K(n+m) exp(h - n N(h))``."""

    base: LoopLaw
    h: float
    nh: float
    mass: float
    mu1_hat: float
    mu2_hat: float
    sigma1_sq: float
    sigma2_sq: float
    rho: float
    marginal2_table: np.ndarray = field(repr=False)
    marginal2_tail: np.ndarray = field(repr=False)
    sigma_table: np.ndarray = field(repr=False)

    @property
    def alpha2(self) -> float:
        return self.base.alpha2

    @property
    def gamma_c(self) -> float:
        return self.mu2_hat / self.mu1_hat

    @property
    def x(self) -> float:
        return math.exp(-self.nh)

    @cached_property
    def _n_geom(self) -> int:
        return int(math.ceil(-math.log(_GEOM_EPS) / self.nh)) + 1

    def pmf(self, n, m):
        n = np.asarray(n)
        m = np.asarray(m)
        return self.base.K(n + m) * np.exp(self.h - n * self.nh)

    # -- second marginal --------------------------------------------------

    def _marginal2_direct(self, m):
        m = np.atleast_1d(np.asarray(m, dtype=float))
        n = np.arange(1, self._n_geom + 1, dtype=float)
        out = np.empty(len(m))
        xs = np.exp(-self.nh * n)
        for i, mm in enumerate(m):
            ks = self.base.c_K * self.base.spec.unnormalized(mm + n)
            out[i] = math.exp(self.h) * float(np.sum(xs * ks))
        return out

    def marginal2_pmf(self, m):
        """``P(tau2 = m)`` for integer ``m >= 1`` (scalar or array)."""
        m_arr = np.asarray(m)
        scalar = m_arr.ndim == 0
        m_arr = np.atleast_1d(m_arr).astype(np.int64)
        out = np.zeros(len(m_arr))
        T = len(self.marginal2_table) - 1
        inside = (m_arr >= 1) & (m_arr <= T)
        out[inside] = self.marginal2_table[m_arr[inside]]
        beyond = m_arr > T
        if np.any(beyond) and self.base.has_tail:
            out[beyond] = self._marginal2_direct(m_arr[beyond])
        return float(out[0]) if scalar else out

    def marginal2_asymptotic(self, m: float) -> float:
        """Large-m equivalent ``e^h (e^N - 1)^-1 L(m) m^-(2+alpha)``."""
        return math.exp(self.h) / math.expm1(self.nh) * self.base.kernel_at(m)

    def tail2(self, m):
        """``P(tau2 > m)`` for integer ``m >= 0``."""
        m_arr = np.asarray(m)
        scalar = m_arr.ndim == 0
        m_arr = np.atleast_1d(m_arr).astype(np.int64)
        T = len(self.marginal2_tail) - 1
        out = np.zeros(len(m_arr))
        inside = (m_arr >= 0) & (m_arr <= T)
        out[inside] = self.marginal2_tail[m_arr[inside]]
        out[m_arr < 0] = 1.0
        beyond = m_arr > T
        if np.any(beyond) and self.base.has_tail:
            out[beyond] = [self._tail2_direct(int(v)) for v in m_arr[beyond]]
        return float(out[0]) if scalar else out

    def _tail2_direct(self, m: int) -> float:
        n = np.arange(1, self._n_geom + 1)
        xs = np.exp(-self.nh * n)
        return math.exp(self.h) * float(np.sum(xs * self.base.power_tail(0, m + n)))

    def sigma_trunc(self, n: int) -> float:
        """``E[tau2^2 ; tau2 <= n]``."""
        n = int(n)
        if n < 1:
            return 0.0
        T = len(self.sigma_table) - 1
        if n <= T:
            return float(self.sigma_table[n])
        if not self.base.has_tail:
            return float(self.sigma_table[-1])
        f = lambda u: u * u * float(self._marginal2_direct([u])[0])  # noqa: E731
        return float(self.sigma_table[-1]) + em_sum(f, T + 1, n)

    # -- scaling sequences ----------------------------------------------

    def _first_integer(self, pred: Callable[[int], bool], lo: int = 1) -> int:
        """Smallest integer >= lo with pred true, assuming pred is monotone."""
        if pred(lo):
            return lo
        hi = max(2 * lo, 2)
        while not pred(hi):
            lo, hi = hi, 2 * hi
            if hi > 2**62:
                raise OverflowError("scaling sequence search diverged")
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if pred(mid):
                hi = mid
            else:
                lo = mid
        return hi

    def tail_scale(self) -> float:
        """Constant ``kappa`` with ``P(tau2 > a) ~ kappa L(a) a^-alpha2`` when alpha < 1."""
        return math.exp(self.h) / (math.expm1(self.nh) * (1.0 + self.base.alpha))

    def scaling_m(self, n: float) -> int:
        """``min{m >= 1 : P(tau2 > m) <= 1/n}``."""
        thr = 1.0 / n
        tab = self.marginal2_tail
        hit = np.nonzero(tab[1:] <= thr)[0]
        if len(hit):
            return int(hit[0]) + 1
        return self._first_integer(lambda a: self.tail2(a) <= thr, len(tab) - 1)

    def scaling_a(self, n: float) -> float:
        """Scaling sequence of the second coordinate, by exact inversion."""
        if self.alpha2 < 2.0:
            thr = self.tail_scale() / n
            tab = self.marginal2_tail
            hit = np.nonzero(tab[1:] <= thr)[0]
            if len(hit):
                return float(hit[0] + 1)
            return float(self._first_integer(lambda a: self.tail2(a) <= thr, len(tab) - 1))
        sig = self.sigma_table
        a = np.arange(len(sig), dtype=float)
        ok = sig[1:] * n <= a[1:] ** 2
        hit = np.nonzero(ok)[0]
        if len(hit):
            return float(hit[0] + 1)
        if not self.base.has_tail:
            return float(max(len(sig), math.ceil(math.sqrt(sig[-1] * n))))
        return float(self._first_integer(lambda v: self.sigma_trunc(v) * n <= v * v, len(sig) - 1))


def build_tilted_law(law: LoopLaw, h: float, nh: float, check_tol: float = 1e-8) -> TiltedLaw:
    if h <= 0:
        raise InvalidSpecError("the tilted law needs h > 0")
    sums = law.tilt_sums(nh, 0.0)
    eh = math.exp(h)
    mass = eh * sums[0]
    if abs(mass - 1.0) > check_tol:
        raise StaleTiltError(f"N={nh!r} does not solve the tilt equation at h={h!r} (mass {mass!r})")
    mu1, mu2 = eh * sums[1], eh * sums[2]
    el2, et2, elt = eh * sums[3], eh * sums[4], eh * sums[5]
    s1 = el2 - mu1 * mu1
    if math.isfinite(et2):
        s2 = et2 - mu2 * mu2
        rho = (elt - mu1 * mu2) / math.sqrt(s1 * s2) if s1 * s2 > 0 else 0.0
    else:
        s2, rho = math.inf, 0.0

    S = law.s_max
    x = math.exp(-nh)
    # q(m) = sum_{n>=1} K(m+n) x^n obeys q(m) = x (K(m+1) + q(m+1))
    if law.has_tail:
        n = np.arange(1, int(math.ceil(-math.log(_GEOM_EPS) / nh)) + 2, dtype=float)
        q_end = float(np.sum(np.exp(-nh * n) * law.K((S + n).astype(np.int64))))
    else:
        q_end = 0.0
    u = law.pmf[S:1:-1]  # K(S), K(S-1), ..., K(2)
    y, _ = signal.lfilter([x], [1.0, -x], u, zi=[x * q_end])
    q = np.zeros(S + 1)
    q[S] = q_end
    q[S - 1:0:-1] = y
    p2 = eh * q
    p2[0] = 0.0
    if law.has_tail:
        nn = np.arange(1, int(math.ceil(-math.log(_GEOM_EPS) / nh)) + 2)
        beyond = eh * float(np.sum(np.exp(-nh * nn) * law.power_tail(0, S + nn)))
    else:
        beyond = 0.0
    # tail[m] = P(tau2 > m) = beyond + sum_{m' = m+1}^{S} p2(m')
    tail = np.empty(S + 1)
    tail[S] = beyond
    tail[:S] = beyond + np.cumsum(p2[:0:-1])[::-1]
    m = np.arange(S + 1, dtype=float)
    sig = np.cumsum(m * m * p2)
    return TiltedLaw(law, h, nh, float(mass), float(mu1), float(mu2), float(s1), float(s2), float(rho),
                     p2, tail, sig)


def load_config(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def law_from_config(cfg: Mapping[str, Any]) -> LoopLaw:
    """Build a loop law from a JSON-style mapping.

    Either explicit masses under ``"pmf"`` (``{"2": 0.5, "3": 0.25}``) or the
    power-law keys ``alpha, sv_family, sv_beta, support_cap, analytic_tail``.
    """
    if "pmf" in cfg:
        return LoopLaw.from_pmf({int(k): float(v) for k, v in cfg["pmf"].items()},
                                label=cfg.get("label", "table"))
    return build_loop_law(KernelSpec.from_dict(cfg))


def free_ends_from_config(cfg: Mapping[str, Any]) -> FreeEndWeights:
    if cfg.get("sv_bar_family") == "none" or "alpha_bar" not in cfg:
        return FreeEndWeights.identity(int(cfg.get("j_max", 1)))
    return build_free_end_weights(
        float(cfg["alpha_bar"]),
        cfg.get("sv_bar_family", "constant"),
        int(cfg.get("j_max", 10_000)),
        float(cfg.get("sv_bar_beta", 0.0)),
    )
