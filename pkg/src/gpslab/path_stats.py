"""Trajectory summaries, condensation events and their predicted probabilities.

Events (all thresholds from an :class:`EventSpec`):

* ``BL`` (big loop): the largest loop is within ``a_plus`` of ``t_N``, the
  second largest is below ``m_plus`` and both free ends are at most ``u``.
* ``BL0``: a big loop with both free ends empty.
* ``US`` (unbound strand): every loop is below ``m_plus``, the first free
  end is at most ``u`` and the second is within ``a_tilde_plus`` of ``t_N``.
* ``mixed``: a big loop of relative size ``1 +- eps`` together with a
  second free end in ``[v, eps t_N]``; only defined when ``v`` and ``eps``
  are set.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import binomtest

from .errors import SpecInfeasibleError, WrongBranchError
from .loop_law import FreeEndWeights, LoopLaw, TiltedLaw


@dataclass(frozen=True)
class PathSummary:
    kappa: int
    M1: int
    M2: int
    V1: int
    V2: int
    total_l: int
    total_t: int


def summarize(traj) -> PathSummary:
    """Loop count, top two second-coordinate increments and free-end lengths."""
    ts = sorted((t for _, t in traj.loops), reverse=True)
    return PathSummary(
        kappa=len(traj.loops),
        M1=ts[0] if ts else 0,
        M2=ts[1] if len(ts) > 1 else 0,
        V1=int(traj.free_end_1),
        V2=int(traj.free_end_2),
        total_l=sum(l for l, _ in traj.loops),
        total_t=sum(ts),
    )


def summarize_batch(batch) -> list:
    """Summaries of a :class:`~gpslab.sampler.TrajectoryBatch` without materializing loops."""
    kappa, m1, m2 = batch.order_stats()
    tot_l = np.add.reduceat(batch.l, batch.offsets[:-1]) if len(batch.l) else np.zeros(len(kappa), int)
    tot_t = np.add.reduceat(batch.t, batch.offsets[:-1]) if len(batch.t) else np.zeros(len(kappa), int)
    tot_l = np.where(kappa > 0, tot_l, 0)
    tot_t = np.where(kappa > 0, tot_t, 0)
    return [PathSummary(int(k), int(a), int(b), int(v1), int(v2), int(x), int(y))
            for k, a, b, v1, v2, x, y in zip(kappa, m1, m2, batch.v1, batch.v2, tot_l, tot_t)]


# ---------------------------------------------------------------------------
# event specification


def slow_multiplier(N: float) -> float:
    """``(log log N)^(1/4)``: tends to infinity, but slowly enough for desk-scale N."""
    return math.log(math.log(N)) ** 0.25 if N > math.e else 1.0


@dataclass(frozen=True)
class EventSpec:
    u_N: int
    m_N_plus: int
    a_N_plus: int
    a_N_tilde_plus: int
    t_N: int
    v_N: int | None = None
    eps_N: float | None = None
    derivation: dict = field(default_factory=dict, compare=False)

    @property
    def has_mixed(self) -> bool:
        return self.v_N is not None and self.eps_N is not None

    def violations(self, m_N: float, a_N: float) -> list:
        """Orderings that fail at this ``N`` (empty when the spec is feasible)."""
        out = []
        checks = [
            (self.u_N >= 1, "u_N >= 1"),
            (self.m_N_plus > m_N, "m_N_plus > m_N"),
            (self.a_N_plus > a_N, "a_N_plus > a_N"),
            (self.a_N_tilde_plus > a_N, "a_N_tilde_plus > a_N"),
            (self.t_N > self.m_N_plus, "t_N > m_N_plus"),
            (self.t_N > self.a_N_plus, "t_N > a_N_plus"),
            (self.t_N > self.a_N_tilde_plus, "t_N > a_N_tilde_plus"),
            (self.t_N - self.a_N_tilde_plus > self.u_N, "t_N - a_N_tilde_plus > u_N"),
        ]
        if self.has_mixed:
            checks += [
                (self.v_N > self.u_N, "v_N > u_N"),
                (0 < self.eps_N < 1, "0 < eps_N < 1"),
                (self.eps_N * self.t_N >= self.v_N, "eps_N t_N >= v_N"),
                (self.eps_N * self.t_N < self.t_N - self.a_N_tilde_plus, "eps_N t_N < t_N - a_N_tilde_plus"),
            ]
        return [name for ok, name in checks if not ok]


def mixed_parameters(fw: FreeEndWeights, t_N: int, u_N: int, N: int, k_max: int = 30):
    """``(v_N, eps_N)`` for the mixed event.

    ``v_N = u_N + 1`` keeps the mixed and big-loop events apart through the
    free end.  ``eps_N`` is the smallest power of two ``2^-k`` (``k >= 1``)
    such that ``Kbar(eps t_N) >= (1 - 1/log N) Kbar(t_N)`` and
    ``eps t_N >= v_N``: the free-end window keeps all but a vanishing
    fraction of the free-end mass up to ``t_N``.
    """
    v = u_N + 1
    target = (1.0 - 1.0 / math.log(N)) * fw.kbar(t_N)
    eps = 0.5
    for k in range(1, k_max + 1):
        cand = 2.0 ** -k
        if cand * t_N < v or fw.kbar(int(cand * t_N)) < target:
            break
        eps = cand
    return v, eps


def default_event_spec(tl: TiltedLaw, N: int, M: int, fw: FreeEndWeights | None = None,
                       multiplier=slow_multiplier, strict: bool = True) -> EventSpec:
    """Cutoff sequences at ``(N, M)``.

    ``u_N = ceil(log N)``, ``m_plus = ceil(m_N l(N))`` and
    ``a_plus = a_tilde_plus = ceil(a_N l(N))`` with ``l = multiplier``.  When
    ``fw`` has ``alpha_bar = 1`` and infinite mass the mixed-event parameters
    are filled in as well.  Raises :class:`SpecInfeasibleError` if an
    ordering fails (unless ``strict`` is false).
    """
    t_real = M - tl.gamma_c * N
    if t_real <= 0:
        raise SpecInfeasibleError(f"t_N = {t_real:.6g} is not positive")
    t_N = int(round(t_real))
    m_N = tl.scaling_m(N)
    a_N = tl.scaling_a(N)
    ell = float(multiplier(N))
    u = int(math.ceil(math.log(N)))
    m_plus = int(math.ceil(m_N * ell))
    a_plus = int(math.ceil(a_N * ell))
    v = eps = None
    if fw is not None and fw.alpha_bar == 1 and not fw.finite and t_N > 0:
        v, eps = mixed_parameters(fw, t_N, u, N)
    spec = EventSpec(u, m_plus, a_plus, a_plus, t_N, v, eps,
                     derivation={"m_N": m_N, "a_N": a_N, "multiplier": ell, "t_real": t_real,
                                 "rule": "u=ceil(log N); caps=ceil(base*(log log N)^(1/4))"})
    bad = spec.violations(m_N, a_N)
    if bad and strict:
        raise SpecInfeasibleError(f"event orderings fail at N={N}: {', '.join(bad)}")
    return spec


def classify_event(ps: PathSummary, spec: EventSpec) -> str:
    """One of ``BL0``, ``BL``, ``US``, ``mixed`` or ``other`` (checked in that order)."""
    t = spec.t_N
    bl = (t - spec.a_N_plus <= ps.M1 <= t + spec.a_N_plus and ps.M2 < spec.m_N_plus
          and max(ps.V1, ps.V2) <= spec.u_N)
    if bl:
        return "BL0" if ps.V1 == 0 and ps.V2 == 0 else "BL"
    if (ps.M1 < spec.m_N_plus and ps.V1 <= spec.u_N
            and t - spec.a_N_tilde_plus <= ps.V2 <= t + spec.a_N_tilde_plus):
        return "US"
    if spec.has_mixed:
        e = spec.eps_N
        if (1 - e <= ps.M1 / t <= 1 + e and ps.M2 < spec.m_N_plus and ps.V1 <= spec.u_N
                and spec.v_N <= ps.V2 <= e * t):
            return "mixed"
    return "other"


@dataclass(frozen=True)
class EventProbs:
    p_BL: float
    p_US: float
    p_mixed: float
    p_other: float
    p_BL0: float
    intervals: dict
    n_samples: int
    counts: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"p_BL": self.p_BL, "p_US": self.p_US, "p_mixed": self.p_mixed,
                "p_BL0": self.p_BL0, "p_other": self.p_other, "n": self.n_samples,
                "intervals": {k: list(v) for k, v in self.intervals.items()}}


def wilson_interval(k: int, n: int, level: float = 0.95) -> tuple:
    ci = binomtest(int(k), int(n)).proportion_ci(confidence_level=level, method="wilson")
    return float(ci.low), float(ci.high)


def empirical_event_probs(samples: Iterable[PathSummary], spec: EventSpec) -> EventProbs:
    """Event frequencies with Wilson 95% intervals; ``BL`` includes ``BL0``."""
    counts = {"BL0": 0, "BL": 0, "US": 0, "mixed": 0, "other": 0}
    n = 0
    for ps in samples:
        counts[classify_event(ps, spec)] += 1
        n += 1
    if n == 0:
        raise ValueError("need at least one sample")
    k = {"BL": counts["BL"] + counts["BL0"], "US": counts["US"], "mixed": counts["mixed"],
         "other": counts["other"], "BL0": counts["BL0"]}
    return EventProbs(
        p_BL=k["BL"] / n, p_US=k["US"] / n, p_mixed=k["mixed"] / n, p_other=k["other"] / n,
        p_BL0=k["BL0"] / n, intervals={name: wilson_interval(c, n) for name, c in k.items()},
        n_samples=n, counts=k,
    )


# ---------------------------------------------------------------------------
# predicted odds


def c_h(fw: FreeEndWeights, tl: TiltedLaw) -> float:
    """``e^h sum_{j>=0} K_f(j) / (mu1_hat (e^N - 1))``."""
    return math.exp(tl.h) * fw.total_with_zero / (tl.mu1_hat * math.expm1(tl.nh))


def theoretical_QN(law: LoopLaw, fw: FreeEndWeights, tl: TiltedLaw, N: int, t_N: float) -> float:
    """Big-loop to unbound-strand odds when the free-end weights are summable.

    ``Q_N = c_h N t^(alpha_bar - 2 - alpha) L(t) / Lbar(t)``, with ``L``
    including the normalization of ``K``.  Predicted probabilities are
    ``1/(1+Q_N)`` for US and ``Q_N/(1+Q_N)`` for BL.
    """
    if not fw.finite:
        raise WrongBranchError("free-end weights are not summable; use theoretical_tildeQN")
    if law.degenerate:
        raise WrongBranchError("Q_N needs a regularly varying loop law")
    t = float(t_N)
    return c_h(fw, tl) * N * t ** (fw.alpha_bar - 2.0 - law.alpha) * law.sv_full(t) / fw.sv_at(t)


def theoretical_tildeQN(law: LoopLaw, fw: FreeEndWeights, tl: TiltedLaw, N: int, t_N: float) -> float:
    """Mixed to unbound-strand odds ``(N/mu1_hat) P(tau2 = t) Kbar(t) / K_f(t)`` (``alpha_bar = 1``, infinite mass)."""
    if fw.finite or fw.alpha_bar != 1:
        raise WrongBranchError("the mixed branch needs alpha_bar = 1 with non-summable weights")
    t = int(math.ceil(t_N))
    return N / tl.mu1_hat * tl.marginal2_pmf(t) * fw.kbar(t) / float(fw.weight(t))


def predicted_probs(q: float) -> tuple:
    """``(1/(1+q), q/(1+q))``."""
    if math.isinf(q):
        return 0.0, 1.0
    return 1.0 / (1.0 + q), q / (1.0 + q)
