"""Risk metrics over a Year Loss Table.

Empirical definitions, no interpolation between order statistics:

* exceedance probability of ``v``: fraction of trials with loss ``>= v``
* PML at return period ``RP``: the ``ceil(N / RP)``-th largest loss
* VaR at ``alpha``: smallest loss ``v`` with ``#(loss <= v) / N >= alpha``
* TVaR at ``alpha``: mean of the ``ceil((1 - alpha) * N)`` largest losses, computed
  exactly and rounded once

Return periods and alphas enter rank arithmetic as the exact decimal they print
as (``0.7`` is seven tenths, not the nearest double), so ranks never drift by
one from float rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

import numpy as np

from .model import YearLossTable


class MetricError(ValueError):
    pass


class EmptyYltError(MetricError):
    pass


class InsufficientTrialsError(MetricError):
    pass


@dataclass(frozen=True)
class EpCurve:
    losses: np.ndarray
    probabilities: np.ndarray

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.losses.tolist(), self.probabilities.tolist()))

    def __len__(self) -> int:
        return int(self.losses.shape[0])


def _losses(ylt: YearLossTable | np.ndarray) -> np.ndarray:
    losses = ylt.losses if isinstance(ylt, YearLossTable) else np.asarray(ylt)
    if losses.size == 0:
        raise EmptyYltError("YLT is empty")
    return losses.astype(np.float64)


def _exact(x: float) -> Fraction:
    return Fraction(repr(float(x)))


def exceedance_curve(ylt: YearLossTable | np.ndarray) -> EpCurve:
    ordered = np.sort(_losses(ylt))
    n = ordered.size
    values, first = np.unique(ordered, return_index=True)
    return EpCurve(values, (n - first) / n)


def _pml_rank(n: int, return_period: float) -> int:
    rp = float(return_period)
    if not math.isfinite(rp) or rp <= 1.0:
        raise MetricError(f"return period must be > 1, got {return_period!r}")
    if rp > n:
        raise InsufficientTrialsError(f"return period {return_period!r} exceeds the {n} trials available")
    return math.ceil(Fraction(n) / _exact(rp))


def pml(ylt: YearLossTable | np.ndarray, return_period: float) -> float:
    losses = _losses(ylt)
    rank = _pml_rank(losses.size, return_period)
    # rank-th largest == (n - rank)-th smallest
    return float(np.partition(losses, losses.size - rank)[losses.size - rank])


def _alpha(alpha: float) -> Fraction:
    a = float(alpha)
    if not 0.0 < a < 1.0:
        raise MetricError(f"alpha must be in (0, 1), got {alpha!r}")
    return _exact(a)


def tail_count(n: int, alpha: float) -> int:
    return math.ceil((1 - _alpha(alpha)) * n)


def var(ylt: YearLossTable | np.ndarray, alpha: float) -> float:
    losses = _losses(ylt)
    k = math.ceil(_alpha(alpha) * losses.size)
    return float(np.partition(losses, k - 1)[k - 1])


def tvar(ylt: YearLossTable | np.ndarray, alpha: float) -> float:
    losses = _losses(ylt)
    k = tail_count(losses.size, alpha)
    tail = np.partition(losses, losses.size - k)[losses.size - k:]
    # exact mean, rounded once: fsum(tail) / k rounds twice and can land below
    # min(tail) (three copies of x may average to x - 1 ulp), breaking tvar >= var
    return float(sum(map(Fraction, tail.tolist()), Fraction(0)) / k)


def rpl_report(ylt: YearLossTable | np.ndarray, periods: Iterable[float]) -> list[tuple[float, float]]:
    """``(return_period, pml)`` rows, deduplicated and sorted by period."""
    return [(rp, pml(ylt, rp)) for rp in sorted(set(float(p) for p in periods))]


def var_tvar_report(ylt: YearLossTable | np.ndarray, alphas: Iterable[float]) -> list[tuple[float, float, float]]:
    return [(a, var(ylt, a), tvar(ylt, a)) for a in sorted(set(float(a) for a in alphas))]
