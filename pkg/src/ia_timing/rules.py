"""Stopping rules and the effective historical sample size."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .model import Decision, PosteriorDraws


class Interim(str, enum.Enum):
    STOP_EARLY_WINNER = "stop_early_winner"
    STOP_EARLY_FUTILITY = "stop_early_futility"
    CONTINUE = "continue"


@dataclass(frozen=True)
class InterimDecision:
    outcome: Interim
    prob_sup: float
    prob_min: float


def _check_prob(**kw):
    for name, v in kw.items():
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1] (got {v})")


def interim_decide(prob_sup: float, prob_min: float, p_U: float, p_L: float) -> InterimDecision:
    """Early-winner check first, then futility."""
    _check_prob(prob_sup=prob_sup, prob_min=prob_min, p_U=p_U, p_L=p_L)
    if prob_sup > p_U:
        out = Interim.STOP_EARLY_WINNER
    elif prob_min < p_L:
        out = Interim.STOP_EARLY_FUTILITY
    else:
        out = Interim.CONTINUE
    return InterimDecision(out, prob_sup, prob_min)


def final_decide(prob_sup: float, p_0: float) -> Decision:
    _check_prob(prob_sup=prob_sup, p_0=p_0)
    return Decision.FINAL_WINNER if prob_sup > p_0 else Decision.NO_WINNER


def ehss(prec_full, prec_ped, n0k):
    """Effective historical sample size for one arm, clamped to [0, n0k].

    Works elementwise on arrays as well as on scalars.
    """
    pf = np.asarray(prec_full, dtype=float)
    pp = np.asarray(prec_ped, dtype=float)
    if np.any(~(pf > 0)) or np.any(~(pp > 0)):
        raise ValueError("precisions must be positive")
    if np.any(np.asarray(n0k) < 0):
        raise ValueError("n0k must be >= 0")
    out = np.minimum(np.maximum(n0k * (pf / pp - 1.0), 0.0), n0k)
    return float(out) if out.ndim == 0 else out


def decide_paths(prob_sup_ia, prob_min_ia, prob_sup_final, p_U, p_L, p_0) -> np.ndarray:
    """Vectorised rule application; returns an array of Decision codes 0..3.

    Codes index ``DECISION_ORDER``.
    """
    win = np.asarray(prob_sup_ia) > p_U
    fut = ~win & (np.asarray(prob_min_ia) < p_L)
    cont = ~(win | fut)
    final_win = cont & (np.asarray(prob_sup_final) > p_0)
    code = np.full(win.shape, 3, dtype=np.int8)
    code[win] = 0
    code[fut] = 1
    code[final_win] = 2
    return code


DECISION_ORDER = (Decision.EARLY_WINNER, Decision.EARLY_FUTILITY,
                  Decision.FINAL_WINNER, Decision.NO_WINNER)


def ci_equivalence_check(draws: PosteriorDraws, p_0: float) -> bool:
    """Compare the tail-probability verdict with the equal-tail credible interval verdict.

    The interval has coverage 2*p_0 - 1; the verdict is "winner" when its lower
    end is above zero. Quantile granularity is one draw, so a tail probability
    within 1/G of p_0 counts as agreement either way.
    """
    if not 0.5 < p_0 < 1.0:
        raise ValueError("p_0 must lie in (0.5, 1)")
    delta = draws.delta
    G = delta.size
    p_sup = float(np.mean(delta > 0))
    by_prob = p_sup > p_0
    lower = np.quantile(delta, 1.0 - p_0)
    by_interval = lower > 0
    if by_prob == by_interval:
        return True
    return abs(p_sup - p_0) <= 1.0 / G
