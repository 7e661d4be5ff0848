"""Design-prior stopping rates, payoff functions and interim-timing selection."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import DesignConfig, DesignPrior, TruthScenario, binomial_se
from .sim import BatchRequest, HistoricalDataset, Paths, Thresholds, simulate_many

FREQUENTIST = "frequentist"
BAYESIAN = "bayesian"
NET_GAIN = "net_gain"
MODES = (FREQUENTIST, BAYESIAN, NET_GAIN)


def prior_tag(prior: DesignPrior) -> str:
    return (f"prior:{prior.theta1_des:g}:{prior.theta2_des:g}:"
            f"{prior.sigma1_des:g}:{prior.sigma2_des:g}")


@dataclass(frozen=True)
class NetGainParams:
    a1: float
    a2: float
    b1: float
    b2: float
    C: float

    def __post_init__(self):
        errs = []
        if not self.a2 < self.a1:
            errs.append("a2 < a1 required (late loss worth less than early loss)")
        if not self.b2 < self.b1:
            errs.append("b2 < b1 required (late win worth less than early win)")
        if self.C < 0:
            errs.append("C must be >= 0")
        if errs:
            raise ValueError("; ".join(errs))


@dataclass(frozen=True)
class DesignPriorRates:
    n_prime: int
    n: int
    n_rep: int
    p_stop: float
    p1: float          # early futility
    p2: float          # early winner
    p3: float          # late (final) winner
    p4: float          # no winner at the end
    ehss: tuple
    ehss_se: tuple
    ehss_flag_rate: float

    @property
    def p_stop_se(self) -> float:
        return binomial_se(self.p_stop, self.n_rep)

    def se(self, rate: float) -> float:
        return binomial_se(rate, self.n_rep)

    @property
    def expected_ss(self) -> float:
        return expected_sample_size(self.p_stop, self.n_prime, self.n)

    @property
    def expected_ss_se(self) -> float:
        return (self.n - self.n_prime) * self.p_stop_se


def expected_sample_size(p_stop: float, n_prime: int, n: int) -> float:
    return p_stop * n_prime + (1.0 - p_stop) * n


def rates_from_paths(paths: Paths, th: Thresholds) -> DesignPriorRates:
    c = paths.counts(th)
    r = len(paths)
    p2 = c["early_winner"] / r
    p1 = c["early_futility"] / r
    p3 = c["final_winner"] / r
    p4 = 1.0 - p1 - p2 - p3
    e = paths.ehss
    ehss_se = tuple(float(e[:, k].std(ddof=1) / math.sqrt(r)) if r > 1 else float("nan") for k in (0, 1))
    return DesignPriorRates(paths.n_prime, paths.n, r, p1 + p2, p1, p2, p3, max(p4, 0.0),
                            tuple(float(x) for x in e.mean(axis=0)), ehss_se,
                            float(paths.ehss_flag.mean()))


def estimate_design_prior_rates(config: DesignConfig, hist: HistoricalDataset, prior: DesignPrior,
                                n_prime: int, n_rep=None, seed=None, thresholds=None,
                                workers=None) -> DesignPriorRates:
    """Stopping and decision rates with true means drawn from ``prior``."""
    th = thresholds or Thresholds.from_config(config)
    req = BatchRequest(TruthScenario.from_prior(prior), n_prime,
                       config.n_rep if n_rep is None else n_rep,
                       config.seed if seed is None else seed, prior_tag(prior))
    paths = simulate_many(config, hist, [req], workers)[0]
    return rates_from_paths(paths, th)


def _check_rates(**kw):
    for k, v in kw.items():
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{k} must lie in [0, 1] (got {v})")


def _payoff(p1, p2, p_stop, n_prime, n, w):
    if n <= 0:
        raise ValueError("n must be positive")
    _check_rates(p1=p1, p2=p2, p_stop=p_stop, w=w)
    return (w * p1 + (1.0 - w) * p2) / expected_sample_size(p_stop, n_prime, n)


def payoff_frequentist(p1_h0: float, p2_ha: float, p_stop: float, n_prime: int, n: int, w: float) -> float:
    """Weighted correct-early-decision probability per expected patient.

    Futility rate from the null batch, early-win rate from the alternative
    batch, stopping probability from the design-prior batch.
    """
    return _payoff(p1_h0, p2_ha, p_stop, n_prime, n, w)


def payoff_bayesian(p1_b: float, p2_b: float, p_stop: float, n_prime: int, n: int, w: float) -> float:
    """Same ratio with every rate taken from the design-prior batch."""
    return _payoff(p1_b, p2_b, p_stop, n_prime, n, w)


def expected_net_gain(p1, p2, p3, p4, params: NetGainParams, n_prime: int, n: int,
                      tol: float = 1e-6) -> float:
    _check_rates(p1=p1, p2=p2, p3=p3, p4=p4)
    if abs(p1 + p2 + p3 + p4 - 1.0) > tol:
        raise ValueError("decision rates must sum to 1")
    gain = p1 * params.a1 + p2 * params.b1 + p3 * params.b2 + p4 * params.a2
    return gain - params.C * ((p1 + p2) * n_prime + (p3 + p4) * n)


def net_gain_per_replication(paths: Paths, th: Thresholds, params: NetGainParams) -> np.ndarray:
    """Realised gain minus cost for each replication; its mean is the expected net gain."""
    codes = paths.codes(th)
    # code order: early winner, early futility, final winner, no winner
    gains = np.array([params.b1, params.a1, params.b2, params.a2])
    used = np.array([paths.n_prime, paths.n_prime, paths.n, paths.n], dtype=float)
    return gains[codes] - params.C * used[codes]


@dataclass(frozen=True)
class CurvePoint:
    n_prime: int
    fraction: float
    payoff: float
    payoff_se: float
    expected_ss: float
    expected_ss_se: float


def payoff_se_frequentist(p1, se1, p2, se2, rates: DesignPriorRates, w) -> float:
    d = rates.expected_ss
    num = w * p1 + (1 - w) * p2
    var_num = (w * se1) ** 2 + ((1 - w) * se2) ** 2
    return math.sqrt(var_num / d ** 2 + num ** 2 * rates.expected_ss_se ** 2 / d ** 4)


def payoff_se_bayesian(rates: DesignPriorRates, w) -> float:
    r, n_rep = rates, rates.n_rep
    c = r.n - r.n_prime
    d = r.expected_ss
    num = w * r.p1 + (1 - w) * r.p2
    g1 = w / d + num * c / d ** 2
    g2 = (1 - w) / d + num * c / d ** 2
    v = (g1 ** 2 * r.p1 * (1 - r.p1) + g2 ** 2 * r.p2 * (1 - r.p2) - 2 * g1 * g2 * r.p1 * r.p2) / n_rep
    return math.sqrt(max(v, 0.0))


def select_optimum(curve) -> CurvePoint:
    """Argmax of the payoff; ties go to the earlier look."""
    curve = list(curve)
    if not curve:
        raise ValueError("empty payoff curve")
    return max(curve, key=lambda p: (p.payoff, -p.n_prime))


def payoff_curve(mode: str, w: float, prior_rates: dict, calibration: Optional[dict] = None,
                 prior_paths: Optional[dict] = None, net_gain: Optional[NetGainParams] = None) -> list:
    """Build the payoff curve over the interim grid.

    ``prior_rates`` maps n' to DesignPriorRates; frequentist mode also needs
    ``calibration`` (n' to CalibrationResult) for the null/alternative rates,
    and net-gain mode needs ``prior_paths`` and ``net_gain``.
    """
    if mode not in MODES:
        raise ValueError(f"unknown payoff mode {mode!r}")
    pts = []
    for npr in sorted(prior_rates):
        r = prior_rates[npr]
        if mode == FREQUENTIST:
            cal = calibration[npr]
            th = cal.thresholds
            c0 = cal.null_paths.counts(th)
            ca = cal.alt_paths.counts(th)
            p1 = c0["early_futility"] / len(cal.null_paths)
            p2 = ca["early_winner"] / len(cal.alt_paths)
            val = payoff_frequentist(p1, p2, r.p_stop, npr, r.n, w)
            se = payoff_se_frequentist(p1, binomial_se(p1, len(cal.null_paths)),
                                       p2, binomial_se(p2, len(cal.alt_paths)), r, w)
        elif mode == BAYESIAN:
            val = payoff_bayesian(r.p1, r.p2, r.p_stop, npr, r.n, w)
            se = payoff_se_bayesian(r, w)
        else:
            if net_gain is None or prior_paths is None:
                raise ValueError("net_gain mode needs NetGainParams and design-prior paths")
            val = expected_net_gain(r.p1, r.p2, r.p3, r.p4, net_gain, npr, r.n)
            paths = prior_paths[npr]
            th = calibration[npr].thresholds if calibration else paths.meta["thresholds"]
            per = net_gain_per_replication(paths, th, net_gain)
            se = float(per.std(ddof=1) / math.sqrt(per.size)) if per.size > 1 else float("nan")
        pts.append(CurvePoint(npr, npr / r.n, val, se, r.expected_ss, r.expected_ss_se))
    return pts


def optimize_ia_timing(config: DesignConfig, hist: HistoricalDataset, prior: DesignPrior, w: float,
                       mode: str, calibration: Optional[dict] = None,
                       net_gain: Optional[NetGainParams] = None, workers=None):
    """Evaluate the payoff over ``config.ia_grid`` and return (best point, curve).

    Calibration is run first when not supplied.
    """
    from .calibration import calibrate_all

    if mode not in MODES:
        raise ValueError(f"unknown payoff mode {mode!r}")
    if calibration is None:
        calibration = calibrate_all(config, hist, workers=workers)
    grid = sorted(config.ia_grid)
    missing = [g for g in grid if g not in calibration]
    if missing:
        raise ValueError(f"calibration missing for n' in {missing}")
    reqs = [BatchRequest(TruthScenario.from_prior(prior), g, config.n_rep, config.seed, prior_tag(prior))
            for g in grid]
    paths = dict(zip(grid, simulate_many(config, hist, reqs, workers)))
    rates = {g: rates_from_paths(paths[g], calibration[g].thresholds) for g in grid}
    curve = payoff_curve(mode, w, rates, calibration, paths, net_gain)
    return select_optimum(curve), curve
