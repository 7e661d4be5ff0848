"""Threshold calibration: Type I error and power by simulation.

For each interim time the null (0, 0) and alternative (0, alt_effect) batches
are simulated once; every candidate threshold tuple is then scored on those
same replication paths (common random numbers).
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Optional

from .model import DesignConfig, TruthScenario, binomial_se
from .sim import BatchRequest, HistoricalDataset, Paths, Thresholds, simulate_many, simulate_paths

NULL_TAG = "null"
ALT_TAG = "alt"


class CalibrationError(RuntimeError):
    """No threshold tuple meets the size (and power) requirements."""

    def __init__(self, message, results=None):
        super().__init__(message)
        self.results = results


@dataclass(frozen=True)
class RateEstimate:
    rate: float
    se: float
    early: float
    final: float
    n_rep: int


def _win_rate(paths: Paths, th: Thresholds) -> RateEstimate:
    c = paths.counts(th)
    r = len(paths)
    early = c["early_winner"] / r
    final = c["final_winner"] / r
    rate = (c["early_winner"] + c["final_winner"]) / r
    return RateEstimate(rate, binomial_se(rate, r), early, final, r)


def null_scenario() -> TruthScenario:
    return TruthScenario.point(0.0, 0.0)


def alt_scenario(config: DesignConfig) -> TruthScenario:
    return TruthScenario.point(0.0, config.alt_effect)


def estimate_type1(config, hist, n_prime, thresholds, n_rep, seed, workers=None) -> RateEstimate:
    """Share of early plus final winners under theta1 = theta2 = 0."""
    paths = simulate_paths(config, hist, null_scenario(), n_prime, n_rep, seed, NULL_TAG, workers)
    return _win_rate(paths, thresholds)


def estimate_power(config, hist, n_prime, thresholds, n_rep, seed, workers=None) -> RateEstimate:
    """Share of early plus final winners under theta2 - theta1 = alt_effect."""
    paths = simulate_paths(config, hist, alt_scenario(config), n_prime, n_rep, seed, ALT_TAG, workers)
    return _win_rate(paths, thresholds)


@dataclass(frozen=True)
class CalibrationRow:
    n_prime: int
    p_U: float
    p_L: float
    p_0: float
    type1: float
    type1_early: float
    type1_final: float
    type1_se: float
    power: float
    power_se: float
    admissible: bool

    @property
    def thresholds(self) -> Thresholds:
        return Thresholds(self.p_U, self.p_L, self.p_0)


@dataclass
class CalibrationResult:
    n_prime: int
    rows: list
    selected: CalibrationRow
    ok: bool
    null_paths: Optional[Paths] = field(default=None, repr=False)
    alt_paths: Optional[Paths] = field(default=None, repr=False)

    @property
    def thresholds(self) -> Thresholds:
        return self.selected.thresholds


def tolerance(config: DesignConfig, se: float) -> float:
    return max(0.004, 2.0 * se)


def candidate_thresholds(config: DesignConfig, pu_grid=None) -> list:
    pu = sorted(pu_grid if pu_grid is not None else config.pu_grid, reverse=True)
    if not config.full_grid_search:
        return [Thresholds(u, config.p_L, config.p_0) for u in pu]
    out = []
    for p0, pl, u in itertools.product(sorted(config.p0_grid), sorted(config.pl_grid), pu):
        if pl < p0 <= u:
            out.append(Thresholds(u, pl, p0))
    return out


def score_grid(config, n_prime, null_paths: Paths, alt_paths: Paths, pu_grid=None,
               power_screen=True) -> CalibrationResult:
    """Score every candidate on fixed paths and pick the one whose size is
    closest to the target (ties go to the larger p_U)."""
    rows = []
    for th in candidate_thresholds(config, pu_grid):
        t1 = _win_rate(null_paths, th)
        pw = _win_rate(alt_paths, th)
        size_ok = abs(t1.rate - config.alpha_target) <= tolerance(config, t1.se)
        power_ok = pw.rate >= config.power_target if power_screen else True
        rows.append(CalibrationRow(n_prime, th.p_U, th.p_L, th.p_0, t1.rate, t1.early, t1.final,
                                   t1.se, pw.rate, pw.se, size_ok and power_ok))
    if not rows:
        raise CalibrationError(f"n'={n_prime}: empty threshold grid")
    pool = [r for r in rows if r.admissible] or rows
    best = min(pool, key=lambda r: (abs(r.type1 - config.alpha_target), -r.p_U, -r.p_0, r.p_L))
    return CalibrationResult(n_prime, rows, best, best.admissible, null_paths, alt_paths)


def calibrate(config: DesignConfig, hist: HistoricalDataset, n_prime: int, pu_grid=None,
              n_rep=None, seed=None, workers=None, strict=True) -> CalibrationResult:
    """Calibrate p_U at one interim time.

    With ``strict`` an empty admissible set raises CalibrationError (the
    result is attached to the exception).
    """
    res = calibrate_all(config, hist, [n_prime], pu_grid, n_rep, seed, workers)[n_prime]
    if strict and not res.ok:
        raise CalibrationError(
            f"n'={n_prime}: no admissible design (closest size {res.selected.type1:.4f} "
            f"at p_U={res.selected.p_U}); consider a larger n", res)
    return res


def calibrate_all(config, hist, grid=None, pu_grid=None, n_rep=None, seed=None,
                  workers=None, progress=None) -> dict:
    """Calibrate every interim time in one pool of simulation jobs."""
    grid = list(config.ia_grid if grid is None else grid)
    n_rep = config.n_rep if n_rep is None else n_rep
    seed = config.seed if seed is None else seed
    reqs = []
    for npr in grid:
        reqs.append(BatchRequest(null_scenario(), npr, n_rep, seed, NULL_TAG))
        reqs.append(BatchRequest(alt_scenario(config), npr, n_rep, seed, ALT_TAG))
    paths = simulate_many(config, hist, reqs, workers, progress)
    out = {}
    for i, npr in enumerate(grid):
        out[npr] = score_grid(config, npr, paths[2 * i], paths[2 * i + 1], pu_grid)
    return out
