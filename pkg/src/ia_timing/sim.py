"""Simulated trial replications.

A replication draws the true pediatric means, generates interim and remaining
pediatric data, fits the commensurate and pediatric-only models at the
interim look and the commensurate model at the end. The resulting posterior
probabilities (a *path*) are kept for every replication, so the decision rules
can be re-applied under any thresholds without re-simulating: this is what
gives common random numbers across a threshold grid.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import rules, streams
from .gibbs import FULL, PED_ONLY, ModelSpec, SuffStats, sample_chains
from .model import (DesignConfig, DesignPrior, ReplicationOutcome, TruthScenario)
from .parallel import run_jobs


@dataclass(frozen=True)
class Thresholds:
    p_U: float
    p_L: float
    p_0: float

    @classmethod
    def from_config(cls, config: DesignConfig) -> "Thresholds":
        return cls(config.p_U, config.p_L, config.p_0)


@dataclass(frozen=True)
class HistoricalDataset:
    """Adult observations frozen for a whole study, plus how they were made."""
    y: tuple
    delta0: float = float("nan")
    sd: float = float("nan")
    seed: Optional[int] = None
    exact_moments: bool = False

    @property
    def n0(self) -> tuple:
        return tuple(len(v) for v in self.y)


def _standardize(x: np.ndarray, mean: float, sd: float) -> np.ndarray:
    if x.size == 0:
        return x
    if x.size == 1:
        return np.array([mean])
    return mean + sd * (x - x.mean()) / x.std(ddof=1)


def make_historical(n01: int, n02: int, delta0: float, sd: float, seed: int,
                    exact_moments: bool = False) -> HistoricalDataset:
    """Placebo ~ N(0, sd^2), treated ~ N(delta0, sd^2), i.i.d. from ``seed``.

    With ``exact_moments`` each arm is affinely rescaled so its sample mean and
    sample SD equal the generating values exactly.
    """
    if n01 < 0 or n02 < 0:
        raise ValueError("historical sizes must be >= 0")
    if not sd > 0:
        raise ValueError("sd must be positive")
    rng = streams.stream(seed, "historical")
    y1 = rng.normal(0.0, sd, n01)
    y2 = rng.normal(delta0, sd, n02)
    if exact_moments:
        y1 = _standardize(y1, 0.0, sd)
        y2 = _standardize(y2, delta0, sd)
    for v in (y1, y2):
        v.setflags(write=False)
    return HistoricalDataset((y1, y2), delta0, sd, seed, exact_moments)


def historical_from_config(config: DesignConfig) -> HistoricalDataset:
    return make_historical(config.n01, config.n02, config.hist_delta0, config.hist_sd,
                           config.hist_seed, config.hist_exact_moments)


def draw_truth(scenario: TruthScenario, rng: np.random.Generator, size: Optional[int] = None):
    """True (theta1, theta2); with ``size`` an array of shape (size, 2)."""
    if scenario.fixed is not None:
        t = np.asarray(scenario.fixed, dtype=float)
        return tuple(t) if size is None else np.tile(t, (size, 1))
    p: DesignPrior = scenario.prior
    k = 1 if size is None else size
    t = np.column_stack([rng.normal(p.theta1_des, p.sigma1_des, k),
                         rng.normal(p.theta2_des, p.sigma2_des, k)])
    return tuple(t[0]) if size is None else t


@dataclass
class Paths:
    """Per-replication posterior summaries at one interim time n'."""
    n_prime: int
    n: int
    truth: np.ndarray            # (r, 2)
    prob_sup_ia: np.ndarray      # (r,)
    prob_min_ia: np.ndarray      # (r,)
    prob_sup_final: np.ndarray   # (r,)
    ehss: np.ndarray             # (r, 2)
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return self.prob_sup_ia.size

    @property
    def ehss_flag(self) -> np.ndarray:
        return self.ehss.sum(axis=1) > 2 * self.n_prime

    @classmethod
    def concat(cls, parts) -> "Paths":
        parts = list(parts)
        p0 = parts[0]
        return cls(p0.n_prime, p0.n,
                   np.concatenate([p.truth for p in parts]),
                   np.concatenate([p.prob_sup_ia for p in parts]),
                   np.concatenate([p.prob_min_ia for p in parts]),
                   np.concatenate([p.prob_sup_final for p in parts]),
                   np.concatenate([p.ehss for p in parts]),
                   dict(p0.meta))

    def codes(self, th: Thresholds) -> np.ndarray:
        return rules.decide_paths(self.prob_sup_ia, self.prob_min_ia, self.prob_sup_final,
                                  th.p_U, th.p_L, th.p_0)

    def counts(self, th: Thresholds) -> dict:
        c = np.bincount(self.codes(th), minlength=4)
        return {d.value: int(c[i]) for i, d in enumerate(rules.DECISION_ORDER)}

    def outcomes(self, th: Thresholds) -> list:
        codes = self.codes(th)
        flags = self.ehss_flag
        out = []
        for i, c in enumerate(codes):
            d = rules.DECISION_ORDER[c]
            interim = d.is_interim
            out.append(ReplicationOutcome(
                decision=d,
                stage="interim" if interim else "final",
                sample_used=self.n_prime if interim else self.n,
                ehss=(float(self.ehss[i, 0]), float(self.ehss[i, 1])),
                ehss_flag=bool(flags[i]),
                prob_sup_interim=float(self.prob_sup_ia[i]),
                prob_min_interim=float(self.prob_min_ia[i]),
                prob_sup_final=float(self.prob_sup_final[i]),
            ))
        return out


def simulate_paths_rng(config: DesignConfig, hist: HistoricalDataset, scenario: TruthScenario,
                       n_prime: int, size: int, rng: np.random.Generator,
                       interim_only: bool = False) -> Paths:
    """Simulate ``size`` replications from a single generator.

    ``interim_only`` skips the final fit (final probabilities become NaN); the
    final fit draws last from ``rng``, so interim results are unaffected.
    """
    n_half = config.n1
    h = n_prime // 2
    rest = n_half - h
    truth = draw_truth(scenario, rng, size)
    ia = [truth[:, k, None] + config.gen_sd * rng.standard_normal((size, h)) for k in (0, 1)]
    late = [truth[:, k, None] + config.gen_sd * rng.standard_normal((size, rest)) for k in (0, 1)]

    iters, burn = config.mcmc_iters, config.burn_in
    full_spec = ModelSpec.from_config(config, FULL)
    ped_spec = ModelSpec.from_config(config, PED_ONLY)

    fit_ia = sample_chains(full_spec, SuffStats.from_arrays(ia, hist.y), iters, burn, rng,
                           threshold=config.theta_min)
    fit_ped = sample_chains(ped_spec, SuffStats.from_arrays(ia), iters, burn, rng)
    n0 = np.array(hist.n0, dtype=float)
    ehss = np.column_stack([rules.ehss(fit_ia.precision[k], fit_ped.precision[k], n0[k])
                            for k in (0, 1)])
    if interim_only:
        p_final = np.full(size, np.nan)
    elif rest == 0:
        # interim look already sees the complete data
        p_final = fit_ia.p_sup
    else:
        full = [np.concatenate([ia[k], late[k]], axis=1) for k in (0, 1)]
        fit_end = sample_chains(full_spec, SuffStats.from_arrays(full, hist.y), iters, burn, rng)
        p_final = fit_end.p_sup
    return Paths(n_prime, config.n, truth, fit_ia.p_sup, fit_ia.p_above, p_final, ehss)


def simulate_block(config, hist, scenario, n_prime, size, seed, tag, block,
                   interim_only=False) -> Paths:
    return simulate_paths_rng(config, hist, scenario, n_prime, size,
                              streams.stream(seed, tag, n_prime, block), interim_only)


@dataclass(frozen=True)
class BatchRequest:
    scenario: TruthScenario
    n_prime: int
    n_rep: int
    seed: int
    tag: str
    interim_only: bool = False


def block_jobs(config, hist, req: BatchRequest):
    bs = config.block_size
    jobs = []
    for b, start in enumerate(range(0, req.n_rep, bs)):
        size = min(bs, req.n_rep - start)
        jobs.append((config, hist, req.scenario, req.n_prime, size, req.seed, req.tag, b,
                     req.interim_only))
    return jobs


def simulate_many(config, hist, requests, workers=None, progress=None) -> list:
    """Run several batch requests through one pool; returns Paths per request.

    ``hist`` is either one HistoricalDataset for all requests or a list with
    one per request.
    """
    requests = list(requests)
    for r in requests:
        if r.n_rep < 1:
            raise ValueError("n_rep must be >= 1")
        if r.n_prime not in config.ia_grid:
            raise ValueError(f"n' = {r.n_prime} not in ia_grid")
    hists = hist if isinstance(hist, (list, tuple)) else [hist] * len(requests)
    jobs, owner = [], []
    for i, (r, h) in enumerate(zip(requests, hists)):
        js = block_jobs(config, h, r)
        jobs += js
        owner += [i] * len(js)
    results = run_jobs(simulate_block, jobs, workers, progress)
    grouped = [[] for _ in requests]
    for i, res in zip(owner, results):
        grouped[i].append(res)
    out = []
    for r, parts in zip(requests, grouped):
        p = Paths.concat(parts)
        p.meta.update(tag=r.tag, seed=r.seed, scenario=r.scenario)
        out.append(p)
    return out


def simulate_paths(config, hist, scenario, n_prime, n_rep, seed, tag="batch", workers=None) -> Paths:
    return simulate_many(config, hist, [BatchRequest(scenario, n_prime, n_rep, seed, tag)], workers)[0]


def run_replication(config: DesignConfig, hist: HistoricalDataset, truth, n_prime: int,
                    rng: np.random.Generator, thresholds: Optional[Thresholds] = None) -> ReplicationOutcome:
    """One complete simulated trial under fixed true means."""
    if n_prime not in config.ia_grid:
        raise ValueError(f"n' = {n_prime} not in ia_grid")
    th = thresholds or Thresholds.from_config(config)
    paths = simulate_paths_rng(config, hist, TruthScenario.point(*truth), n_prime, 1, rng)
    return paths.outcomes(th)[0]


def run_batch(config, hist, scenario, n_prime, n_rep, master_seed, tag="batch",
              thresholds=None, workers=None) -> list:
    """``n_rep`` replications, ordered by replication index."""
    th = thresholds or Thresholds.from_config(config)
    return simulate_paths(config, hist, scenario, n_prime, n_rep, master_seed, tag, workers).outcomes(th)


def write_trace(paths: Paths, th: Thresholds, path) -> None:
    """Per-replication trace as CSV."""
    outs = paths.outcomes(th)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["rep", "theta1", "theta2", "decision", "stage", "sample_used",
                    "prob_sup_interim", "prob_min_interim", "prob_sup_final",
                    "ehss1", "ehss2", "ehss_flag"])
        for i, o in enumerate(outs):
            w.writerow([i, f"{paths.truth[i, 0]:.6f}", f"{paths.truth[i, 1]:.6f}", o.decision.value,
                        o.stage, o.sample_used, f"{o.prob_sup_interim:.6f}",
                        f"{o.prob_min_interim:.6f}", f"{o.prob_sup_final:.6f}",
                        f"{o.ehss[0]:.6f}", f"{o.ehss[1]:.6f}", int(o.ehss_flag)])
