"""Desk-scale acceptance criteria.

One shared study (1000 replications, 2000-iteration chains, design priors
0/15/25/35, historical sizes 50, 20 and 100, no-borrowing baseline) feeds
criteria 2 to 8. Each criterion prints a single PASS/FAIL line in the
terminal summary. Set IA_TIMING_ACCEPTANCE_DIR to reuse a finished study
directory instead of simulating again.
"""
import csv
import json
import os
from collections import defaultdict
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from ia_timing import __version__
from ia_timing.model import DESK_SCALE, DesignConfig, PosteriorDraws, desk_scale
from ia_timing.parallel import default_workers
from ia_timing.payoff import payoff_frequentist
from ia_timing.rules import Interim, ci_equivalence_check, decide_paths, ehss, interim_decide
from ia_timing.study import METADATA, replay, run_study

from test_gibbs import conjugate_oracle_z

pytestmark = pytest.mark.acceptance

DELTAS = (0.0, 15.0, 25.0, 35.0)
WEIGHTS = (0.0, 0.5, 0.75, 1.0)
GRID_STEP = 4

# Published reference values
EHSS_HSS50 = {0.0: (19.25, 5.73), 25.0: (19.42, 19.49)}
EHSS_HSS20 = {0.0: (5.84, 1.66), 25.0: (6.17, 6.18)}
EHSS_HSS100 = {0.0: (40.53, 15.33), 25.0: (40.67, 40.81)}
FREQ_OPT = {0.0: (32, 28, 20, 20), 15.0: (32, 32, 28, 28), 25.0: (32, 28, 28, 20), 35.0: (28, 20, 20, 20)}
BAYES_OPT = {0.0: (40, 20, 20, 20), 15.0: (40, 40, 36, 28), 25.0: (28, 28, 28, 0), 35.0: (20, 20, 20, 0)}
SAVING_RANGE = (13.8, 44.9)

# Tolerances
SIZE_TOL = 0.015
POWER_BAND = (0.84, 0.93)
BASELINE_POWER, BASELINE_TOL = 0.812, 0.03
EHSS_TOL = 2.0
SAVING_SLACK = 5.0

RESULTS = {}


def record(num, ok, detail):
    line = f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[num] = line
    print(line)
    return ok


def _read(path):
    with open(path) as fh:
        return [{k: _num(v) for k, v in row.items()} for row in csv.DictReader(fh)]


def _num(v):
    if v in ("True", "False"):
        return v == "True"
    try:
        return float(v)
    except ValueError:
        return v


@pytest.fixture(scope="session")
def desk_study(tmp_path_factory):
    reuse = os.environ.get("IA_TIMING_ACCEPTANCE_DIR")
    if reuse:
        out = Path(reuse)
        meta = json.loads((out / METADATA).read_text())
        assert meta["version"] == __version__
    else:
        out = tmp_path_factory.mktemp("desk_study")
        cfg = desk_scale(DesignConfig())
        run_study(cfg, DELTAS, WEIGHTS, ("frequentist", "bayesian"), out, default_workers(),
                  hss_variants=("20", "100"), baseline=True)
        meta = json.loads((out / METADATA).read_text())
    cfg = DesignConfig.from_dict(meta["config"])
    assert cfg.n_rep == DESK_SCALE["n_rep"] and cfg.mcmc_iters == DESK_SCALE["mcmc_iters"]
    return {
        "config": cfg,
        "calibration": _read(out / "calibration.csv"),
        "oc": {d: _read(out / f"oc_delta{d:g}.csv") for d in DELTAS},
        "ehss": _read(out / "ehss.csv"),
        "ess": _read(out / "ess.csv"),
        "payoff": {m: _read(out / f"payoff_{m}.csv") for m in ("frequentist", "bayesian")},
        "optimal": {m: _read(out / f"optimal_{m}.csv") for m in ("frequentist", "bayesian")},
        "baseline": _read(out / "baseline.csv")[0],
    }


def _ehss_at(study, n01, n02, delta, ia_time):
    for r in study["ehss"]:
        if (r["n01"], r["n02"], r["delta"], r["ia_time"]) == (n01, n02, delta, ia_time):
            return r["ehss_placebo"], r["ehss_treated"]
    raise KeyError((n01, n02, delta, ia_time))


def _within_step(opt_rows, table):
    hits, cells = 0, []
    for r in opt_rows:
        want = table[r["delta"]][WEIGHTS.index(r["w"])]
        ok = abs(r["n_opt"] - want) <= GRID_STEP
        hits += ok
        cells.append(f"({r['delta']:g},{r['w']:g}):{int(r['n_opt'])}/{want}")
    return hits, cells


def test_criterion_01_conjugate_oracle():
    z = conjugate_oracle_z(instances=20)
    assert record(1, bool(np.all(z < 3)), f"20 instances, {z.size} moments, max |z| = {z.max():.2f} (< 3)")


def test_criterion_02_calibrated_size(desk_study):
    sel = [r for r in desk_study["calibration"] if r["selected"]]
    bad = [(int(r["n_prime"]), round(r["type1"], 3)) for r in sel if abs(r["type1"] - 0.05) > SIZE_TOL]
    sizes = ", ".join(f"{int(r['n_prime'])}:{r['type1']:.3f}" for r in sel)
    assert record(2, not bad, f"size 0.050 +/- {SIZE_TOL} at every n'; [{sizes}]"), bad


def test_criterion_03_power_band(desk_study):
    sel = [r for r in desk_study["calibration"] if r["selected"]]
    lo, hi = POWER_BAND
    off = [(int(r["n_prime"]), round(r["power"], 3)) for r in sel if not lo <= r["power"] <= hi]
    base = desk_study["baseline"]["power"]
    base_ok = abs(base - BASELINE_POWER) <= BASELINE_TOL
    ok = not off and base_ok
    powers = ", ".join(f"{int(r['n_prime'])}:{r['power']:.3f}" for r in sel)
    assert record(3, ok, f"power in [{lo}, {hi}] [{powers}]; baseline {base:.3f} vs "
                         f"{BASELINE_POWER} +/- {BASELINE_TOL}"), (off, base)


def test_criterion_04_ehss_table(desk_study):
    cfg = desk_study["config"]
    half = cfg.n // 2
    checks, notes = [], []
    for d, (p_ref, t_ref) in EHSS_HSS50.items():
        p, t = _ehss_at(desk_study, 25, 25, d, half)
        checks += [abs(p - p_ref) <= EHSS_TOL, abs(t - t_ref) <= EHSS_TOL]
        notes.append(f"D={d:g}: {p:.2f}/{t:.2f} vs {p_ref}/{t_ref}")
    p0, t0 = _ehss_at(desk_study, 25, 25, 0.0, half)
    p25, t25 = _ehss_at(desk_study, 25, 25, 25.0, half)
    checks.append(p0 > 2 * t0)
    checks.append(abs(p25 - t25) < 0.15 * max(p25, t25))
    # monotone decline over the tabulated range, 30% to 90% of n
    span = [g for g in cfg.ia_grid if 0.3 * cfg.n <= g <= 0.9 * cfg.n]
    rhos = []
    for d in DELTAS:
        vals = np.array([_ehss_at(desk_study, 25, 25, d, g) for g in span])
        for arm in (0, 1):
            rhos.append(stats.spearmanr(span, vals[:, arm]).statistic)
    checks.append(all(r < 0 for r in rhos))
    notes.append(f"structural {checks[-3:]}, max spearman {max(rhos):.2f}")
    assert record(4, all(checks), "; ".join(notes)), checks


def test_criterion_05_hss_sensitivity(desk_study):
    half = desk_study["config"].n // 2
    checks, notes = [], []
    for (n01, n02), ref in (((10, 10), EHSS_HSS20), ((50, 50), EHSS_HSS100)):
        for d, (p_ref, t_ref) in ref.items():
            p, t = _ehss_at(desk_study, n01, n02, d, half)
            checks += [abs(p - p_ref) <= EHSS_TOL, abs(t - t_ref) <= EHSS_TOL]
            notes.append(f"HSS {n01 + n02} D={d:g}: {p:.2f}/{t:.2f} vs {p_ref}/{t_ref}")
    assert record(5, all(checks), "; ".join(notes)), checks


def test_criterion_06_frequentist_argmax(desk_study):
    opt = desk_study["optimal"]["frequentist"]
    hits, cells = _within_step(opt, FREQ_OPT)
    by = {(r["delta"], r["w"]): int(r["n_opt"]) for r in opt}
    exact = by[(35.0, 0.5)] == 20 and by[(15.0, 0.0)] == 32
    # direct arithmetic on the measured rates reproduces the reported payoff
    oc20 = next(r for r in desk_study["oc"][35.0] if r["ia_time"] == 20)
    manual = (0.5 * oc20["P1"] + 0.5 * oc20["P2"]) / (oc20["IA_stop"] * 20 + (1 - oc20["IA_stop"]) * 40)
    reported = next(r["payoff"] for r in desk_study["payoff"]["frequentist"]
                    if (r["delta"], r["w"], r["ia_time"]) == (35.0, 0.5, 20))
    hand = payoff_frequentist(0.74, 0.52, 0.90, 20, 40, 0.5)
    arith = abs(manual - reported) < 1e-5 and abs(hand - 0.63 / 22) < 1e-12
    ok = hits >= 12 and exact and arith
    assert record(6, ok, f"{hits}/16 within one step (need 12); (35,.5)->{by[(35.0, 0.5)]}, "
                         f"(15,0)->{by[(15.0, 0.0)]}; arithmetic {arith}; {' '.join(cells)}"), cells


def test_criterion_07_bayesian_payoff(desk_study):
    rows = desk_study["payoff"]["bayesian"]
    curves = defaultdict(list)
    for r in rows:
        curves[(r["delta"], r["w"])].append(r["payoff"])
    flat_cells = [(0.0, 0.0), (25.0, 1.0), (35.0, 1.0)]
    flat = {c: (max(curves[c]) - min(curves[c])) < 0.2 * max(curves[c]) if max(curves[c]) > 0 else True
            for c in flat_cells}
    hits, cells = _within_step(desk_study["optimal"]["bayesian"], BAYES_OPT)
    ok = all(flat.values()) and hits >= 10
    assert record(7, ok, f"flat {flat}; {hits}/16 within one step (need 10); {' '.join(cells)}"), cells


def test_criterion_08_expected_sample_size(desk_study):
    n = desk_study["config"].n
    checks, notes = [], []
    by_delta = defaultdict(dict)
    for r in desk_study["ess"]:
        by_delta[r["delta"]][int(r["ia_time"])] = r
    for d, rows in by_delta.items():
        g_min = min(rows, key=lambda g: (rows[g]["expected_ss"], g))
        checks.append(g_min / n in (0.4, 0.5))
        checks.append(rows[36]["expected_ss_se"] < rows[4]["expected_ss_se"])
        notes.append(f"D={d:g} min at {g_min}")
    lo, hi = SAVING_RANGE[0] - SAVING_SLACK, SAVING_RANGE[1] + SAVING_SLACK
    savings = [r["saving_pct"] for r in desk_study["optimal"]["frequentist"]]
    checks.append(all(lo <= s <= hi for s in savings))
    notes.append(f"savings {min(savings):.1f}%..{max(savings):.1f}% vs [{lo}, {hi}]")
    assert record(8, all(checks), "; ".join(notes)), checks


def test_criterion_09_replay_across_workers(tmp_path):
    cfg = DesignConfig(n_rep=48, mcmc_iters=200, ia_grid=(0, 12, 20, 40), block_size=8)
    run_study(cfg, (0, 35), (0.0, 1.0), ("frequentist", "bayesian"), tmp_path, 1,
              hss_variants=("20",), baseline=True)
    verdicts = {w: replay(tmp_path, workers=w)["verdict"] for w in (1, 4, 16)}
    ok = set(verdicts.values()) == {"identical"}
    assert record(9, ok, f"replay verdicts {verdicts}"), verdicts


def test_criterion_10_property_suite(desk_study):
    rng = np.random.default_rng(2024)
    n = 100_000
    pf, pp = np.exp(rng.uniform(-25, 25, n)), np.exp(rng.uniform(-25, 25, n))
    n0 = rng.integers(0, 500, n)
    e = ehss(pf, pp, n0)
    clamp = bool(np.all((e >= 0) & (e <= n0)))

    ps, pm, pfin = rng.uniform(size=(3, n))
    pu, pl, p0 = 0.99, 0.25, 0.975
    codes = decide_paths(ps, pm, pfin, pu, pl, p0)
    exclusive = np.array_equal(np.bincount(codes, minlength=4).sum(), n)
    bump = rng.uniform(0, 0.05, n)
    up = decide_paths(np.minimum(ps + bump, 1), pm, pfin, pu, pl, p0)
    down = decide_paths(ps, np.maximum(pm - bump, 0), pfin, pu, pl, p0)
    monotone = bool(np.all(up[codes == 0] == 0) and np.all(down[codes == 1] == 1))
    scalar = all((interim_decide(ps[i], pm[i], pu, pl).outcome is Interim.STOP_EARLY_WINNER) == (codes[i] == 0)
                 for i in range(2000))

    decomp = all(abs(r["type1"] - r["type1_early"] - r["type1_final"]) < 2e-6
                 for r in desk_study["calibration"])

    agree = 0
    for _ in range(1000):
        G = int(rng.integers(200, 3000))
        delta = rng.normal(rng.normal(0, 2), rng.uniform(0.2, 3), G)
        draws = PosteriorDraws(theta=np.column_stack([np.zeros(G), delta]), omega=np.ones(G))
        agree += ci_equivalence_check(draws, float(rng.uniform(0.6, 0.999)))
    flags = {"ehss_clamp": clamp, "exclusive": exclusive, "monotone": monotone and scalar,
             "type1_decomposition": decomp, "bci_agreement": agree == 1000}
    assert record(10, all(flags.values()), f"{flags}"), flags

