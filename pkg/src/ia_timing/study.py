"""End-to-end design study: calibration, design-prior runs, payoff selection, CSV tables."""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from . import __version__
from .calibration import ALT_TAG, NULL_TAG, CalibrationResult, alt_scenario, null_scenario, score_grid
from .model import DesignConfig, DesignPrior, TruthScenario, as_plain, validate
from .payoff import (BAYESIAN, FREQUENTIST, NET_GAIN, NetGainParams, payoff_curve, prior_tag,
                     rates_from_paths, select_optimum)
from .sim import BatchRequest, Thresholds, historical_from_config, make_historical, simulate_many

log = logging.getLogger(__name__)

METADATA = "metadata.json"
INCOMPLETE = "INCOMPLETE"

CALIBRATION_COLUMNS = ["n_prime", "p_U", "p_L", "p_0", "type1", "type1_early", "type1_final",
                       "type1_se", "power", "power_se", "admissible", "selected"]
OC_COLUMNS = ["ia_time", "ia_fraction", "P1", "P1_se", "P2", "P2_se", "IA_stop", "IA_stop_se",
              "type1", "type1_early", "type1_final", "type1_se", "power", "power_se",
              "p_U", "p_L", "p_0", "ehss_placebo", "ehss_placebo_se", "ehss_treated",
              "ehss_treated_se", "ehss_flag_rate", "expected_ss", "expected_ss_se", "admissible"]
EHSS_COLUMNS = ["n01", "n02", "delta", "ia_time", "ia_fraction", "ehss_placebo", "ehss_placebo_se",
                "ehss_treated", "ehss_treated_se", "ehss_flag_rate"]
ESS_COLUMNS = ["delta", "ia_time", "ia_fraction", "IA_stop", "IA_stop_se", "expected_ss",
               "expected_ss_se"]
PAYOFF_COLUMNS = ["delta", "w", "ia_time", "ia_fraction", "payoff", "payoff_se", "expected_ss",
                  "expected_ss_se"]
OPTIMAL_COLUMNS = ["delta", "w", "n_opt", "ia_fraction", "payoff", "payoff_se", "expected_ss",
                   "saving_pct"]
BASELINE_COLUMNS = ["n_prime", "n01", "n02", "p_0", "type1", "type1_se", "power", "power_se"]


class StudyError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def _fmt(v):
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        return f"{v:.6f}"
    return v


def write_csv(path: Path, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in columns])


def sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


@dataclass
class StudyReport:
    out_dir: Optional[Path]
    calibration: dict
    oc: dict                      # delta -> list of OC rows
    ehss: list
    ess: list
    payoff: dict                  # mode -> list of curve rows
    optimal: dict                 # mode -> list of optimum rows
    baseline: dict
    metadata: dict = field(default_factory=dict)

    @property
    def calibration_ok(self) -> bool:
        return all(c.ok for c in self.calibration.values())


def parse_hss(spec: str) -> tuple:
    """'10/40' -> (10, 40); '20' -> (10, 10)."""
    if "/" in spec:
        a, b = spec.split("/")
        return int(a), int(b)
    total = int(spec)
    if total % 2:
        raise ValueError(f"historical total {total} cannot be split evenly")
    return total // 2, total // 2


def calibration_rows(calibration: dict) -> list:
    rows = []
    for npr in sorted(calibration):
        res: CalibrationResult = calibration[npr]
        for r in res.rows:
            d = as_plain(r)
            d["selected"] = r == res.selected
            rows.append(d)
    return rows


def run_study(config: DesignConfig, deltas=(0, 15, 25, 35), weights=(0.0, 0.5, 0.75, 1.0),
              modes=(FREQUENTIST,), out_dir=None, workers=None, hss_variants=(),
              net_gain: Optional[NetGainParams] = None, baseline: bool = True,
              progress=None) -> StudyReport:
    """Run the whole pipeline and (optionally) write every table to ``out_dir``."""
    t0 = time.time()
    validate(config)
    if NET_GAIN in modes and net_gain is None:
        raise StudyError("config", "net_gain mode needs a1, a2, b1, b2, C")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / INCOMPLETE).write_text("stage: simulate\n")
    grid = sorted(config.ia_grid)
    hist = historical_from_config(config)
    priors = {float(d): DesignPrior.for_effect(d, config.design_sd) for d in deltas}

    # one pool for every threshold-free simulation
    reqs, hists, keys = [], [], []
    for g in grid:
        reqs += [BatchRequest(null_scenario(), g, config.n_rep, config.seed, NULL_TAG),
                 BatchRequest(alt_scenario(config), g, config.n_rep, config.seed, ALT_TAG)]
        hists += [hist, hist]
        keys += [("null", g), ("alt", g)]
        for d, p in priors.items():
            reqs.append(BatchRequest(TruthScenario.from_prior(p), g, config.n_rep, config.seed, prior_tag(p)))
            hists.append(hist)
            keys.append(("prior", d, g))
    hss_list = [parse_hss(h) if isinstance(h, str) else tuple(h) for h in hss_variants]
    for n01, n02 in hss_list:
        h2 = make_historical(n01, n02, config.hist_delta0, config.hist_sd, config.hist_seed,
                             config.hist_exact_moments)
        for d, p in priors.items():
            for g in grid:
                reqs.append(BatchRequest(TruthScenario.from_prior(p), g, config.n_rep, config.seed,
                                         prior_tag(p), interim_only=True))
                hists.append(h2)
                keys.append(("hss", n01, n02, d, g))
    base_cfg = None
    if baseline:
        base_cfg = config.replace(n01=0, n02=0)
        h0 = make_historical(0, 0, config.hist_delta0, config.hist_sd, config.hist_seed)
        for scen, tag in ((null_scenario(), "baseline_null"), (alt_scenario(config), "baseline_alt")):
            reqs.append(BatchRequest(scen, config.n, config.n_rep, config.seed, tag))
            hists.append(h0)
            keys.append((tag,))
    try:
        paths = dict(zip(keys, simulate_many(config, hists, reqs, workers, progress)))
    except Exception as exc:
        _mark_failed(out, "simulate", exc)
        raise StudyError("simulate", str(exc)) from exc

    try:
        calibration = {g: score_grid(config, g, paths[("null", g)], paths[("alt", g)]) for g in grid}
    except Exception as exc:
        _mark_failed(out, "calibrate", exc)
        raise StudyError("calibrate", str(exc)) from exc
    for g, c in calibration.items():
        if not c.ok:
            log.warning("n'=%d: no admissible design; using closest size %.4f at p_U=%s",
                        g, c.selected.type1, c.selected.p_U)

    oc, ess_rows, payoff_rows, optimal_rows = {}, [], {m: [] for m in modes}, {m: [] for m in modes}
    rates = {}
    for d in priors:
        rates[d] = {g: rates_from_paths(paths[("prior", d, g)], calibration[g].thresholds) for g in grid}
        rows = []
        for g in grid:
            r, c = rates[d][g], calibration[g]
            sel = c.selected
            n0p = paths[("null", g)]
            nap = paths[("alt", g)]
            p1 = n0p.counts(sel.thresholds)["early_futility"] / len(n0p)
            p2 = nap.counts(sel.thresholds)["early_winner"] / len(nap)
            rows.append({
                "ia_time": g, "ia_fraction": g / config.n,
                "P1": p1, "P1_se": _bse(p1, len(n0p)), "P2": p2, "P2_se": _bse(p2, len(nap)),
                "IA_stop": r.p_stop, "IA_stop_se": r.p_stop_se,
                "type1": sel.type1, "type1_early": sel.type1_early, "type1_final": sel.type1_final,
                "type1_se": sel.type1_se, "power": sel.power, "power_se": sel.power_se,
                "p_U": sel.p_U, "p_L": sel.p_L, "p_0": sel.p_0,
                "ehss_placebo": r.ehss[0], "ehss_placebo_se": r.ehss_se[0],
                "ehss_treated": r.ehss[1], "ehss_treated_se": r.ehss_se[1],
                "ehss_flag_rate": r.ehss_flag_rate,
                "expected_ss": r.expected_ss, "expected_ss_se": r.expected_ss_se,
                "admissible": sel.admissible,
            })
            ess_rows.append({"delta": d, "ia_time": g, "ia_fraction": g / config.n,
                             "IA_stop": r.p_stop, "IA_stop_se": r.p_stop_se,
                             "expected_ss": r.expected_ss, "expected_ss_se": r.expected_ss_se})
        oc[d] = rows
        prior_paths = {g: paths[("prior", d, g)] for g in grid}
        for m in modes:
            for w in weights:
                curve = payoff_curve(m, w, rates[d], calibration, prior_paths, net_gain)
                for pt in curve:
                    payoff_rows[m].append({"delta": d, "w": float(w), "ia_time": pt.n_prime,
                                           "ia_fraction": pt.fraction, "payoff": pt.payoff,
                                           "payoff_se": pt.payoff_se, "expected_ss": pt.expected_ss,
                                           "expected_ss_se": pt.expected_ss_se})
                best = select_optimum(curve)
                optimal_rows[m].append({"delta": d, "w": float(w), "n_opt": best.n_prime,
                                        "ia_fraction": best.fraction, "payoff": best.payoff,
                                        "payoff_se": best.payoff_se, "expected_ss": best.expected_ss,
                                        "saving_pct": 100.0 * (1.0 - best.expected_ss / config.n)})

    ehss_rows = []
    for d in priors:
        for g in grid:
            r = rates[d][g]
            ehss_rows.append(_ehss_row(config.n01, config.n02, d, g, config.n, r))
    for n01, n02 in hss_list:
        for d in priors:
            for g in grid:
                r = rates_from_paths(paths[("hss", n01, n02, d, g)], Thresholds.from_config(config))
                ehss_rows.append(_ehss_row(n01, n02, d, g, config.n, r))

    base_row = {}
    if baseline:
        th = Thresholds(1.0, 0.0, config.p_0)
        bn, ba = paths[("baseline_null",)], paths[("baseline_alt",)]
        cn, ca = bn.counts(th), ba.counts(th)
        t1 = cn["final_winner"] / len(bn)
        pw = ca["final_winner"] / len(ba)
        base_row = {"n_prime": config.n, "n01": 0, "n02": 0, "p_0": config.p_0, "type1": t1,
                    "type1_se": _bse(t1, len(bn)), "power": pw, "power_se": _bse(pw, len(ba))}

    report = StudyReport(out, calibration, oc, ehss_rows, ess_rows, payoff_rows, optimal_rows, base_row)
    report.metadata = {
        "version": __version__,
        "config": config.to_dict(),
        "seed": config.seed,
        "deltas": [float(d) for d in deltas],
        "weights": [float(w) for w in weights],
        "modes": list(modes),
        "hss_variants": [list(h) for h in hss_list],
        "net_gain": as_plain(net_gain) if net_gain else None,
        "baseline": baseline,
        "calibration_ok": report.calibration_ok,
        "inadmissible_n_prime": [g for g in grid if not calibration[g].ok],
    }
    if out is not None:
        _write(report, out, time.time() - t0, workers)
    return report


def _bse(p, n):
    return math.sqrt(max(p * (1 - p), 0.0) / n)


def _ehss_row(n01, n02, d, g, n, r):
    return {"n01": n01, "n02": n02, "delta": d, "ia_time": g, "ia_fraction": g / n,
            "ehss_placebo": r.ehss[0], "ehss_placebo_se": r.ehss_se[0],
            "ehss_treated": r.ehss[1], "ehss_treated_se": r.ehss_se[1],
            "ehss_flag_rate": r.ehss_flag_rate}


def _mark_failed(out, stage, exc):
    if out is not None:
        (out / INCOMPLETE).write_text(f"stage: {stage}\nerror: {exc}\n")


def _write(report: StudyReport, out: Path, wall: float, workers) -> None:
    files = {}

    def emit(name, cols, rows):
        write_csv(out / name, cols, rows)
        files[name] = sha256(out / name)

    emit("calibration.csv", CALIBRATION_COLUMNS, calibration_rows(report.calibration))
    for d, rows in report.oc.items():
        emit(f"oc_delta{d:g}.csv", OC_COLUMNS, rows)
    emit("ehss.csv", EHSS_COLUMNS, report.ehss)
    emit("ess.csv", ESS_COLUMNS, report.ess)
    for m, rows in report.payoff.items():
        emit(f"payoff_{m}.csv", PAYOFF_COLUMNS, rows)
        emit(f"optimal_{m}.csv", OPTIMAL_COLUMNS, report.optimal[m])
    if report.baseline:
        emit("baseline.csv", BASELINE_COLUMNS, [report.baseline])
    meta = dict(report.metadata, files=files, wall_time_s=round(wall, 3), workers=workers)
    report.metadata = meta
    (out / METADATA).write_text(json.dumps(meta, indent=2, sort_keys=True))
    (out / INCOMPLETE).unlink(missing_ok=True)


def write_calibration(calibration: dict, path) -> None:
    write_csv(Path(path), CALIBRATION_COLUMNS, calibration_rows(calibration))


def replay(metadata_path, workers=None, seed=None, out_dir=None, force=False) -> dict:
    """Re-run a recorded study and byte-compare every table.

    Returns a dict with ``verdict`` ('identical' or 'diverged') and the names
    of files that differ. A version mismatch raises unless ``force``.
    """
    import tempfile

    meta_path = Path(metadata_path)
    if meta_path.is_dir():
        meta_path = meta_path / METADATA
    meta = json.loads(meta_path.read_text())
    if meta.get("version") != __version__ and not force:
        raise StudyError("replay", f"version mismatch: recorded {meta.get('version')}, "
                                   f"running {__version__}")
    cfg = DesignConfig.from_dict(meta["config"])
    if seed is not None:
        cfg = cfg.replace(seed=int(seed))
    ng = NetGainParams(**meta["net_gain"]) if meta.get("net_gain") else None
    with tempfile.TemporaryDirectory() as tmp:
        target = Path(out_dir) if out_dir is not None else Path(tmp)
        rep = run_study(cfg, meta["deltas"], meta["weights"], tuple(meta["modes"]), target, workers,
                        [tuple(h) for h in meta["hss_variants"]], ng, meta.get("baseline", True))
        new = rep.metadata["files"]
    old = meta["files"]
    diff = sorted(k for k in set(old) | set(new) if old.get(k) != new.get(k))
    return {"verdict": "identical" if not diff else "diverged", "differing_files": diff,
            "version": __version__, "recorded_version": meta.get("version")}
