"""Command-line entry point.

Exit codes: 0 success, 1 config error, 2 runtime failure, 3 calibration failure.
Progress goes to stderr; stdout carries one JSON status line.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .calibration import calibrate_all
from .model import ConfigError, DesignConfig, desk_scale, dump_config, load_config, validate
from .parallel import WORKERS_ENV, default_workers
from .payoff import MODES, NetGainParams
from .sim import historical_from_config
from .study import StudyError, replay, run_study, write_calibration

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_CALIBRATION = 0, 1, 2, 3

log = logging.getLogger("ia_timing")


def _status(**kw):
    print(json.dumps(kw, sort_keys=True), flush=True)


def _progress(done, total):
    if done == total or done % max(1, total // 20) == 0:
        log.info("simulated %d/%d blocks", done, total)


def _floats(text):
    return [float(x) for x in text.split(",") if x.strip()]


def _load(args) -> DesignConfig:
    cfg = load_config(args.config)
    if args.desk:
        cfg = desk_scale(cfg)
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    if getattr(args, "n_rep", None):
        cfg = cfg.replace(n_rep=args.n_rep)
    return validate(cfg)


def cmd_calibrate(args) -> int:
    cfg = _load(args)
    hist = historical_from_config(cfg)
    res = calibrate_all(cfg, hist, workers=args.workers, progress=_progress)
    out = Path(args.out)
    if out.suffix != ".csv":
        out.mkdir(parents=True, exist_ok=True)
        out = out / "calibration.csv"
    write_calibration(res, out)
    bad = [g for g, r in sorted(res.items()) if not r.ok]
    selected = {str(g): r.selected.p_U for g, r in sorted(res.items())}
    if bad:
        _status(status="calibration_failure", output=str(out), inadmissible_n_prime=bad,
                selected_p_U=selected)
        return EXIT_CALIBRATION
    _status(status="ok", output=str(out), selected_p_U=selected)
    return EXIT_OK


def cmd_study(args) -> int:
    cfg = _load(args)
    ng = None
    if args.net_gain:
        vals = _floats(args.net_gain)
        if len(vals) != 5:
            raise ConfigError(["--net-gain: expected a1,a2,b1,b2,C"])
        try:
            ng = NetGainParams(*vals)
        except ValueError as exc:
            raise ConfigError([f"--net-gain: {exc}"]) from exc
    modes = tuple(dict.fromkeys(args.mode))
    rep = run_study(cfg, _floats(args.priors), _floats(args.weights), modes, args.out,
                    args.workers, args.hss or (), ng, not args.no_baseline, progress=_progress)
    optimal = {m: [[r["delta"], r["w"], r["n_opt"]] for r in rows] for m, rows in rep.optimal.items()}
    if not rep.calibration_ok and not args.allow_inadmissible:
        _status(status="calibration_failure", output=str(args.out),
                inadmissible_n_prime=rep.metadata["inadmissible_n_prime"], optimal=optimal)
        return EXIT_CALIBRATION
    _status(status="ok", output=str(args.out), optimal=optimal)
    return EXIT_OK


def cmd_replay(args) -> int:
    res = replay(args.metadata, workers=args.workers, seed=args.seed, force=args.force)
    _status(status="ok", **res)
    return EXIT_OK if res["verdict"] == "identical" else EXIT_RUNTIME


def cmd_init_config(args) -> int:
    cfg = desk_scale(DesignConfig()) if args.desk else DesignConfig()
    dump_config(cfg, args.path)
    _status(status="ok", output=str(args.path))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ia-timing", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("config", help="YAML design file")
        sp.add_argument("--out", required=True, help="output directory (or .csv for calibrate)")
        sp.add_argument("--seed", type=int, help="override the master seed")
        sp.add_argument("--workers", type=int, default=None,
                        help=f"worker processes (default ${WORKERS_ENV} or 1)")
        sp.add_argument("--desk", action="store_true",
                        help="desk scale: 1000 replications, 2000-iteration chains")
        sp.add_argument("--n-rep", type=int, help="override the replication count")

    c = sub.add_parser("calibrate", help="calibrate p_U at every interim time")
    common(c)
    c.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("study", help="full pipeline: calibration, payoff, tables")
    common(s)
    s.add_argument("--priors", default="0,15,25,35", help="design-prior mean effects")
    s.add_argument("--weights", default="0,0.5,0.75,1", help="payoff weights w")
    s.add_argument("--mode", action="append", choices=MODES, required=True,
                   help="payoff mode (repeatable)")
    s.add_argument("--hss", action="append", help="extra historical sizes, e.g. 20, 100, 10/40")
    s.add_argument("--net-gain", help="a1,a2,b1,b2,C for net_gain mode")
    s.add_argument("--no-baseline", action="store_true", help="skip the no-borrowing baseline")
    s.add_argument("--allow-inadmissible", action="store_true",
                   help="exit 0 even if some interim time has no admissible design")
    s.set_defaults(func=cmd_study)

    r = sub.add_parser("replay", help="re-run a study from its metadata and compare tables")
    r.add_argument("metadata", help="metadata.json or the study directory")
    r.add_argument("--workers", type=int, default=None)
    r.add_argument("--seed", type=int)
    r.add_argument("--force", action="store_true", help="replay despite a version mismatch")
    r.set_defaults(func=cmd_replay)

    i = sub.add_parser("init-config", help="write the default design file")
    i.add_argument("path")
    i.add_argument("--desk", action="store_true")
    i.set_defaults(func=cmd_init_config)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(message)s")
    if getattr(args, "workers", None) is None and hasattr(args, "workers"):
        args.workers = default_workers()
    try:
        return args.func(args)
    except ConfigError as exc:
        _status(status="config_error", errors=exc.violations)
        return EXIT_CONFIG
    except StudyError as exc:
        _status(status="runtime_failure", stage=exc.stage, error=str(exc))
        return EXIT_RUNTIME
    except Exception as exc:  # noqa: BLE001
        log.exception("run failed")
        _status(status="runtime_failure", error=f"{type(exc).__name__}: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
