"""Domain types shared across the engine.

Everything here is immutable after construction and carries no computation
beyond validation and (de)serialization of the design configuration.
"""
from __future__ import annotations

import dataclasses
import enum
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional, Sequence

import numpy as np
import yaml

DEFAULT_IA_GRID = (0, 4, 8, 12, 16, 20, 24, 28, 32, 36, 40)
DEFAULT_PU_GRID = tuple(round(0.998 - 0.002 * i, 3) for i in range(12))  # 0.998 .. 0.976


class ConfigError(ValueError):
    """Raised when a configuration violates one or more invariants."""

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


@dataclass(frozen=True)
class DesignConfig:
    # pediatric per-arm maxima (placebo, treatment) and historical per-arm sizes
    n1: int = 20
    n2: int = 20
    n01: int = 25
    n02: int = 25
    ia_grid: tuple = DEFAULT_IA_GRID
    theta_min: float = 15.0
    p_U: float = 0.998
    p_L: float = 0.25
    p_0: float = 0.975
    sigma0: float = 100.0
    tau_shape: float = 0.02
    tau_rate: float = 1.0
    omega_shape: float = 0.01
    omega_rate: float = 1.0
    gen_sd: float = 22.0
    n_rep: int = 5000
    mcmc_iters: int = 5000
    burn_frac: float = 0.2
    weight_w: float = 0.5
    alpha_target: float = 0.05
    seed: int = 20200417
    # historical study generation
    hist_delta0: float = 25.0
    hist_sd: float = 22.0
    hist_seed: int = 1
    hist_exact_moments: bool = True
    # calibration
    alt_effect: float = 20.0
    power_target: float = 0.80
    pu_grid: tuple = DEFAULT_PU_GRID
    full_grid_search: bool = False
    pl_grid: tuple = (0.25,)
    p0_grid: tuple = (0.975,)
    # design priors: known per-arm standard deviations
    design_sd: float = 5.0
    # replications are simulated in fixed-size blocks; part of the RNG layout
    block_size: int = 250

    @property
    def n(self) -> int:
        return self.n1 + self.n2

    @property
    def burn_in(self) -> int:
        return int(math.floor(self.mcmc_iters * self.burn_frac))

    def replace(self, **changes) -> "DesignConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> "DesignConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - names)
        if unknown:
            raise ConfigError([f"{k}: unknown field" for k in unknown])
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in raw.items()}
        return cls(**kw)


DESK_SCALE = {"n_rep": 1000, "mcmc_iters": 2000, "burn_frac": 0.2}


def desk_scale(config: DesignConfig) -> DesignConfig:
    """Reduced replication and chain lengths for workstation runs."""
    return config.replace(**DESK_SCALE)


def _is_int(v) -> bool:
    return isinstance(v, (int, np.integer)) and not isinstance(v, bool)


def _open01(v) -> bool:
    return isinstance(v, (int, float)) and 0.0 < v < 1.0


def validate(config: DesignConfig) -> DesignConfig:
    """Return ``config`` unchanged if every invariant holds.

    Raises ConfigError listing *all* violations otherwise.
    """
    c = config
    errs = []
    for name in ("n1", "n2", "n01", "n02", "n_rep", "mcmc_iters", "seed", "hist_seed", "block_size"):
        if not _is_int(getattr(c, name)):
            errs.append(f"{name}: must be an integer")
    if errs:
        raise ConfigError(errs)

    if c.n1 <= 0 or c.n1 != c.n2:
        errs.append(f"n1, n2: must be equal and positive (got {c.n1}, {c.n2})")
    if c.n01 < 0 or c.n02 < 0:
        errs.append("n01, n02: historical sizes must be >= 0")
    if not c.ia_grid:
        errs.append("ia_grid: must not be empty")
    for v in c.ia_grid:
        if not _is_int(v):
            errs.append(f"ia_grid: n' = {v!r} is not an integer")
        elif v < 0:
            errs.append(f"ia_grid: n' = {v} is negative")
        elif v > c.n:
            errs.append(f"ia_grid: n' = {v} exceeds n = {c.n}")
        elif v % 2:
            errs.append(f"ia_grid: n' = {v} is odd (arms are split equally)")
    if len(set(c.ia_grid)) != len(c.ia_grid):
        errs.append("ia_grid: duplicate entries")

    probs = {"p_U": c.p_U, "p_L": c.p_L, "p_0": c.p_0, "alpha_target": c.alpha_target,
             "burn_frac": c.burn_frac, "power_target": c.power_target}
    for name, v in probs.items():
        if not _open01(v):
            errs.append(f"{name}: must lie in (0, 1) (got {v!r})")
    if all(_open01(v) for v in (c.p_U, c.p_L, c.p_0)) and not (c.p_L < c.p_0 <= c.p_U):
        errs.append(f"p_L, p_0, p_U: threshold ordering requires p_L < p_0 <= p_U "
                    f"(got {c.p_L}, {c.p_0}, {c.p_U})")
    for name in ("sigma0", "tau_shape", "tau_rate", "omega_shape", "omega_rate",
                 "gen_sd", "hist_sd", "design_sd"):
        v = getattr(c, name)
        if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
            errs.append(f"{name}: must be positive and finite (got {v!r})")
    if not (isinstance(c.weight_w, (int, float)) and 0.0 <= c.weight_w <= 1.0):
        errs.append(f"weight_w: must lie in [0, 1] (got {c.weight_w!r})")
    if c.n_rep < 1:
        errs.append("n_rep: must be >= 1")
    if c.mcmc_iters < 100:
        errs.append("mcmc_iters: must be >= 100")
    if c.block_size < 1:
        errs.append("block_size: must be >= 1")
    if not c.pu_grid:
        errs.append("pu_grid: must not be empty")
    for v in c.pu_grid:
        if not (_open01(v) and v >= c.p_0):
            errs.append(f"pu_grid: {v!r} must lie in [p_0, 1)")
    for name in ("pl_grid", "p0_grid"):
        for v in getattr(c, name):
            if not _open01(v):
                errs.append(f"{name}: {v!r} must lie in (0, 1)")
    if errs:
        raise ConfigError(errs)
    return config


def load_config(path) -> DesignConfig:
    """Read a YAML design file; missing fields take the defaults."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError([f"{path}: cannot read config ({exc.strerror or exc})"]) from exc
    try:
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError([f"{path}: invalid YAML ({exc})"]) from exc
    if not isinstance(raw, dict):
        raise ConfigError([f"{path}: top level must be a mapping"])
    try:
        return validate(DesignConfig.from_dict(raw))
    except TypeError as exc:
        raise ConfigError([f"{path}: {exc}"]) from exc


def dump_config(config: DesignConfig, path=None) -> str:
    text = yaml.safe_dump(config.to_dict(), sort_keys=False)
    if path is not None:
        Path(path).write_text(text)
    return text


@dataclass(frozen=True)
class DesignPrior:
    """Independent normal priors on the true pediatric arm means."""
    theta1_des: float
    theta2_des: float
    sigma1_des: float = 5.0
    sigma2_des: float = 5.0

    def __post_init__(self):
        if not (self.sigma1_des > 0 and self.sigma2_des > 0):
            raise ValueError("design prior standard deviations must be positive")

    @classmethod
    def for_effect(cls, delta: float, sd: float = 5.0) -> "DesignPrior":
        return cls(0.0, float(delta), sd, sd)


@dataclass(frozen=True)
class TruthScenario:
    """Either fixed true means or a design prior to sample them from."""
    fixed: Optional[tuple] = None
    prior: Optional[DesignPrior] = None

    def __post_init__(self):
        if (self.fixed is None) == (self.prior is None):
            raise ValueError("exactly one of fixed / prior must be given")
        if self.fixed is not None and len(self.fixed) != 2:
            raise ValueError("fixed truth needs (theta1, theta2)")

    @classmethod
    def point(cls, theta1: float, theta2: float) -> "TruthScenario":
        return cls(fixed=(float(theta1), float(theta2)))

    @classmethod
    def from_prior(cls, prior: DesignPrior) -> "TruthScenario":
        return cls(prior=prior)

    @property
    def kind(self) -> str:
        return "fixed" if self.fixed is not None else "design_prior"


def _as_vec(v) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(-1)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class TrialData:
    """Observed percent reductions; index 0 is placebo, 1 is treatment."""
    y_ped: tuple = (np.empty(0), np.empty(0))
    y_adult: tuple = (np.empty(0), np.empty(0))

    def __post_init__(self):
        if len(self.y_ped) != 2 or len(self.y_adult) != 2:
            raise ValueError("TrialData needs exactly two arms")
        object.__setattr__(self, "y_ped", tuple(_as_vec(v) for v in self.y_ped))
        object.__setattr__(self, "y_adult", tuple(_as_vec(v) for v in self.y_adult))

    @property
    def n_ped(self) -> tuple:
        return tuple(len(v) for v in self.y_ped)

    @property
    def n_adult(self) -> tuple:
        return tuple(len(v) for v in self.y_adult)


@dataclass(frozen=True)
class PosteriorDraws:
    """Retained post-burn-in draws. Arm axis is last (0 placebo, 1 treatment).

    The pediatric-only model leaves ``theta0``, ``tau`` and ``omega0`` as None.
    """
    theta: np.ndarray
    omega: np.ndarray
    theta0: Optional[np.ndarray] = None
    tau: Optional[np.ndarray] = None
    omega0: Optional[np.ndarray] = None

    @property
    def G(self) -> int:
        return self.theta.shape[0]

    @property
    def delta(self) -> np.ndarray:
        return self.theta[:, 1] - self.theta[:, 0]


class Decision(str, enum.Enum):
    EARLY_WINNER = "early_winner"
    EARLY_FUTILITY = "early_futility"
    FINAL_WINNER = "final_winner"
    NO_WINNER = "no_winner"

    @property
    def is_interim(self) -> bool:
        return self in (Decision.EARLY_WINNER, Decision.EARLY_FUTILITY)


@dataclass(frozen=True)
class ReplicationOutcome:
    decision: Decision
    stage: str
    sample_used: int
    ehss: tuple
    ehss_flag: bool
    prob_sup_interim: float = float("nan")
    prob_min_interim: float = float("nan")
    prob_sup_final: float = float("nan")

    def __post_init__(self):
        interim = self.decision.is_interim
        if interim != (self.stage == "interim"):
            raise ValueError(f"decision {self.decision.value} inconsistent with stage {self.stage}")


@dataclass(frozen=True)
class OperatingCharacteristics:
    """Aggregated rates over replications, each with its Monte Carlo SE."""
    n_prime: int
    n_rep: int
    type1: float = float("nan")
    type1_early: float = float("nan")
    type1_final: float = float("nan")
    type1_se: float = float("nan")
    power: float = float("nan")
    power_se: float = float("nan")
    p_hat_1: float = float("nan")
    p_hat_1_se: float = float("nan")
    p_hat_2: float = float("nan")
    p_hat_2_se: float = float("nan")
    p_hat_stop: float = float("nan")
    p_hat_stop_se: float = float("nan")
    payoff: float = float("nan")
    expected_ss: float = float("nan")
    expected_ss_se: float = float("nan")
    extra: dict = field(default_factory=dict)


def binomial_se(rate: float, n: int) -> float:
    return math.sqrt(max(rate * (1.0 - rate), 0.0) / n) if n > 0 else float("nan")


def as_plain(obj: Any) -> Any:
    """Convert dataclasses / numpy scalars to JSON-friendly Python values."""
    if dataclasses.is_dataclass(obj):
        return {f.name: as_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, enum.Enum):
        return obj.value
    if isinstance(obj, dict):
        return {k: as_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [as_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj
