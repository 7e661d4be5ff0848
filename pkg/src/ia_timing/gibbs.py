"""Gibbs sampler for the commensurate-prior normal model.

Model (k = 0 placebo, 1 treatment)::

    Y_kj  ~ N(theta_k, 1/omega)          Y0_kj ~ N(theta0_k, 1/omega0)
    theta_k | theta0_k ~ N(theta0_k, 1/tau_k)
    theta0_k ~ N(0, sigma0^2)
    tau_k ~ Gamma(tau_shape, tau_rate)    omega, omega0 ~ Gamma(omega_shape, omega_rate)

Every full conditional is conjugate, so each sweep is a handful of exact
normal/gamma draws. The sampler runs ``m`` independent chains at once (one per
simulated trial) so batches of replications cost a few numpy calls per sweep.
Gamma draws use the shape/rate convention.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .model import DesignConfig, PosteriorDraws, TrialData

FULL = "full_commensurate"
PED_ONLY = "pediatric_only"

# Floor for gamma draws; very small shapes (e.g. 0.01) can underflow to 0.
_TINY = 1e-300


class SamplerError(RuntimeError):
    pass


class DegenerateModelError(SamplerError):
    pass


class DataError(SamplerError, ValueError):
    pass


class DegenerateChainError(SamplerError):
    pass


@dataclass(frozen=True)
class ModelSpec:
    variant: str = FULL
    sigma0: float = 100.0
    tau_shape: float = 0.02
    tau_rate: float = 1.0
    omega_shape: float = 0.01
    omega_rate: float = 1.0
    # Test hook: hold precisions fixed, e.g. {"tau": (t1, t2), "omega": w, "omega0": w0}.
    fixed: Optional[dict] = None

    def __post_init__(self):
        if self.variant not in (FULL, PED_ONLY):
            raise ValueError(f"unknown model variant {self.variant!r}")

    @classmethod
    def from_config(cls, config: DesignConfig, variant: str = FULL, fixed=None) -> "ModelSpec":
        return cls(variant, config.sigma0, config.tau_shape, config.tau_rate,
                   config.omega_shape, config.omega_rate, fixed)


@dataclass(frozen=True)
class ChainConfig:
    iters: int = 5000
    burn_frac: float = 0.2
    stream_seed: int = 0

    def __post_init__(self):
        if self.iters < 100:
            raise ValueError("iters must be >= 100")
        if not 0.0 < self.burn_frac < 1.0:
            raise ValueError("burn_frac must lie in (0, 1)")

    @property
    def burn_in(self) -> int:
        return int(np.floor(self.iters * self.burn_frac))

    @property
    def kept(self) -> int:
        return self.iters - self.burn_in


@dataclass
class SuffStats:
    """Per-arm sufficient statistics for ``m`` chains.

    Pediatric sums have shape (2, m); counts are shared by all chains.
    Adult statistics are shared scalars per arm.
    """
    n: np.ndarray                 # (2,) pediatric counts
    s: np.ndarray                 # (2, m) pediatric sums
    ss: np.ndarray                # (2, m) centred sums of squares
    n0: np.ndarray = field(default_factory=lambda: np.zeros(2, dtype=int))
    s0: np.ndarray = field(default_factory=lambda: np.zeros(2))
    ss0: np.ndarray = field(default_factory=lambda: np.zeros(2))

    @property
    def m(self) -> int:
        return self.s.shape[1]

    @classmethod
    def from_arrays(cls, ped, adult=None) -> "SuffStats":
        """``ped`` is a pair of (m, n_k) arrays; ``adult`` a pair of 1-d arrays."""
        ped = [np.asarray(p, dtype=float) for p in ped]
        if ped[0].ndim == 1:
            ped = [p[None, :] for p in ped]
        n = np.array([p.shape[1] for p in ped])
        s = np.stack([p.sum(axis=1) for p in ped])
        ss = np.stack([((p - p.mean(axis=1, keepdims=True)) ** 2).sum(axis=1) if p.shape[1]
                       else np.zeros(p.shape[0]) for p in ped])
        st = cls(n=n, s=s, ss=ss)
        if adult is not None:
            adult = [np.asarray(a, dtype=float) for a in adult]
            st.n0 = np.array([a.size for a in adult])
            st.s0 = np.array([a.sum() for a in adult])
            st.ss0 = np.array([((a - a.mean()) ** 2).sum() if a.size else 0.0 for a in adult])
        return st


@dataclass
class ChainSummary:
    """Posterior summaries of theta from ``m`` chains, each of G kept draws."""
    G: int
    mean: np.ndarray              # (2, m)
    var: np.ndarray               # (2, m), divisor G - 1
    p_sup: np.ndarray             # (m,) fraction of draws with theta_2 > theta_1
    p_above: np.ndarray           # (m,) fraction with theta_2 > threshold
    draws: Optional[dict] = None

    @property
    def precision(self) -> np.ndarray:
        return 1.0 / self.var


def _check_data(data: TrialData):
    for v in (*data.y_ped, *data.y_adult):
        if not np.all(np.isfinite(v)):
            raise DataError("observations must be finite")


def sample_chains(spec: ModelSpec, st: SuffStats, iters: int, burn: int,
                  rng: np.random.Generator, threshold: float = 0.0,
                  record: bool = False) -> ChainSummary:
    """Run ``st.m`` independent Gibbs chains and summarise the kept draws."""
    if not 0 <= burn < iters:
        raise ValueError("burn-in must leave at least one draw")
    full = spec.variant == FULL
    m = st.m
    n = st.n.astype(float)[:, None]
    n0 = st.n0.astype(float)[:, None]
    if full and n.sum() == 0 and n0.sum() == 0:
        raise DegenerateModelError("full model needs pediatric or adult data")
    s, ss = st.s, st.ss
    s0 = np.broadcast_to(st.s0[:, None], (2, m))
    ss0 = st.ss0[:, None]
    ybar = np.divide(s, n, out=np.zeros_like(s), where=n > 0)
    ybar0 = np.divide(s0, n0, out=np.zeros((2, m)), where=n0 > 0)
    prior_prec = 1.0 / spec.sigma0 ** 2
    fixed = spec.fixed or {}

    theta = ybar.copy()
    theta0 = ybar0.copy()
    tau = np.full((2, m), max(spec.tau_shape / spec.tau_rate, 1e-6))
    omega = np.full(m, max(spec.omega_shape / spec.omega_rate, 1e-6))
    omega0 = np.full(m, max(spec.omega_shape / spec.omega_rate, 1e-6))
    if "tau" in fixed:
        tau = np.broadcast_to(np.asarray(fixed["tau"], dtype=float)[:, None], (2, m)).copy()
    if "omega" in fixed:
        omega = np.full(m, float(fixed["omega"]))
    if "omega0" in fixed:
        omega0 = np.full(m, float(fixed["omega0"]))

    a_tau = spec.tau_shape + 0.5
    a_om = spec.omega_shape + 0.5 * n.sum()
    a_om0 = spec.omega_shape + 0.5 * n0.sum()

    G = iters - burn
    shift = None
    acc = np.zeros((2, m))
    acc2 = np.zeros((2, m))
    n_sup = np.zeros(m, dtype=np.int64)
    n_above = np.zeros(m, dtype=np.int64)
    rec = {} if record else None
    if record:
        rec["theta"] = np.empty((G, 2, m))
        rec["omega"] = np.empty((G, m))
        if full:
            rec["theta0"] = np.empty((G, 2, m))
            rec["tau"] = np.empty((G, 2, m))
            rec["omega0"] = np.empty((G, m))

    for it in range(iters):
        if full:
            prec = tau + n * omega
            mu = (tau * theta0 + omega * s) / prec
            theta = mu + rng.standard_normal((2, m)) / np.sqrt(prec)
            prec0 = prior_prec + n0 * omega0 + tau
            mu0 = (omega0 * s0 + tau * theta) / prec0
            theta0 = mu0 + rng.standard_normal((2, m)) / np.sqrt(prec0)
            if "tau" not in fixed:
                rate = spec.tau_rate + 0.5 * (theta - theta0) ** 2
                tau = np.maximum(rng.standard_gamma(a_tau, (2, m)) / rate, _TINY)
        else:
            prec = prior_prec + n * omega
            theta = omega * s / prec + rng.standard_normal((2, m)) / np.sqrt(prec)
        if "omega" not in fixed:
            resid = (ss + n * (ybar - theta) ** 2).sum(axis=0)
            omega = np.maximum(rng.standard_gamma(a_om, m) / (spec.omega_rate + 0.5 * resid), _TINY)
        if full and "omega0" not in fixed:
            resid0 = (ss0 + n0 * (ybar0 - theta0) ** 2).sum(axis=0)
            omega0 = np.maximum(rng.standard_gamma(a_om0, m) / (spec.omega_rate + 0.5 * resid0), _TINY)

        if it >= burn:
            if shift is None:
                shift = theta.copy()
            d = theta - shift
            acc += d
            acc2 += d * d
            n_sup += theta[1] > theta[0]
            n_above += theta[1] > threshold
            if record:
                g = it - burn
                rec["theta"][g] = theta
                rec["omega"][g] = omega
                if full:
                    rec["theta0"][g] = theta0
                    rec["tau"][g] = tau
                    rec["omega0"][g] = omega0

    mean_d = acc / G
    var = (acc2 - G * mean_d ** 2) / (G - 1) if G > 1 else np.full((2, m), np.nan)
    return ChainSummary(G=G, mean=shift + mean_d, var=np.maximum(var, 0.0),
                        p_sup=n_sup / G, p_above=n_above / G, draws=rec)


def gibbs_run(spec: ModelSpec, data: TrialData, chain: ChainConfig,
              dump_path=None) -> PosteriorDraws:
    """Fit one dataset and return its kept posterior draws."""
    _check_data(data)
    adult = data.y_adult if spec.variant == FULL else None
    st = SuffStats.from_arrays(data.y_ped, adult)
    rng = np.random.default_rng(chain.stream_seed)
    summ = sample_chains(spec, st, chain.iters, chain.burn_in, rng, record=True)
    r = summ.draws
    draws = PosteriorDraws(
        theta=r["theta"][:, :, 0],
        omega=r["omega"][:, 0],
        theta0=r["theta0"][:, :, 0] if "theta0" in r else None,
        tau=r["tau"][:, :, 0] if "tau" in r else None,
        omega0=r["omega0"][:, 0] if "omega0" in r else None,
    )
    if dump_path is not None:
        dump_draws(draws, dump_path)
    return draws


def dump_draws(draws: PosteriorDraws, path) -> None:
    """Write raw draws as tab-delimited text, one row per kept iteration."""
    cols, names = [draws.theta[:, 0], draws.theta[:, 1]], ["theta1", "theta2"]
    if draws.theta0 is not None:
        cols += [draws.theta0[:, 0], draws.theta0[:, 1], draws.tau[:, 0], draws.tau[:, 1]]
        names += ["theta01", "theta02", "tau1", "tau2"]
    cols.append(draws.omega)
    names.append("omega")
    if draws.omega0 is not None:
        cols.append(draws.omega0)
        names.append("omega0")
    np.savetxt(Path(path), np.column_stack(cols), delimiter="\t",
               header="\t".join(names), comments="", fmt="%.10g")


def prob_superiority(draws: PosteriorDraws) -> float:
    if draws.G == 0:
        raise ValueError("no draws")
    return float(np.mean(draws.theta[:, 1] > draws.theta[:, 0]))


def prob_above(draws: PosteriorDraws, threshold: float) -> float:
    if draws.G == 0:
        raise ValueError("no draws")
    return float(np.mean(draws.theta[:, 1] > threshold))


def posterior_precision(draws: PosteriorDraws, arm: int) -> float:
    """Reciprocal of the sample variance of theta for ``arm`` (0 placebo, 1 treatment)."""
    if draws.G < 2:
        raise ValueError("need at least two draws")
    v = float(np.var(draws.theta[:, arm], ddof=1))
    if v <= 0.0:
        raise DegenerateChainError(f"constant chain for arm {arm}")
    return 1.0 / v
