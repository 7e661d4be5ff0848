import numpy as np
import pytest

from ia_timing.calibration import (CalibrationError, calibrate, calibrate_all, candidate_thresholds,
                                   score_grid, tolerance)
from ia_timing.sim import Paths


def _paths(ps_ia, pm_ia, ps_fin, n_prime=20):
    r = len(ps_ia)
    return Paths(n_prime, 40, np.zeros((r, 2)), np.asarray(ps_ia, float), np.asarray(pm_ia, float),
                 np.asarray(ps_fin, float), np.zeros((r, 2)))


@pytest.fixture(scope="module")
def tiny_calibration():
    from ia_timing.model import DesignConfig
    from ia_timing.sim import historical_from_config
    cfg = DesignConfig(n_rep=120, mcmc_iters=300, ia_grid=(0, 20, 40), block_size=40)
    return cfg, calibrate_all(cfg, historical_from_config(cfg))


def test_size_monotone_in_upper_threshold(tiny_calibration):
    _, res = tiny_calibration
    for r in res.values():
        rows = sorted(r.rows, key=lambda x: -x.p_U)
        t1 = [x.type1 for x in rows]
        pw = [x.power for x in rows]
        assert t1 == sorted(t1) and pw == sorted(pw)


def test_size_decomposition(tiny_calibration):
    _, res = tiny_calibration
    for r in res.values():
        for row in r.rows:
            assert row.type1 == pytest.approx(row.type1_early + row.type1_final)
            assert row.type1_se == pytest.approx(np.sqrt(row.type1 * (1 - row.type1) / 120))


def test_singleton_grid(tiny_calibration):
    cfg, _ = tiny_calibration
    from ia_timing.sim import historical_from_config
    res = calibrate(cfg, historical_from_config(cfg), 20, pu_grid=[0.99], n_rep=40, strict=False)
    assert len(res.rows) == 1 and res.selected.p_U == 0.99


def test_selection_rule_on_synthetic_paths():
    from ia_timing.model import DesignConfig
    cfg = DesignConfig(pu_grid=(0.999, 0.99, 0.98), alpha_target=0.05, power_target=0.5)
    # 100 null replications: interim probabilities step through the grid
    ps = np.r_[np.full(2, 0.9995), np.full(3, 0.995), np.full(10, 0.985), np.full(85, 0.5)]
    null = _paths(ps, np.full(100, 0.9), np.zeros(100))
    alt = _paths(np.full(100, 0.9999), np.full(100, 0.9), np.ones(100))
    res = score_grid(cfg, 20, null, alt)
    sizes = {r.p_U: r.type1 for r in res.rows}
    assert sizes == {0.999: 0.02, 0.99: 0.05, 0.98: 0.15}
    assert res.selected.p_U == 0.99 and res.ok


def test_no_admissible_design_raises():
    from ia_timing.model import DesignConfig
    cfg = DesignConfig(pu_grid=(0.999, 0.99), alpha_target=0.05)
    null = _paths(np.full(50, 0.5), np.full(50, 0.9), np.zeros(50))
    res = score_grid(cfg, 20, null, null)
    assert not res.ok and res.selected.p_U == 0.999
    assert tolerance(cfg, 0.0) == 0.004


def test_strict_calibration_failure(tiny_config, tiny_hist):
    cfg = tiny_config.replace(alpha_target=0.5)
    with pytest.raises(CalibrationError) as exc:
        calibrate(cfg, tiny_hist, 20, pu_grid=[0.998], n_rep=20)
    assert exc.value.results.n_prime == 20


def test_full_grid_candidates():
    from ia_timing.model import DesignConfig
    cfg = DesignConfig(full_grid_search=True, pu_grid=(0.99, 0.98), pl_grid=(0.1, 0.25),
                       p0_grid=(0.975, 0.985))
    cands = candidate_thresholds(cfg)
    assert all(c.p_L < c.p_0 <= c.p_U for c in cands)
    assert len(cands) == 6
