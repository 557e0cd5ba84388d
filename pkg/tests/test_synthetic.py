import numpy as np
import pytest
from numpy.testing import assert_allclose

from surrocal.data import OCEAN, SURFACE, UPPER_AIR
from surrocal.emulator import pooled_omega2
from surrocal.errors import TooSmallDesignError
from surrocal.synthetic import (DEFAULT_BOUNDS, WorldConfig, default_grids, dense_mle_oracle,
                                generate_world, refine_oracle, sample_design, theta_grid,
                                toy_signal, toy_simulator)


def test_ocean_value_at_reference_theta():
    sig = toy_signal(np.array([3.0, 1.0, -0.5]), default_grids())
    assert_allclose(sig[OCEAN].item(), 0.065, rtol=1e-14)


def test_shapes_and_replicates():
    ens = toy_simulator(np.array([[3.0, 1.0, -0.5], [2.0, 0.5, 0.0]]), default_grids())
    assert ens[SURFACE].grid.dims == (4, 5)
    assert ens[UPPER_AIR].grid.dims == (26, 8)
    assert ens[OCEAN].grid.dims == (1, 1)
    assert all(e.R == 4 and e.D == 2 for e in ens.values())


def test_noise_free_simulator_is_signal():
    th = np.array([[4.0, 2.0, -1.0]])
    ens = toy_simulator(th, default_grids(), R=2, noise_scale=0.0)
    sig = toy_signal(th, default_grids())
    for name in ens:
        assert_allclose(ens[name].members[0], sig[name])


def test_world_determinism():
    a = generate_world(WorldConfig(n_design=30, seed=5))
    b = generate_world(WorldConfig(n_design=30, seed=5))
    assert np.array_equal(a.design, b.design)
    for name in a.ensembles:
        assert np.array_equal(a.ensembles[name].members, b.ensembles[name].members)
        assert np.array_equal(a.observations.fields[name], b.observations.fields[name])


def test_design_contract():
    d = sample_design(n_total=306, dense_region=((1.5, 5), (0, 3), (-1, 0)), dense_frac=0.4, seed=2)
    b = np.array(DEFAULT_BOUNDS)
    assert d.shape == (306, 3)
    assert np.all(d >= b[:, 0]) and np.all(d <= b[:, 1])
    inside = np.all((d >= [1.5, 0, -1]) & (d <= [5, 3, 0]), axis=1)
    assert inside.sum() >= 0.4 * 306
    with pytest.raises(TooSmallDesignError):
        sample_design(n_total=7)


def test_mean_warming_monotone():
    grids = default_grids()
    base = np.array([3.0, 1.0, -0.5])
    warm = lambda th: toy_signal(th, grids)[SURFACE].mean()
    assert warm(base + [0.1, 0, 0]) > warm(base)
    # stronger (more negative) aerosol forcing cools
    assert warm(base - [0, 0, 0.1]) < warm(base)


def test_replicate_mean_variance_shrinks_as_one_over_R():
    th = np.array([[3.0, 1.0, -0.5]] * 20)
    vals = []
    for seed in range(20):
        e = toy_simulator(th, {SURFACE: default_grids()[SURFACE]}, R=4, noise_scale=0.05, seed=seed)
        vals.append(pooled_omega2(e[SURFACE], mean_scaling=True))
    assert_allclose(np.mean(vals), 0.05 ** 2 / 4, rtol=0.1)


def test_oracle_recovers_noiseless_grid_point():
    from surrocal.data import ObservationSet
    grids = default_grids()
    truth = np.array([3.0, 1.0, -0.5])
    sig = toy_signal(truth, grids)
    obs = ObservationSet({n: sig[n].reshape(grids[n].dims) for n in grids}, dict(grids))
    W = WorldConfig().obs_covariances()
    axes = [np.round(np.arange(2.5, 3.55, 0.1), 10), np.round(np.arange(0.5, 1.55, 0.1), 10),
            np.round(np.arange(-1.0, 0.05, 0.1), 10)]
    theta_star, ll = dense_mle_oracle(obs, W, axes)
    assert_allclose(theta_star, truth, atol=1e-12)
    shifted = {n: W[n] for n in W}
    theta2, ll2 = dense_mle_oracle(obs, shifted, axes)
    assert np.array_equal(theta2, theta_star)
    assert np.argmax(ll + 123.0) == np.argmax(ll)


def test_refine_oracle_improves_on_grid():
    w = generate_world(WorldConfig(n_design=20, seed=3))
    axes = theta_grid()
    ts, ll = dense_mle_oracle(w.observations, w.obs_cov, axes)
    x, best = refine_oracle(w.observations, w.obs_cov, ts)
    assert best >= ll.max() - 1e-9


def test_config_round_trip():
    cfg = WorldConfig(n_design=50, upper_dims=(6, 4), seed=9)
    assert WorldConfig.from_dict(cfg.to_dict()) == cfg
