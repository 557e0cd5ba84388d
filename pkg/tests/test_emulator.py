import math
import warnings

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.stats import multivariate_normal

from surrocal.data import Grid, OutputEnsemble
from surrocal.emulator import (EmulatorConfig, EmulatorFit, EmulatorParams, emulator_loglik,
                               fit_emulator, pooled_omega2, predict_surrogate)
from surrocal.errors import InsufficientReplicatesError
from surrocal.fixtures import table_params
from surrocal.kernels import KernelSpec, corr_matrix
from surrocal.tensor_linalg import dense_covariance


def _ens(members, design=None, grid=None):
    members = np.asarray(members, dtype=float)
    D = members.shape[1]
    design = np.arange(D * 3.0).reshape(D, 3) if design is None else design
    grid = grid or Grid(np.arange(members.shape[2]), [0.0])
    return OutputEnsemble("surface", members, design, grid)


def test_pooled_omega2_cases():
    assert_allclose(pooled_omega2(_ens([[[1.0]], [[3.0]]])), 2.0)
    assert pooled_omega2(_ens(np.ones((3, 2, 2)))) == 0.0
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, 1, 3))
    want = np.mean([np.var(x[:, 0, j], ddof=1) for j in range(3)])
    assert_allclose(pooled_omega2(_ens(x)), want, rtol=1e-14)
    assert_allclose(pooled_omega2(_ens(x), mean_scaling=True), want / 4, rtol=1e-14)
    with pytest.raises(InsufficientReplicatesError):
        pooled_omega2(_ens(x[:1]))


def _small_params(rng, D=6, nz=2, nt=4, omega2=0.3):
    grid = Grid(np.arange(nz) * 10.0, np.arange(nt) * 1.0)
    design = rng.uniform(0, 2, (D, 3))
    params = EmulatorParams("surface", 0.4, 1.3, omega2, KernelSpec.powexp([0.8, 1.1, 0.5], [1.2, 1.9, 1.0]),
                            KernelSpec.powexp([0.05], [1.5]), KernelSpec.powexp([0.7], [1.0]),
                            np.eye(nz * nt) * 0.5 + 0.5 / (nz * nt))
    return params, design, grid


def test_loglik_matches_dense_density():
    rng = np.random.default_rng(1)
    params, design, grid = _small_params(rng)
    Sig = dense_covariance(corr_matrix(design, params.kernel_theta),
                           np.kron(corr_matrix(grid.z, params.kernel_z),
                                   corr_matrix(grid.t, params.kernel_t)),
                           params.gamma, params.sigma2, params.omega2)
    f = rng.multivariate_normal(np.full(48, params.mu), Sig)
    ens = OutputEnsemble("surface", np.stack([f.reshape(6, 8)] * 2), design, grid)
    want = multivariate_normal(np.full(48, params.mu), Sig).logpdf(f)
    assert abs(emulator_loglik(params, ens) - want) <= 1e-8
    assert abs(emulator_loglik(params, ens, dense=True) - want) <= 1e-8


def test_loglik_identity_case():
    grid = Grid([0.0], [0.0])
    design = np.arange(12.0).reshape(4, 3) * 100
    params = EmulatorParams("ocean", 0.7, 1.0, 0.0, KernelSpec.powexp([5.0] * 3, [1.0] * 3))
    ens = OutputEnsemble("ocean", np.full((2, 4, 1), 0.7), design, grid)
    assert_allclose(emulator_loglik(params, ens), -2 * math.log(2 * math.pi), rtol=1e-12)


def test_loglik_scaling_identity():
    rng = np.random.default_rng(2)
    params, design, grid = _small_params(rng)
    f = params.mu + rng.standard_normal((6, 8))
    ens1 = OutputEnsemble("surface", np.stack([f, f]), design, grid)
    f2 = params.mu + math.sqrt(2) * (f - params.mu)
    ens2 = OutputEnsemble("surface", np.stack([f2, f2]), design, grid)
    p2 = EmulatorParams(**{**params.__dict__, "sigma2": 2 * params.sigma2, "omega2": 2 * params.omega2})
    assert_allclose(emulator_loglik(p2, ens2) - emulator_loglik(params, ens1),
                    -(48 / 2) * math.log(2), rtol=1e-10)


def _dense_conditional(fit, theta):
    p = fit.params
    C = corr_matrix(fit.design, p.kernel_theta)
    K = np.kron(corr_matrix(fit.grid.z, p.kernel_z), corr_matrix(fit.grid.t, p.kernel_t))
    G = fit.gamma_eff
    Sig = dense_covariance(C, K, G, p.sigma2, p.omega2)
    c = fit.cross_corr(theta)
    S12 = p.sigma2 * np.kron(c[None, :], K)
    r = fit.field.ravel() - p.mu
    mean = p.mu + S12 @ np.linalg.solve(Sig, r)
    V = p.sigma2 * K + p.omega2 * G - S12 @ np.linalg.solve(Sig, S12.T)
    return mean, V


def test_prediction_matches_dense_conditional():
    rng = np.random.default_rng(3)
    params, design, grid = _small_params(rng)
    fit = EmulatorFit(params, design, grid, rng.standard_normal((6, 8)))
    for theta in rng.uniform(design.min(axis=0), design.max(axis=0), (5, 3)):
        pred = predict_surrogate(fit, theta)
        m, V = _dense_conditional(fit, theta)
        assert_allclose(pred.mean, m, rtol=1e-8, atol=1e-12)
        assert_allclose(pred.cov, V, rtol=1e-8, atol=1e-10)
        dense_fit = EmulatorFit(params, design, grid, fit.field, dense_fallback=True)
        assert_allclose(dense_fit.predict(theta).cov, V, rtol=1e-8, atol=1e-10)


def test_noiseless_interpolation_and_prior_reversion():
    rng = np.random.default_rng(4)
    params, design, grid = _small_params(rng, omega2=0.0)
    f = rng.standard_normal((6, 8))
    fit = EmulatorFit(params, design, grid, f)
    for d in range(6):
        mean, V = fit.moments(design[d])
        assert_allclose(mean, f[d], atol=1e-8)
        assert np.abs(V).max() <= 1e-8 * params.sigma2
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        far = fit.predict(np.array([1e3, 1e3, 1e3]))
    assert_allclose(far.mean, params.mu, atol=1e-12)
    K = np.kron(corr_matrix(grid.z, params.kernel_z), corr_matrix(grid.t, params.kernel_t))
    assert_allclose(far.cov, params.sigma2 * K, rtol=1e-10, atol=1e-14)


def test_extrapolation_warns():
    rng = np.random.default_rng(5)
    params, design, grid = _small_params(rng)
    fit = EmulatorFit(params, design, grid, rng.standard_normal((6, 8)))
    with pytest.warns(UserWarning, match="extrapolating"):
        fit.predict(np.array([50.0, 0.5, 0.5]))


def test_prediction_continuous():
    rng = np.random.default_rng(6)
    params, design, grid = _small_params(rng)
    fit = EmulatorFit(params, design, grid, rng.standard_normal((6, 8)))
    th = design.mean(axis=0)
    a, _ = fit.moments(th)
    b, _ = fit.moments(th + 1e-6)
    assert np.abs(a - b).max() < 1e-3


def test_fit_recovers_known_sigma2():
    rng = np.random.default_rng(7)
    D, grid = 40, Grid(np.arange(3.0), np.arange(4.0))
    design = rng.uniform(0, 3, (D, 3))
    truth = EmulatorParams("surface", 0.0, 2.0, 0.0, KernelSpec.powexp([0.6, 0.4, 0.8], [1.5] * 3),
                           KernelSpec.powexp([0.5], [1.5]), KernelSpec.powexp([0.3], [1.5]))
    K = np.kron(corr_matrix(grid.z, truth.kernel_z), corr_matrix(grid.t, truth.kernel_t))
    Sig = dense_covariance(corr_matrix(design, truth.kernel_theta), K, np.eye(12), 2.0, 0.0)
    f = np.linalg.cholesky(Sig + 1e-10 * np.eye(480)) @ rng.standard_normal(480)
    members = np.stack([f.reshape(D, 12)] * 2)  # identical replicates: omega2 = 0
    ens = OutputEnsemble("surface", members, design, grid)
    fit = fit_emulator(ens, EmulatorConfig(max_evals=1500))
    assert fit.omega2 == 0.0
    assert 1.0 <= fit.sigma2 <= 4.0
    truth_ll = emulator_loglik(EmulatorParams(**{**truth.__dict__, "mu": fit.mu}), ens)
    assert fit.loglik >= truth_ll - 1e-6


def test_constant_field():
    design = np.random.default_rng(8).uniform(0, 1, (10, 3))
    ens = OutputEnsemble("ocean", np.full((2, 10, 1), 1.25), design, Grid.scalar())
    fit = fit_emulator(ens, EmulatorConfig(max_evals=300))
    assert_allclose(fit.mu, 1.25, rtol=1e-10)
    assert fit.sigma2 <= 1e-6


def test_fit_deterministic_and_psd(small_world, small_fits):
    fit = small_fits["surface"]
    again = fit_emulator(small_world.ensembles["surface"], EmulatorConfig(max_evals=600))
    assert again.loglik == fit.loglik and again.sigma2 == fit.sigma2
    rng = np.random.default_rng(9)
    b = fit.bounds
    for theta in rng.uniform(b[:, 0], b[:, 1], (100, 3)):
        _, V = fit.moments(theta)
        ev = np.linalg.eigvalsh(V)
        assert ev[0] >= -1e-8 * max(ev[-1], 1e-300)


def test_table_row_survives_fit_file():
    p = table_params(1)["surface"]
    d = EmulatorParams.from_dict(p.to_dict())
    assert d.to_dict() == p.to_dict()
