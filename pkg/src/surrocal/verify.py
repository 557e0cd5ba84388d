"""Self-checks of the numerical core against independent dense oracles."""

from __future__ import annotations

import math
import os
import tempfile
from dataclasses import dataclass

import numpy as np
from scipy.stats import multivariate_normal

from surrocal.archive import read_archive, write_archive
from surrocal.calibration import obs_loglik
from surrocal.data import SURFACE, OutputEnsemble
from surrocal.emulator import SurrogatePrediction, emulator_loglik
from surrocal.fixtures import table_params
from surrocal.kernels import KernelSpec, corr_matrix, powexp_corr
from surrocal.tensor_linalg import dense_covariance, structured_factorize
from surrocal.uncertainty import kde_univariate, percentile_ci
from surrocal.wavelet import wavelet_regularized_cov


@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def __post_init__(self):
        self.passed = bool(self.passed)


def _random_spd(rng, n, ridge=0.1):
    A = rng.standard_normal((n, n))
    return A @ A.T / n + ridge * np.eye(n)


def check_structured(rng, n_instances=5) -> Check:
    worst = 0.0
    for _ in range(n_instances):
        D, nz, nt = rng.integers(3, 12), rng.integers(1, 4), rng.integers(1, 5)
        m = nz * nt
        C = _random_spd(rng, D)
        K = np.kron(_random_spd(rng, nz), _random_spd(rng, nt))
        G = _random_spd(rng, m)
        s2, w2 = rng.uniform(0.5, 2.0), rng.uniform(0.01, 0.5)
        f = structured_factorize(C, K, G, s2, w2)
        S = dense_covariance(C, K, G, s2, w2)
        r = rng.standard_normal(D * m)
        x = np.linalg.solve(S, r)
        ld = np.linalg.slogdet(S)[1]
        worst = max(worst, np.abs(f.solve(r) - x).max() / np.abs(x).max(),
                    abs(f.logdet() - ld) / max(1.0, abs(ld)))
    return Check("structured solve/logdet vs dense", worst < 1e-8, f"max rel err {worst:.2e}")


def check_kernel() -> Check:
    k = table_params(1)[SURFACE].kernel_theta
    got = powexp_corr(np.ones(3), k.eta, k.p)
    want = math.exp(-(1.365 + 1.189 + 2.283))
    return Check("power exponential scalar oracle", abs(got - want) < 1e-15,
                 f"{got:.17g} vs {want:.17g}")


def check_wavelet(rng) -> Check:
    resid = rng.standard_normal((120, 20))
    g0 = wavelet_regularized_cov(resid, (4, 5), threshold_frac=0.0)
    S = resid.T @ resid
    S *= S.shape[0] / np.trace(S)
    g9 = wavelet_regularized_cov(resid, (4, 5), threshold_frac=0.9)
    err0 = np.abs(g0 - S).max()
    ev = np.linalg.eigvalsh(g9)
    ok = err0 < 1e-10 and ev[0] >= -1e-10 * ev[-1] and abs(np.trace(g9) / 20 - 1) < 1e-9
    return Check("wavelet covariance identity and threshold", ok,
                 f"identity err {err0:.1e}, min eig {ev[0]:.2e}, trace/m {np.trace(g9) / 20:.12f}")


def check_obs_loglik(rng) -> Check:
    worst = 0.0
    for nz, nt in ((1, 1), (3, 4)):
        m = nz * nt
        V = _random_spd(rng, m, 0.01) * 0.1
        mean = rng.standard_normal(m)
        y = mean + rng.standard_normal(m)
        R1, R2 = corr_matrix(np.arange(nz), KernelSpec.powexp([0.7], [1.0])), \
            corr_matrix(np.arange(nt), KernelSpec.powexp([0.4], [1.0]))
        tau = 0.3
        got = obs_loglik(y, SurrogatePrediction(mean, V), tau, R1, R2)
        want = multivariate_normal(mean, V + tau ** 2 * np.kron(R1, R2)).logpdf(y)
        worst = max(worst, abs(got - want))
    return Check("observation log-likelihood vs dense density", worst < 1e-8,
                 f"max abs err {worst:.2e}")


def check_summaries() -> Check:
    ci = percentile_ci(np.arange(101.0), 0.9)
    peak = kde_univariate([0.0], [0.0], 1.0)[0]
    ok = ci == (5.0, 95.0) and abs(peak - 1 / math.sqrt(2 * math.pi)) < 1e-15
    return Check("percentile interval and kernel peak", ok, f"CI {ci}, peak {peak:.15f}")


def check_archive(path) -> list:
    arch = read_archive(path)
    out = []
    with tempfile.TemporaryDirectory() as tmp:
        extra = {k: v for k, v in arch.manifest.items()
                 if k not in ("schema_version", "stacking", "D", "R", "parameters",
                              "datasets", "observations")}
        write_archive(tmp, arch.design, arch.ensembles, arch.observations, extra)
        same = all(_same_bytes(os.path.join(path, rel), os.path.join(tmp, rel))
                   for rel in _archive_files(path))
    out.append(Check("archive re-serialization is byte-identical", same, path))
    ens = arch.ensembles.get(SURFACE)
    if ens is not None:
        sub = OutputEnsemble(SURFACE, ens.members[:, :30], ens.design[:30], ens.grid)
        p = table_params(1)[SURFACE]
        a = emulator_loglik(p, sub)
        b = emulator_loglik(p, sub, dense=True)
        out.append(Check("emulator log-likelihood structured vs dense on archive data",
                         abs(a - b) <= 1e-8 * max(1.0, abs(b)), f"{a:.10f} vs {b:.10f}"))
    return out


def _archive_files(path):
    for root, _, files in os.walk(path):
        for f in files:
            if f.endswith(".csv") or f == "manifest.json":
                yield os.path.relpath(os.path.join(root, f), path)


def _same_bytes(a, b):
    with open(a, "rb") as fa, open(b, "rb") as fb:
        return fa.read() == fb.read()


def run_checks(archive: str | None = None, seed: int = 0) -> list:
    """Run every check; returns a list of :class:`Check`."""
    rng = np.random.default_rng(seed)
    checks = [check_structured(rng), check_kernel(), check_wavelet(rng),
              check_obs_loglik(rng), check_summaries()]
    if archive is not None:
        checks += check_archive(archive)
    return checks
