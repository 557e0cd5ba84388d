import numpy as np
import pytest

from surrocal.emulator import EmulatorConfig, fit_emulator
from surrocal.synthetic import WorldConfig, generate_world

SMALL = WorldConfig(n_design=40, upper_dims=(6, 4), seed=11)


def random_spd(rng, n, ridge=0.1):
    A = rng.standard_normal((n, n))
    return A @ A.T / n + ridge * np.eye(n)


@pytest.fixture(scope="session")
def small_world():
    return generate_world(SMALL)


@pytest.fixture(scope="session")
def small_fits(small_world):
    cfg = EmulatorConfig(max_evals=600)
    return {n: fit_emulator(e, cfg) for n, e in small_world.ensembles.items()}


@pytest.fixture(scope="session")
def small_calib(small_world, small_fits):
    from surrocal.calibration import CalibrationConfig, maximize_likelihood
    cfg = CalibrationConfig(bounds=SMALL.bounds, top_k=2, max_evals=1500)
    return maximize_likelihood(small_world.observations, small_fits, cfg)


# one line per acceptance criterion, echoed again at the end of the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
