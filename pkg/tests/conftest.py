import sys
import numpy as np
import pytest

from tresdiag.config import DEFAULT_SEED
from tresdiag.datagen import BreakSpec, GeneratorConfig, channel_catalog, generate_case, generate_dataset
from tresdiag.model import build_model, reduced_arch
from tresdiag.numerics import Rng


@pytest.fixture(scope="session")
def default_dataset():
    return generate_dataset(GeneratorConfig(), seed=DEFAULT_SEED)


@pytest.fixture(scope="session")
def small_dataset():
    return generate_dataset(GeneratorConfig(n_cases=24, test_fraction=0.25), seed=3)


@pytest.fixture
def tiny_model():
    """Reduced TRES-CNN on 6 parameters x 20 steps with non-trivial norm stats."""
    arch = reduced_arch()
    m = build_model(arch, Rng(1).child("init"), [f"c{i}" for i in range(arch.n_params)])
    rng = np.random.default_rng(0)
    return m.with_norm_stats(rng.normal(size=arch.n_params), rng.uniform(0.5, 2.0, arch.n_params))


def make_case(diameter=0.5, location="cold_leg", seed=0, case_id=0, config=None):
    config = config or GeneratorConfig()
    return generate_case(channel_catalog(config), BreakSpec(location, diameter), seed, case_id,
                         config.duration, config.frequency, config.discharge_spread)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
