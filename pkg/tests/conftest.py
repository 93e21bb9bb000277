"""Shared fixtures: the default junction and a few cached simulation runs."""

import numpy as np
import pytest

from junction_watch import pipeline, simulator
from support import run_pipeline


@pytest.fixture(scope="session")
def lens():
    return simulator.default_lens()


@pytest.fixture(scope="session")
def normalizer(lens):
    return simulator.default_normalizer(lens)


@pytest.fixture(scope="session")
def route_defs(normalizer):
    return simulator.default_route_definitions(normalizer)


@pytest.fixture(scope="session")
def models(route_defs, normalizer):
    return pipeline.route_models(route_defs, normalizer)


@pytest.fixture(scope="session")
def cfg():
    return pipeline.PipelineConfig()


@pytest.fixture(scope="session")
def setup_day(lens, cfg, models, normalizer):
    """A 30 minute incident-free day and its baselines."""
    script = simulator.default_script(duration=1800.0, seed=5)
    run = run_pipeline(script, lens, cfg, models, normalizer)
    return run, pipeline.baselines(run.classified, models, cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
