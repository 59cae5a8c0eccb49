import pytest

from featprobe.config import load_config
from featprobe.synthetic import make_fixture
from featprobe.sweep import run_sweep


@pytest.fixture(scope="session")
def fixture_dir(tmp_path_factory):
    """The bundled synthetic dataset, generated once per session."""
    root = tmp_path_factory.mktemp("fixture")
    return make_fixture(root, seed=7)


@pytest.fixture(scope="session")
def swept_dir(fixture_dir, tmp_path_factory):
    """Fixture plus one full sweep into a dedicated output directory."""
    out = tmp_path_factory.mktemp("swept")
    config = load_config(fixture_dir.config, output_dir=out)
    results = run_sweep(config)
    assert all(r.status == "done" for r in results), [r.error for r in results]
    return config
