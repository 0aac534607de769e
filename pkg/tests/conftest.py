import pytest

from partguide import pipeline
from partguide.synthetic import SyntheticBenchmark


@pytest.fixture(scope="session")
def small_workspace_dir(tmp_path_factory):
    directory = tmp_path_factory.mktemp("synth-small")
    SyntheticBenchmark(n_images=8, seed=0).write(directory)
    return directory


@pytest.fixture(scope="session")
def small_workspace(small_workspace_dir):
    return pipeline.Workspace(small_workspace_dir / "manifest.json")
