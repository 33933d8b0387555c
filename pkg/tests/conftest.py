import pytest

from scenario_fusion import synth
from scenario_fusion.config import default_mappings


@pytest.fixture(scope="session")
def mappings():
    return default_mappings()


@pytest.fixture(scope="session")
def bundled():
    """Bundled 1,000-record-per-dataset fixture, in memory."""
    spec = synth.bundled_spec(seed=0, trips=0)
    datasets, truth = synth.gen_records(spec)
    return spec, datasets, truth


@pytest.fixture(scope="session")
def grid_spec():
    return synth.SynthSpec(seed=5, grid_size=(6, 6))


@pytest.fixture(scope="session")
def grid(grid_spec):
    return synth.grid_graph(grid_spec)


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance_log(request):
    return request.config.stash.setdefault(ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
