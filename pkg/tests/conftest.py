import pytest

from semantic_memory import RunConfig, fixture_path, load_scenario


@pytest.fixture(scope="session")
def scenario1():
    return load_scenario(fixture_path("scenario1.json"))


@pytest.fixture(scope="session")
def scenario2():
    return load_scenario(fixture_path("scenario2.json"))


@pytest.fixture(scope="session")
def default_config():
    return RunConfig()


@pytest.fixture(scope="session")
def trained2(scenario2, default_config):
    """Spatial and temporal phases trained on scenario 2 with defaults."""
    from semantic_memory.pipeline import train_spatial_phase, train_temporal_phase

    sp = train_spatial_phase([scenario2], default_config)
    tp = train_temporal_phase([scenario2], sp.grammar, sp.catalog, default_config)
    return sp, tp


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
