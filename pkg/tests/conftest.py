import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def sequences(tmp_path_factory):
    """Canonical synthetic sequences written to disk once per session, keyed by name."""
    from rgbdi import fixtures
    from rgbdi.synthetic import generate_from_config

    root = tmp_path_factory.mktemp("sequences")
    cache = {}

    def get(name, duration=None):
        key = (name, duration)
        if key not in cache:
            out = root / f"{name}_{duration}"
            generate_from_config(fixtures.scene_config(name, duration=duration), out)
            cache[key] = out
        return cache[key]

    return get


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance PASS/FAIL lines at the end of the run."""
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
