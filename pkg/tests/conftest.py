import shutil
from pathlib import Path

import pytest

from animaltwin.synth import ScenarioConfig, generate


@pytest.fixture(scope="session")
def scenario_cache(tmp_path_factory):
    """Generate each (kind, seed) scenario once per session; tests get private copies."""
    root = tmp_path_factory.mktemp("scenarios")
    cache = {}

    def get(kind: str, seed: int = 7, **overrides) -> Path:
        key = (kind, seed, tuple(sorted(overrides.items())))
        if key not in cache:
            out = root / f"{kind}-{seed}-{len(cache)}"
            generate(ScenarioConfig(kind, seed=seed, **overrides), out)
            cache[key] = out
        return cache[key]

    return get


@pytest.fixture
def scenario(scenario_cache, tmp_path):
    """``scenario(kind, seed=7, **config)`` -> writable copy of a generated scenario."""

    def make(kind: str, seed: int = 7, **overrides) -> Path:
        src = scenario_cache(kind, seed, **overrides)
        dst = tmp_path / src.name
        if not dst.exists():
            shutil.copytree(src, dst)
        return dst

    return make


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    if module is None or not module.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(module.RESULTS):
        terminalreporter.write_line(line)
