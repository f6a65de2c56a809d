import os
from pathlib import Path

import pytest

from spinqec.code import build_surface17_schedule, surface17_layout
from spinqec.decode import build_tables
from spinqec.experiments import get_library
from spinqec.gates import HardwareConfig, LibraryGrids


@pytest.fixture(scope="session")
def cache_dir(tmp_path_factory) -> Path:
    """Library/table cache; set SPINQEC_TEST_CACHE to reuse one across sessions."""
    env = os.environ.get("SPINQEC_TEST_CACHE")
    if env:
        p = Path(env)
        p.mkdir(parents=True, exist_ok=True)
        return p
    return tmp_path_factory.mktemp("cache")


@pytest.fixture(scope="session")
def library(cache_dir):
    return get_library(HardwareConfig(), LibraryGrids(), cache_dir)


@pytest.fixture(scope="session")
def tables(cache_dir):
    return {v: build_tables(surface17_layout(v), build_surface17_schedule(v, "pi"), cache_dir)
            for v in ("standard", "xzzx")}


_ACCEPTANCE: list[str] = []


@pytest.fixture
def report(capsys):
    """Record one PASS/FAIL line per acceptance criterion and assert it."""
    def _report(n: int, ok: bool, text: str):
        line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}: {text}"
        _ACCEPTANCE.append(line)
        with capsys.disabled():
            print(f"\n{line}")
        assert ok, line
    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
