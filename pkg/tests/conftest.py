import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from probattr.core import AttributeTaxonomy, AttributeSetDef, default_taxonomy  # noqa: E402

CRITERIA: list[str] = []


def record_criterion(name: str, ok: bool, detail: str = "") -> None:
    CRITERIA.append(f"[{'PASS' if ok else 'FAIL'}] {name}" + (f" ({detail})" if detail else ""))


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tax():
    return default_taxonomy()


@pytest.fixture
def small_tax():
    return AttributeTaxonomy(
        [AttributeSetDef("Inputs", ["Text", "Speech"]),
         AttributeSetDef("Waveform", ["WaveNet", "Concat", "LPC-vocoder"])],
        {"S01": ["Text", "WaveNet"], "S02": ["Speech", "Concat"], "S03": ["Text", "LPC-vocoder"]},
        {"S09": "S02"},
    )
