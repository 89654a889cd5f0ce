import re

import numpy as np
import pytest

from entroprune.ecl_detector import synth_collapse_dump
from entroprune.tensor_io import save_dump


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_dump():
    # 6 layers, collapse after layer 3, two samples; cheap enough for any test
    return synth_collapse_dump(layers=6, tokens=48, hidden=32, heads=4,
                               collapse_layer=3, rank_hi=16, rank_lo=3,
                               noise=0.01, seed=11, samples=2)


@pytest.fixture
def dump_dir(tmp_path, small_dump):
    """small_dump written to disk; returns the manifest path."""
    return save_dump(small_dump, tmp_path / "dump")


_ACCEPTANCE_PATTERN = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)")


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion at the end of the run."""
    lines = {}
    for status in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(status, []):
            match = _ACCEPTANCE_PATTERN.search(getattr(report, "nodeid", ""))
            if match:
                number = int(match.group(1))
                verdict = "PASS" if status == "passed" else "FAIL"
                lines[number] = (match.group(2), verdict)
    if lines:
        terminalreporter.write_sep("-", "acceptance criteria")
        for number in sorted(lines):
            name, verdict = lines[number]
            terminalreporter.write_line(
                f"ACCEPTANCE CRITERION {number} ({name}): {verdict}"
            )
