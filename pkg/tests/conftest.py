import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))


@pytest.fixture
def pose():
    from spp.core import BoardPose

    return BoardPose(0.5, 0.8, 0.84, 0.22)


@pytest.fixture(scope="session")
def ocr_model():
    """The default-config OCR, trained once per test session."""
    from spp.eval.ocr import train_ocr

    model, _ = train_ocr()
    return model


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        ok, detail = RESULTS[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
