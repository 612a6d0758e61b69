from pathlib import Path

import pytest

from citeintent.dataset_io import LabelSchema, get_schema

DATA = Path(__file__).parent / "data"

# filled by test_acceptance.py, printed in the terminal summary
ACCEPTANCE_RESULTS: dict[str, tuple[str, str]] = {}


@pytest.fixture
def data_dir():
    return DATA


@pytest.fixture
def scicite():
    return get_schema("scicite")


@pytest.fixture
def acl_arc():
    return get_schema("acl_arc")


@pytest.fixture
def two_labels():
    return LabelSchema("toy2", ("alpha", "beta"))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS):
        status, detail = ACCEPTANCE_RESULTS[key]
        terminalreporter.write_line(f"criterion {key}: {status}  {detail}")
