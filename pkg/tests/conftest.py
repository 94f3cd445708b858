import pytest

from optoblock.params import SystemParams

# criterion number -> (passed, detail); filled in by test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture
def base():
    return SystemParams()


@pytest.fixture
def fig4d():
    return SystemParams(J=3.0, omega_m=10.0, gamma_m=1e-2, temperature=1e-4)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'} - {detail}")
