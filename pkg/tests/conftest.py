import os

from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# acceptance tests append (criterion, passed, detail) here; printed at the end of the run
CRITERIA: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in sorted(CRITERIA, key=lambda c: int(c[0].split()[1].rstrip(":"))):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {name} {detail}")
