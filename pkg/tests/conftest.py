from hypothesis import settings

settings.register_profile("thorough", max_examples=500, deadline=None)

# filled by test_acceptance.py, one line per criterion
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[key])
