from test_acceptance import SUMMARY


def pytest_terminal_summary(terminalreporter):
    if SUMMARY:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in SUMMARY:
            terminalreporter.write_line(line)
