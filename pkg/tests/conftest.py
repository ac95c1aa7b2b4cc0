import re


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            m = re.search(r"test_acceptance\.py::test_criterion_(\d+)", getattr(rep, "nodeid", ""))
            if m and rep.when == "call":
                lines.append((int(m.group(1)), "PASS" if outcome == "passed" else "FAIL", rep.duration))
    if lines:
        terminalreporter.section("acceptance criteria")
        for k, status, dur in sorted(lines):
            terminalreporter.write_line(f"CRITERION {k}: {status} ({dur:.1f} s)")
