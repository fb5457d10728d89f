from __future__ import annotations


def pytest_terminal_summary(terminalreporter):
    rows = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if "test_acceptance.py" not in rep.nodeid or rep.when != "call":
                continue
            props = dict(rep.user_properties)
            if "criterion" in props:
                rows.append((props["criterion"], "PASS" if outcome == "passed" else "FAIL", props.get("detail", "")))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for number, status, detail in sorted(rows, key=lambda r: float(r[0].rstrip("ab") or 0) + (0.1 if r[0].endswith("b") else 0)):
        terminalreporter.write_line(f"criterion {number}: {status}  {detail}")
