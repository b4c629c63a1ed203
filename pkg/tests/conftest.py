"""Prints the acceptance summary (one line per criterion) after the run."""

ACCEPTANCE = {}


def record(criterion, title, part, ok, detail, seconds=0.0):
    entry = ACCEPTANCE.setdefault(criterion, {"title": title, "parts": [], "seconds": 0.0})
    entry["parts"].append((part, bool(ok), detail))
    entry["seconds"] += seconds


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE):
        e = ACCEPTANCE[crit]
        ok = all(p[1] for p in e["parts"])
        failed = [f"{p[0]} ({p[2]})" for p in e["parts"] if not p[1]]
        line = f"criterion {crit:>2} {'PASS' if ok else 'FAIL'}  {e['title']}  [{e['seconds']:.1f} s]"
        if failed:
            line += "  failing: " + "; ".join(failed)
        tr.write_line(line)
        for part, pok, detail in e["parts"]:
            tr.write_line(f"      {'ok ' if pok else 'BAD'} {part}: {detail}")
