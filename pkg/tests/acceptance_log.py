"""One verdict line per acceptance criterion, echoed in the terminal summary."""

LINES: dict[str, str] = {}


def report(key: str, ok: bool, detail: str) -> str:
    line = f"criterion {key}: {'PASS' if ok else 'FAIL'} | {detail}"
    LINES[key] = line
    print(line)
    return line
