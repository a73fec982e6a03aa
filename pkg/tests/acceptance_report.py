"""Collects one pass/fail line per acceptance criterion for the terminal summary."""

LINES = {}


def record(number, ok, detail):
    LINES[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    print(LINES[number])
    return ok
