"""Collects one pass/fail line per acceptance criterion for the terminal summary."""

import time
from contextlib import contextmanager

RESULTS: dict[int, tuple[bool, str, str]] = {}


@contextmanager
def criterion(number: int, title: str):
    start = time.perf_counter()
    detail = {"text": ""}
    try:
        yield detail
    except BaseException as exc:
        RESULTS[number] = (False, title, f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
        print(line(number))
        raise
    RESULTS[number] = (True, title, f"{detail['text']} [{time.perf_counter() - start:.1f} s]".strip())
    print(line(number))


def line(number: int) -> str:
    ok, title, detail = RESULTS[number]
    return f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
