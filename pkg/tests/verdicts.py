"""Collects one pass/fail line per acceptance criterion for the run summary."""

from contextlib import contextmanager

LINES: dict = {}


@contextmanager
def criterion(number: int, title: str):
    """Yields a dict for measured values; records PASS unless the body raises."""
    info: dict = {}
    try:
        yield info
    except BaseException:
        LINES[number] = f"[{number:2d}] FAIL  {title}  {_fmt(info)}"
        raise
    LINES[number] = f"[{number:2d}] PASS  {title}  {_fmt(info)}"


def _fmt(info: dict) -> str:
    return " ".join(f"{k}={v}" for k, v in info.items())
