"""Small helpers shared by the phases: conditional loggers, directories, tables."""

import os
from pprint import pprint
from typing import Iterable, Sequence

path_sep = os.path.sep


def mk_conditional_logger(condition, func=print):
    """Return ``func`` if ``condition`` holds, else a logger that does nothing.

    >>> log = mk_conditional_logger(False)
    >>> log("nobody will see this")
    >>> log = mk_conditional_logger(True)
    >>> log("but this is printed")
    but this is printed
    """
    if condition:
        return func
    else:

        def do_nothing(*args, **kwargs):
            pass

        return do_nothing


def clog(condition, *args, log_func=pprint, **kwargs):
    if condition:
        log_func(*args, **kwargs)


def ensure_no_slash_suffix(s: str):
    return s.rstrip(path_sep)


def ensure_dir(dirpath: str, *, verbose=False) -> str:
    """Make ``dirpath`` (and its parents) if missing, and return its absolute path."""
    dirpath = ensure_no_slash_suffix(os.path.abspath(os.path.expanduser(dirpath)))
    if not os.path.isdir(dirpath):
        clog(verbose, f"... making directory {dirpath}", log_func=print)
        os.makedirs(dirpath)
    return dirpath


def format_table(rows: Iterable[Sequence], header: Sequence[str]) -> str:
    """Left-align the first column and right-align the others.

    >>> print(format_table([("P_s", "0.9500"), ("T", "123.0")], ("measure", "mean")))
    measure    mean
    -------  ------
    P_s      0.9500
    T         123.0
    """
    rows = [tuple(map(str, row)) for row in rows]
    header = tuple(header)
    widths = [
        max(len(x) for x in column) for column in zip(header, *rows)
    ]

    def fmt(row):
        first, *others = row
        cells = [first.ljust(widths[0])]
        cells += [cell.rjust(w) for cell, w in zip(others, widths[1:])]
        return "  ".join(cells).rstrip()

    lines = [fmt(header), fmt(tuple("-" * w for w in widths))]
    lines += [fmt(row) for row in rows]
    return "\n".join(lines)
