"""Fixed-format numeric output shared by the CSV writers and the CLI.

Every CSV cell uses 17-significant-digit scientific notation so that
reruns of the same command produce byte-identical files.
"""

from __future__ import annotations

__all__ = ["format_float", "write_csv"]


def format_float(value) -> str:
    return f"{float(value):.16e}"


def write_csv(path, header, rows):
    """Write rows of floats (or pre-formatted strings) under a header."""
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            cells = [c if isinstance(c, str) else format_float(c) for c in row]
            fh.write(",".join(cells) + "\n")
