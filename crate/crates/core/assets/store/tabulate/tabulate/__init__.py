"""Offline stand-in for the tabulate distribution."""

__version__ = "0.9.0"


def tabulate(rows, headers=()):
    table = [list(map(str, headers))] if headers else []
    table.extend([list(map(str, row)) for row in rows])
    if not table:
        return ""
    widths = [max(len(row[i]) for row in table) for i in range(len(table[0]))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in table]
    return "\n".join(lines)
