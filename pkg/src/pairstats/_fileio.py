"""Helpers for the plain-text matrix and key=value file formats."""

from __future__ import annotations

import numpy as np

from .errors import ValidationError


def fmt(value) -> str:
    """Render a number so that it round-trips exactly through text."""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def format_matrix(header: dict, matrix: np.ndarray) -> str:
    fields = " ".join(f"{k}={fmt(v)}" for k, v in header.items())
    lines = [f"# {fields}"]
    for row in np.atleast_2d(matrix):
        lines.append(",".join(fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def parse_matrix(text: str) -> tuple[dict, np.ndarray]:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip()]
    if not lines or not lines[0].startswith("#"):
        raise ValidationError("matrix file must start with a '# key=value ...' header")
    header = _parse_pairs(lines[0][1:].split())
    rows = [[float(v) for v in ln.split(",")] for ln in lines[1:]]
    if not rows or any(len(r) != len(rows[0]) for r in rows):
        raise ValidationError("matrix rows are missing or ragged")
    return header, np.asarray(rows, dtype=float)


def format_mapping(pairs: dict) -> str:
    return "".join(f"{k}={fmt(v) if not isinstance(v, str) else v}\n" for k, v in pairs.items())


def parse_mapping(text: str) -> dict:
    pairs = []
    for ln in text.splitlines():
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        pairs.append(ln)
    return _parse_pairs(pairs)


def _parse_pairs(items) -> dict:
    out = {}
    for item in items:
        if "=" not in item:
            raise ValidationError(f"expected key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out
