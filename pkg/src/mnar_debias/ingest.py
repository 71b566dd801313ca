"""Readers for explicit-feedback files.

Two text formats are accepted: ``triples`` (``user<TAB>item<TAB>rating`` per
line, 0-based integer ids or arbitrary ids remapped densely) and
``dense_ascii`` (one whitespace separated row per user, 0 meaning unobserved).
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import LabeledMatrix, ObservationMask
from .errors import DomainError, IngestError

FORMATS = ("triples", "dense_ascii")


@dataclass(frozen=True, eq=False)
class Ratings:
    labels: LabeledMatrix
    mask: ObservationMask
    duplicates: int = 0

    def binarized(self, threshold: float = 3.0) -> LabeledMatrix:
        """Rating ``> threshold`` becomes 1; unobserved cells are 0."""
        y = np.where(self.mask.bits & (np.asarray(self.labels) > threshold), 1.0, 0.0)
        return LabeledMatrix(y, "binary_labels")


def _id_key(x: str):
    return (0, int(x), x) if x.lstrip("-").isdigit() else (1, 0, x)


def _read_triples(lines, shape: Optional[tuple[int, int]], remap: bool) -> Ratings:
    entries = {}
    duplicates = 0
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise IngestError(f"expected 3 fields, got {len(parts)}", lineno)
        try:
            u, i = (parts[0], parts[1]) if remap else (int(parts[0]), int(parts[1]))
            r = float(parts[2])
        except ValueError:
            raise IngestError(f"cannot parse {line!r}", lineno) from None
        if (not remap and (u < 0 or i < 0)) or not np.isfinite(r):
            raise IngestError(f"invalid entry {line!r}", lineno)
        if (u, i) in entries:
            duplicates += 1
        entries[(u, i)] = r
    if not entries:
        raise IngestError("no ratings found", 0)
    if remap:
        users = {u: j for j, u in enumerate(sorted({u for u, _ in entries}, key=_id_key))}
        items = {i: j for j, i in enumerate(sorted({i for _, i in entries}, key=_id_key))}
        entries = {(users[u], items[i]): r for (u, i), r in entries.items()}
    M = max(u for u, _ in entries) + 1
    N = max(i for _, i in entries) + 1
    if shape is not None:
        if M > shape[0] or N > shape[1]:
            raise IngestError(f"ids exceed the declared shape {shape}", 0)
        M, N = shape
    values = np.zeros((M, N))
    bits = np.zeros((M, N), dtype=bool)
    for (u, i), r in entries.items():
        values[u, i] = r
        bits[u, i] = True
    if duplicates:
        warnings.warn(f"{duplicates} duplicate (user, item) entries; the last one was kept", stacklevel=3)
    return Ratings(LabeledMatrix(values), ObservationMask(bits), duplicates)


def _read_dense(lines) -> Ratings:
    rows = []
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        try:
            row = [float(x) for x in line.split()]
        except ValueError:
            raise IngestError(f"cannot parse {line!r}", lineno) from None
        if rows and len(row) != len(rows[0]):
            raise IngestError(f"row has {len(row)} entries, expected {len(rows[0])}", lineno)
        rows.append(row)
    if not rows:
        raise IngestError("no rows found", 0)
    values = np.array(rows)
    return Ratings(LabeledMatrix(values), ObservationMask(values != 0.0))


def read_ratings(path: str, fmt: str = "triples", shape: Optional[tuple[int, int]] = None,
                 remap: bool = False) -> Ratings:
    """Read a ratings file into labels and an observation mask.

    With ``remap`` the triple ids may be any tokens; they are sorted
    (numerically when integral) and mapped to ``0..n-1``.
    """
    if fmt not in FORMATS:
        raise DomainError(f"format must be one of {FORMATS}, got {fmt!r}")
    with open(path) as fh:
        lines = fh.readlines()
    return _read_triples(lines, shape, remap) if fmt == "triples" else _read_dense(lines)
