"""Plain-text field serialization.

Line 1 holds ``n,m,h,L``; then one row ``i1,...,in,u1,...,um`` per node in
lexicographic node order. Floats use the shortest round-trip repr, so
serialize -> parse -> serialize is byte-identical.
"""
from __future__ import annotations

import itertools

import numpy as np

from ..errors import ValidationError
from .grid import GridSpec, VectorField, default_mask


def dumps(u: VectorField) -> str:
    s = u.spec
    lines = [f"{s.n},{s.m},{float(s.h)!r},{float(s.L)!r}"]
    vals = u.values.reshape(-1, s.m).tolist()
    for idx, row in zip(itertools.product(range(s.N), repeat=s.n), vals):
        lines.append(",".join(itertools.chain(map(str, idx), map(repr, row))))
    return "\n".join(lines) + "\n"


def loads(text: str, mask="ball") -> VectorField:
    lines = text.splitlines()
    if not lines:
        raise ValidationError("empty field file")
    try:
        n, m, h, L = lines[0].split(",")
        spec = GridSpec(int(n), int(m), float(h), float(L))
    except (ValueError, TypeError) as exc:
        raise ValidationError(f"line 1: bad header {lines[0]!r}: {exc}") from None
    body = lines[1:]
    if len(body) != spec.size:
        raise ValidationError(f"expected {spec.size} node rows, found {len(body)}")
    try:
        arr = np.array([row.split(",") for row in body], dtype=float)
    except ValueError as exc:
        raise ValidationError(f"malformed node row: {exc}") from None
    if arr.shape[1] != spec.n + spec.m:
        raise ValidationError("node rows have the wrong number of columns")
    expect = np.array(list(itertools.product(range(spec.N), repeat=spec.n)))
    if not np.array_equal(arr[:, :spec.n].astype(int), expect):
        raise ValidationError("node rows are not in lexicographic order")
    if isinstance(mask, str):
        mask = default_mask(spec, mask)
    return VectorField(spec, arr[:, spec.n:].reshape(spec.shape + (spec.m,)), mask)


def write_field(path, u: VectorField) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(dumps(u))


def read_field(path, mask="ball") -> VectorField:
    with open(path) as fh:
        return loads(fh.read(), mask)
