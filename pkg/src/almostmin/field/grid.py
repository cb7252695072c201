"""Uniform grids, nodal vector fields and ball frames."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DomainError, ResolutionError, ValidationError


@dataclass(frozen=True)
class GridSpec:
    """Uniform grid on the cube [-L, L]^n carrying R^m-valued nodal data."""

    n: int
    m: int
    h: float
    L: float = 1.0

    def __post_init__(self):
        if self.n not in (2, 3):
            raise ValidationError(f"n must be 2 or 3, got {self.n}")
        if int(self.m) != self.m or self.m < 1:
            raise ValidationError(f"m must be a positive integer, got {self.m}")
        if not (np.isfinite(self.h) and self.h > 0):
            raise ValidationError(f"h must be positive, got {self.h}")
        if not (np.isfinite(self.L) and self.L >= 1):
            raise ValidationError(f"L must be >= 1, got {self.L}")
        cells = 2 * self.L / self.h
        if abs(cells - round(cells)) > 1e-9 * max(1.0, cells):
            raise ValidationError(f"2L/h must be an integer, got {cells!r}")

    @property
    def cells(self) -> int:
        return int(round(2 * self.L / self.h))

    @property
    def N(self) -> int:
        """Nodes per axis."""
        return self.cells + 1

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.n

    @property
    def size(self) -> int:
        return self.N ** self.n

    def axis(self) -> np.ndarray:
        return -self.L + self.h * np.arange(self.N)

    def coords(self) -> list:
        """Coordinate arrays, one per axis, broadcast to the node shape."""
        ax = self.axis()
        return np.meshgrid(*([ax] * self.n), indexing="ij")

    def points(self) -> np.ndarray:
        """All node coordinates, shape (N**n, n), lexicographic order."""
        return np.stack([c.ravel() for c in self.coords()], axis=1)

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(np.abs(x) <= self.L * (1 + 1e-12)))


def default_mask(spec: GridSpec, kind: str = "ball") -> np.ndarray:
    """Dirichlet mask: nodes on the cube faces, plus (kind="ball") those with |x| >= 1."""
    mask = np.zeros(spec.shape, dtype=bool)
    for ax in range(spec.n):
        sl = [slice(None)] * spec.n
        sl[ax] = 0
        mask[tuple(sl)] = True
        sl[ax] = -1
        mask[tuple(sl)] = True
    if kind == "ball":
        r2 = sum(c * c for c in spec.coords())
        mask |= r2 >= 1.0 - 1e-12
    elif kind != "faces":
        raise ValidationError(f"unknown mask kind {kind!r}")
    return mask


class VectorField:
    """Nodal field u: grid -> R^m. Immutable once built.

    ``values`` has shape ``spec.shape + (m,)`` and ``boundary_mask`` has shape
    ``spec.shape``; True marks a Dirichlet node.
    """

    def __init__(self, spec: GridSpec, values, boundary_mask=None):
        values = np.array(values, dtype=float)
        if values.shape == spec.shape and spec.m == 1:
            values = values[..., None]
        if values.shape != spec.shape + (spec.m,):
            raise ValidationError(
                f"values shape {values.shape} does not match {spec.shape + (spec.m,)}")
        if not np.all(np.isfinite(values)):
            bad = np.argwhere(~np.isfinite(values))[0]
            raise ValidationError(f"non-finite value at node {tuple(bad[:-1])}")
        if boundary_mask is None:
            boundary_mask = default_mask(spec)
        boundary_mask = np.array(boundary_mask, dtype=bool)
        if boundary_mask.shape != spec.shape:
            raise ValidationError("boundary_mask shape mismatch")
        values.flags.writeable = False
        boundary_mask.flags.writeable = False
        self.spec = spec
        self.values = values
        self.boundary_mask = boundary_mask
        self._cache = {}

    @property
    def n(self):
        return self.spec.n

    @property
    def m(self):
        return self.spec.m

    @property
    def h(self):
        return self.spec.h

    def norm(self) -> np.ndarray:
        """Euclidean norm over components, per node."""
        return np.sqrt(np.sum(self.values ** 2, axis=-1))

    def with_values(self, values) -> "VectorField":
        return VectorField(self.spec, values, self.boundary_mask)

    def cached(self, key, build):
        if key not in self._cache:
            self._cache[key] = build()
        return self._cache[key]

    def __repr__(self):
        s = self.spec
        return f"VectorField(n={s.n}, m={s.m}, h={s.h!r}, L={s.L!r})"


def make_field(spec: GridSpec, initializer, mask="ball") -> VectorField:
    """Evaluate ``initializer`` at every node.

    ``initializer`` maps an (P, n) array of points to (P, m) values (or (P,)
    when m == 1). ``mask`` is "ball", "faces" or an explicit boolean array.
    """
    pts = spec.points()
    vals = np.asarray(initializer(pts), dtype=float)
    if vals.ndim == 1:
        vals = vals[:, None]
    if vals.shape != (pts.shape[0], spec.m):
        raise ValidationError(
            f"initializer returned shape {vals.shape}, expected {(pts.shape[0], spec.m)}")
    finite = np.all(np.isfinite(vals), axis=1)
    if not finite.all():
        k = int(np.argmin(finite))
        idx = np.unravel_index(k, spec.shape)
        raise ValidationError(
            f"initializer is non-finite at node {tuple(int(i) for i in idx)} (x={pts[k].tolist()})")
    if isinstance(mask, str):
        mask = default_mask(spec, mask)
    return VectorField(spec, vals.reshape(spec.shape + (spec.m,)), mask)


def gradient(u: VectorField) -> np.ndarray:
    """Nodal gradient, shape spec.shape + (m, n).

    Central differences inside, second-order one-sided at the faces.
    """
    g = np.gradient(u.values, u.h, axis=tuple(range(u.n)), edge_order=2)
    return np.stack(g, axis=-1)


def laplacian(values: np.ndarray, h: float, n: int) -> np.ndarray:
    """(2n+1)-point Laplacian on interior nodes; faces set to zero."""
    out = np.zeros_like(values)
    inner = (slice(1, -1),) * n
    acc = -2.0 * n * values[inner]
    for ax in range(n):
        lo = [slice(1, -1)] * n
        hi = [slice(1, -1)] * n
        lo[ax] = slice(0, -2)
        hi[ax] = slice(2, None)
        acc = acc + values[tuple(lo)] + values[tuple(hi)]
    out[inner] = acc / (h * h)
    return out


@dataclass(frozen=True)
class BallFrame:
    """Ball B_r(x0)."""

    x0: tuple
    r: float

    def __init__(self, x0, r):
        object.__setattr__(self, "x0", tuple(float(c) for c in np.atleast_1d(x0)))
        object.__setattr__(self, "r", float(r))
        if not (np.isfinite(self.r) and self.r > 0):
            raise ValidationError(f"radius must be positive, got {r}")

    @property
    def center(self) -> np.ndarray:
        return np.array(self.x0)

    def check(self, spec: GridSpec | None = None, floor: bool = True) -> "BallFrame":
        """Raise unless the closed ball sits in the cube and r >= 4h."""
        if spec is None:
            return self
        if len(self.x0) != spec.n:
            raise ValidationError("frame dimension does not match grid")
        if np.any(np.abs(self.center) + self.r > spec.L * (1 + 1e-12)):
            raise DomainError(f"ball B_{self.r}({self.x0}) exceeds the cube [-{spec.L},{spec.L}]^{spec.n}")
        if floor and self.r < 4 * spec.h * (1 - 1e-12):
            raise ResolutionError(f"radius {self.r} below the resolution floor 4h = {4 * spec.h}")
        return self
