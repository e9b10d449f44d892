"""Sparse nonnegative fields on Z^d.

A ``SiteField`` is an immutable finite map from integer sites to strictly
positive reals.  Zeros are never stored, so ``support`` is the true support.
"""

from __future__ import annotations

import cmath
import math
from typing import Iterable, Iterator, Mapping, Sequence, Tuple

import numpy as np

Site = Tuple[int, ...]


class DimensionError(ValueError):
    pass


class SiteField:
    __slots__ = ("_data", "_dim")

    def __init__(self, entries: Mapping[Sequence[int], float] | None = None, dim: int | None = None):
        data: dict[Site, float] = {}
        if entries:
            for site, value in entries.items():
                site = tuple(int(c) for c in site)
                if dim is None:
                    dim = len(site)
                elif len(site) != dim:
                    raise DimensionError(f"site {site} does not have dimension {dim}")
                value = float(value)
                if value < 0 or math.isnan(value):
                    raise ValueError(f"negative or NaN value {value} at {site}")
                if value > 0:
                    data[site] = data.get(site, 0.0) + value
        if dim is None or dim < 1:
            raise DimensionError("dimension must be a positive integer")
        self._data = data
        self._dim = dim

    # -- constructors -------------------------------------------------------

    @classmethod
    def delta(cls, dim: int, site: Sequence[int] | None = None, value: float = 1.0) -> "SiteField":
        site = tuple(site) if site is not None else (0,) * dim
        return cls({site: value}, dim)

    @classmethod
    def zero(cls, dim: int) -> "SiteField":
        return cls(None, dim)

    @classmethod
    def box(cls, lo: Sequence[int], hi: Sequence[int], value: float = 1.0) -> "SiteField":
        """Constant ``value`` on the box lo <= x <= hi (inclusive)."""
        ranges = [range(a, b + 1) for a, b in zip(lo, hi)]
        grid = np.stack(np.meshgrid(*ranges, indexing="ij"), -1).reshape(-1, len(lo))
        return cls({tuple(s): value for s in grid.tolist()}, len(lo))

    @classmethod
    def from_arrays(cls, coords: np.ndarray, values: np.ndarray, dim: int | None = None) -> "SiteField":
        coords = np.asarray(coords, dtype=np.int64)
        values = np.asarray(values, dtype=np.float64)
        if dim is None:
            dim = coords.shape[1]
        return cls(dict(zip(map(tuple, coords.tolist()), values.tolist())), dim)

    # -- mapping protocol ---------------------------------------------------

    @property
    def dim(self) -> int:
        return self._dim

    def __getitem__(self, site: Sequence[int]) -> float:
        return self._data.get(tuple(site), 0.0)

    def get(self, site: Sequence[int], default: float = 0.0) -> float:
        return self._data.get(tuple(site), default)

    def __contains__(self, site) -> bool:
        return tuple(site) in self._data

    def __len__(self) -> int:
        return len(self._data)

    def __iter__(self) -> Iterator[Site]:
        return iter(sorted(self._data))

    def items(self) -> list[tuple[Site, float]]:
        """Entries in lexicographic site order."""
        return sorted(self._data.items())

    def __bool__(self) -> bool:
        return bool(self._data)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SiteField):
            return NotImplemented
        return self._dim == other._dim and self._data == other._data

    def __hash__(self):
        return hash((self._dim, frozenset(self._data.items())))

    def __repr__(self) -> str:
        body = ", ".join(f"{s}: {v:.6g}" for s, v in self.items()[:6])
        more = ", ..." if len(self) > 6 else ""
        return f"SiteField(d={self._dim}, {{{body}{more}}})"

    # -- basic quantities ---------------------------------------------------

    @property
    def support(self) -> list[Site]:
        return sorted(self._data)

    def l1_norm(self) -> float:
        return math.fsum(self._data.values())

    def l2_norm_sq(self) -> float:
        return math.fsum(v * v for v in self._data.values())

    def max_value(self) -> float:
        return max(self._data.values(), default=0.0)

    def to_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """(coords, values) in lexicographic order."""
        items = self.items()
        coords = np.array([s for s, _ in items], dtype=np.int64).reshape(len(items), self._dim)
        values = np.array([v for _, v in items], dtype=np.float64)
        return coords, values

    def bounding_box(self) -> tuple[Site, Site]:
        if not self._data:
            raise ValueError("empty field has no bounding box")
        c = np.array(list(self._data), dtype=np.int64)
        return tuple(c.min(0).tolist()), tuple(c.max(0).tolist())

    # -- transformations ----------------------------------------------------

    def scale(self, factor: float) -> "SiteField":
        return SiteField({s: v * factor for s, v in self._data.items()}, self._dim)

    def shift(self, z: Sequence[int]) -> "SiteField":
        z = tuple(z)
        _check_site_dim(z, self._dim)
        return SiteField({tuple(a + b for a, b in zip(s, z)): v for s, v in self._data.items()}, self._dim)

    def reflect(self) -> "SiteField":
        """x -> -x."""
        return SiteField({tuple(-c for c in s): v for s, v in self._data.items()}, self._dim)

    def restrict(self, lo: Sequence[int], hi: Sequence[int]) -> "SiteField":
        keep = {s: v for s, v in self._data.items() if all(a <= c <= b for c, a, b in zip(s, lo, hi))}
        return SiteField(keep, self._dim)

    def add(self, other: "SiteField") -> "SiteField":
        _check_same_dim(self, other)
        out = dict(self._data)
        for s, v in other._data.items():
            out[s] = out.get(s, 0.0) + v
        return SiteField(out, self._dim)

    # -- canonical text -----------------------------------------------------

    def to_text(self) -> str:
        lines = [" ".join(str(c) for c in s) + " " + format(v, ".17g") for s, v in self.items()]
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_text(cls, text: str, dim: int | None = None) -> "SiteField":
        entries = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if dim is None:
                dim = len(parts) - 1
            if len(parts) != dim + 1:
                raise ValueError(f"line {lineno}: expected {dim} coordinates and a value")
            entries[tuple(int(p) for p in parts[:-1])] = float(parts[-1])
        if dim is None:
            raise ValueError("cannot infer dimension from empty text; pass dim")
        return cls(entries, dim)


def _check_site_dim(site: Site, dim: int) -> None:
    if len(site) != dim:
        raise DimensionError(f"site {site} has dimension {len(site)}, expected {dim}")


def _check_same_dim(f: SiteField, g: SiteField) -> None:
    if f.dim != g.dim:
        raise DimensionError(f"dimension mismatch: {f.dim} vs {g.dim}")


def convolve(f: SiteField, g: SiteField) -> SiteField:
    """(f*g)_x = sum_y f_{x-y} g_y."""
    _check_same_dim(f, g)
    small, big = (f, g) if len(f) <= len(g) else (g, f)
    out: dict[Site, float] = {}
    big_items = big._data.items()
    for s, u in small.items():
        for t, v in big_items:
            x = tuple(a + b for a, b in zip(s, t))
            out[x] = out.get(x, 0.0) + u * v
    return SiteField(out, f.dim)


def convolve_power(f: SiteField, n: int, init: SiteField | None = None) -> SiteField:
    """init * f^{*n}; init defaults to the unit mass at the origin."""
    out = init if init is not None else SiteField.delta(f.dim)
    for _ in range(n):
        out = convolve(out, f)
    return out


def fourier_eval(f: SiteField, theta: Sequence[float]) -> complex:
    """sum_x f_x exp(i x.theta)."""
    theta = tuple(float(t) for t in theta)
    _check_site_dim(theta, f.dim)
    return sum((v * cmath.exp(1j * sum(c * t for c, t in zip(s, theta))) for s, v in f.items()), 0j)


def fourier_grid(f: SiteField, thetas: np.ndarray) -> np.ndarray:
    """Vectorized Fourier transform; ``thetas`` has shape (d, ...)."""
    if thetas.shape[0] != f.dim:
        raise DimensionError("theta grid leading axis must equal the field dimension")
    out = np.zeros(thetas.shape[1:], dtype=np.complex128)
    for s, v in f.items():
        out += v * np.exp(1j * np.tensordot(np.asarray(s, dtype=float), thetas, axes=1))
    return out


def l1_ball(dim: int, radius: int) -> list[Site]:
    """Sites with |x|_1 <= radius, lexicographic."""
    rng = range(-radius, radius + 1)
    grid = np.stack(np.meshgrid(*([rng] * dim), indexing="ij"), -1).reshape(-1, dim)
    grid = grid[np.abs(grid).sum(1) <= radius]
    return [tuple(s) for s in grid.tolist()]


def l1(site: Iterable[int]) -> int:
    return sum(abs(c) for c in site)
