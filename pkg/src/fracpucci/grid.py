"""Uniform cube lattices, grid functions and lattice measure queries.

A :class:`Domain` is the lattice ``h * Z^n`` restricted to the box
``[-E, E]^n``.  Geometry (balls, cubes) is decided at lattice points and
measures are cell counts times ``h^n``.  Cubes are half open,
``c - s/2 <= x < c + s/2`` per axis, so dyadic subcubes of ``Q_1`` tile
exactly.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional, Union

import numpy as np
from scipy import ndimage

from .errors import EmptyRegion

_EPS = 1e-9


@dataclass(frozen=True)
class Domain:
    n: int = 2
    h: float = 1.0 / 32
    half_extent: float = 8.0

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise ValueError(f"dimension must be an integer >= 2, got {self.n}")
        if self.n > 3:
            raise ValueError("only n = 2 and n = 3 are supported")
        if not self.h > 0:
            raise ValueError("mesh width must be positive")
        ratio = self.half_extent / self.h
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, ratio):
            raise ValueError("half_extent / h must be an integer")
        if self.half_extent < 3 + 2 * math.sqrt(self.n) - 1e-12:
            raise ValueError(
                f"half_extent must be >= 3 + 2 sqrt(n) = {3 + 2 * math.sqrt(self.n):.4f}"
            )

    @property
    def N(self) -> int:
        """Lattice points per axis."""
        return int(round(2 * self.half_extent / self.h)) + 1

    @property
    def shape(self) -> tuple:
        return (self.N,) * self.n

    @property
    def center_index(self) -> int:
        return self.N // 2

    @property
    def cell(self) -> float:
        return self.h**self.n

    @cached_property
    def coords(self) -> np.ndarray:
        return -self.half_extent + self.h * np.arange(self.N)

    @cached_property
    def points(self) -> np.ndarray:
        """Lattice coordinates, shape ``(n, N, ..., N)``."""
        pts = np.stack(np.meshgrid(*([self.coords] * self.n), indexing="ij"))
        pts.flags.writeable = False
        return pts

    @cached_property
    def radius(self) -> np.ndarray:
        r = np.sqrt(np.sum(self.points**2, axis=0))
        r.flags.writeable = False
        return r

    def index_of(self, x) -> tuple:
        """Index of the lattice point nearest to ``x``."""
        x = np.asarray(x, dtype=float)
        k = np.rint((x + self.half_extent) / self.h).astype(int)
        if np.any(k < 0) or np.any(k >= self.N):
            raise IndexError(f"point {x} is outside the box")
        return tuple(int(i) for i in k)

    def point(self, index) -> np.ndarray:
        return -self.half_extent + self.h * np.asarray(index, dtype=float)

    def ball(self, r: float, center=None) -> np.ndarray:
        """Mask of lattice points with ``|x - center| < r``."""
        if center is None:
            return self.radius < r - _EPS * self.h
        c = np.asarray(center, dtype=float).reshape((self.n,) + (1,) * self.n)
        return np.sqrt(np.sum((self.points - c) ** 2, axis=0)) < r - _EPS * self.h

    def cube(self, side: float, center=None) -> np.ndarray:
        """Mask of the half-open cube of side ``side`` centred at ``center``."""
        c = np.zeros(self.n) if center is None else np.asarray(center, dtype=float)
        c = c.reshape((self.n,) + (1,) * self.n)
        d = self.points - c
        tol = _EPS * self.h
        inside = (d >= -side / 2 - tol) & (d < side / 2 - tol)
        return np.all(inside, axis=0)

    def everything(self) -> np.ndarray:
        return np.ones(self.shape, dtype=bool)

    def measure(self, region) -> float:
        return float(np.count_nonzero(resolve_region(self, region))) * self.cell


Region = Union[None, np.ndarray, Callable[[np.ndarray], np.ndarray]]


def resolve_region(domain: Domain, region: Region) -> np.ndarray:
    if region is None:
        return domain.everything()
    if callable(region):
        mask = np.asarray(region(domain.points), dtype=bool)
    else:
        mask = np.asarray(region, dtype=bool)
    if mask.shape != domain.shape:
        raise ValueError(f"region mask has shape {mask.shape}, expected {domain.shape}")
    return mask


@dataclass(frozen=True)
class Exterior:
    """Value model for lattice points outside the box.

    ``kind == "constant"``: every exterior point takes ``value``.
    ``kind == "table"``: ``table`` holds values on the box padded by ``pad``
    cells on every side (its interior block is ignored); beyond the padding
    the constant ``value`` is used.
    """

    value: float = 0.0
    table: Optional[np.ndarray] = field(default=None, compare=False, repr=False)
    pad: int = 0

    @property
    def kind(self) -> str:
        return "constant" if self.table is None else "table"

    def shifted(self, c: float) -> "Exterior":
        table = None if self.table is None else self.table + c
        return Exterior(self.value + c, table, self.pad)

    def scaled(self, c: float) -> "Exterior":
        table = None if self.table is None else self.table * c
        return Exterior(self.value * c, table, self.pad)

    def describe(self) -> str:
        if self.kind == "constant":
            return f"constant:{self.value!r}"
        return f"table:pad={self.pad}:value={self.value!r}"


class GridFunction:
    """Real values on a :class:`Domain` plus an exterior model."""

    def __init__(self, domain: Domain, values, exterior: Exterior | None = None):
        values = np.array(values, dtype=float)
        if values.shape != domain.shape:
            raise ValueError(f"values have shape {values.shape}, expected {domain.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid values must be finite")
        exterior = Exterior() if exterior is None else exterior
        if exterior.table is not None:
            want = tuple(s + 2 * exterior.pad for s in domain.shape)
            if exterior.table.shape != want:
                raise ValueError(f"exterior table must have shape {want}")
            if not np.all(np.isfinite(exterior.table)):
                raise ValueError("exterior table must be finite")
        if not math.isfinite(exterior.value):
            raise ValueError("exterior value must be finite")
        values.flags.writeable = False
        self.domain = domain
        self.values = values
        self.exterior = exterior

    # construction -----------------------------------------------------
    @classmethod
    def from_callable(cls, domain: Domain, func, exterior: Exterior | None = None):
        """Sample ``func`` (taking coordinates of shape ``(n, ...)``) on the lattice."""
        return cls(domain, func(domain.points), exterior)

    @classmethod
    def constant(cls, domain: Domain, c: float, exterior_value: float | None = None):
        ext = Exterior(c if exterior_value is None else exterior_value)
        return cls(domain, np.full(domain.shape, float(c)), ext)

    def with_values(self, values, exterior: Exterior | None = None) -> "GridFunction":
        return GridFunction(self.domain, values, self.exterior if exterior is None else exterior)

    # arithmetic -------------------------------------------------------
    def __add__(self, other):
        if isinstance(other, GridFunction):
            if other.domain != self.domain:
                raise ValueError("domains differ")
            if self.exterior.kind != "constant" or other.exterior.kind != "constant":
                raise ValueError("sum of table exteriors is not supported")
            ext = Exterior(self.exterior.value + other.exterior.value)
            return GridFunction(self.domain, self.values + other.values, ext)
        c = float(other)
        return GridFunction(self.domain, self.values + c, self.exterior.shifted(c))

    __radd__ = __add__

    def __sub__(self, other):
        return self + (-other)

    def __neg__(self):
        return self * -1.0

    def __mul__(self, c):
        c = float(c)
        return GridFunction(self.domain, self.values * c, self.exterior.scaled(c))

    __rmul__ = __mul__

    def positive_part(self) -> "GridFunction":
        ext = self.exterior
        table = None if ext.table is None else np.maximum(ext.table, 0.0)
        return GridFunction(self.domain, np.maximum(self.values, 0.0),
                            Exterior(max(ext.value, 0.0), table, ext.pad))

    def negative_part(self) -> "GridFunction":
        """``u^- = max(-u, 0)``."""
        return (-self).positive_part()

    # queries ----------------------------------------------------------
    def sup_norm(self) -> float:
        m = float(np.max(np.abs(self.values)))
        m = max(m, abs(self.exterior.value))
        if self.exterior.table is not None:
            m = max(m, float(np.max(np.abs(self.exterior.table))))
        return m

    def extended(self, pad: int) -> np.ndarray:
        """Values on the box padded by ``pad`` cells, filled from the exterior model."""
        if pad == 0:
            return np.array(self.values)
        shape = tuple(s + 2 * pad for s in self.domain.shape)
        out = np.full(shape, self.exterior.value)
        ext = self.exterior
        if ext.table is not None:
            k = min(pad, ext.pad)
            src = tuple(slice(ext.pad - k, ext.table.shape[a] - ext.pad + k)
                        for a in range(self.domain.n))
            dst = tuple(slice(pad - k, shape[a] - pad + k) for a in range(self.domain.n))
            out[dst] = ext.table[src]
        inner = tuple(slice(pad, pad + s) for s in self.domain.shape)
        out[inner] = self.values
        return out

    def interpolate(self, x) -> np.ndarray:
        """Multilinear interpolation at points ``x`` of shape ``(m, n)``.

        Points outside the box are resolved through the exterior model
        (the table is interpolated inside its padding).
        """
        d = self.domain
        x = np.atleast_2d(np.asarray(x, dtype=float))
        pad = self.exterior.pad if self.exterior.table is not None else 1
        arr = self.extended(pad)
        idx = (x + d.half_extent) / d.h + pad
        out = ndimage.map_coordinates(arr, idx.T, order=1, mode="constant",
                                      cval=self.exterior.value)
        outside = np.any((idx < 0) | (idx > np.array(arr.shape) - 1), axis=1)
        out[outside] = self.exterior.value
        return out

    def __call__(self, x) -> np.ndarray:
        return self.interpolate(x)

    # serialization ----------------------------------------------------
    def to_csv(self, path=None) -> str:
        """Header ``n,h,E,exterior``, one metadata row, then row-major values.

        Floats are written with ``repr`` so the round trip is bit exact.
        A table exterior is appended after the values, flattened.
        """
        d = self.domain
        buf = io.StringIO()
        buf.write("n,h,E,exterior\n")
        buf.write(f"{d.n},{d.h!r},{d.half_extent!r},{self.exterior.describe()}\n")
        rows = self.values.reshape(-1, d.N)
        for row in rows:
            buf.write(",".join(repr(float(v)) for v in row))
            buf.write("\n")
        if self.exterior.table is not None:
            trows = self.exterior.table.reshape(-1, self.exterior.table.shape[-1])
            for row in trows:
                buf.write(",".join(repr(float(v)) for v in row))
                buf.write("\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, source) -> "GridFunction":
        if isinstance(source, str) and "\n" in source:
            text = source
        else:
            with open(source) as fh:
                text = fh.read()
        lines = text.strip("\n").split("\n")
        if lines[0].strip() != "n,h,E,exterior":
            raise ValueError("not a grid-function CSV")
        n_s, h_s, e_s, ext_s = lines[1].split(",", 3)
        domain = Domain(int(n_s), float(h_s), float(e_s))
        nrows = domain.N ** (domain.n - 1)
        vals = np.array([[float(v) for v in ln.split(",")] for ln in lines[2:2 + nrows]])
        vals = vals.reshape(domain.shape)
        if ext_s.startswith("constant:"):
            ext = Exterior(float(ext_s.split(":", 1)[1]))
        elif ext_s.startswith("table:"):
            parts = dict(p.split("=", 1) for p in ext_s.split(":")[1:])
            pad = int(parts["pad"])
            tshape = tuple(s + 2 * pad for s in domain.shape)
            trows = lines[2 + nrows:]
            table = np.array([[float(v) for v in ln.split(",")] for ln in trows]).reshape(tshape)
            ext = Exterior(float(parts["value"]), table, pad)
        else:
            raise ValueError(f"unknown exterior model {ext_s!r}")
        return cls(domain, vals, ext)

    def to_npz(self, path) -> None:
        ext = self.exterior
        np.savez(path, n=self.domain.n, h=self.domain.h, E=self.domain.half_extent,
                 values=self.values, ext_value=ext.value, ext_pad=ext.pad,
                 ext_table=np.zeros(0) if ext.table is None else ext.table)

    @classmethod
    def from_npz(cls, path) -> "GridFunction":
        z = np.load(path)
        domain = Domain(int(z["n"]), float(z["h"]), float(z["E"]))
        table = z["ext_table"] if z["ext_table"].size else None
        return cls(domain, z["values"], Exterior(float(z["ext_value"]), table, int(z["ext_pad"])))

    def __repr__(self):
        d = self.domain
        return f"GridFunction(n={d.n}, h={d.h}, E={d.half_extent}, exterior={self.exterior.describe()})"


# ---------------------------------------------------------------------------
# lattice norms and measures

def ln_norm(f: GridFunction, region: Region = None, p: float | None = None) -> float:
    """Discrete L^p norm over ``region``; ``p`` defaults to the dimension."""
    d = f.domain
    p = d.n if p is None else p
    mask = resolve_region(d, region)
    if not mask.any():
        return 0.0
    vals = np.abs(f.values[mask])
    m = vals.max()
    if m == 0:
        return 0.0
    # factor out the max so large spikes do not overflow
    return float(m * (np.sum((vals / m) ** p) * d.cell) ** (1.0 / p))


def linf_norm(f: GridFunction, region: Region = None) -> float:
    mask = resolve_region(f.domain, region)
    if not mask.any():
        return 0.0
    return float(np.max(np.abs(f.values[mask])))


def region_inf(f: GridFunction, region: Region = None) -> float:
    mask = resolve_region(f.domain, region)
    if not mask.any():
        raise EmptyRegion("infimum over an empty region")
    return float(np.min(f.values[mask]))


def argmin_in(f: GridFunction, region: Region = None) -> tuple:
    """Lattice index of the (first) minimiser of ``f`` over ``region``."""
    mask = resolve_region(f.domain, region)
    if not mask.any():
        raise EmptyRegion("argmin over an empty region")
    vals = np.where(mask, f.values, np.inf)
    return tuple(int(i) for i in np.unravel_index(np.argmin(vals), vals.shape))


def superlevel_measure(f: GridFunction, threshold: float, region: Region = None) -> float:
    """``h^n * #{x in region : f(x) > threshold}``."""
    mask = resolve_region(f.domain, region)
    return float(np.count_nonzero(mask & (f.values > threshold))) * f.domain.cell


def sublevel_measure(f: GridFunction, threshold: float, region: Region = None) -> float:
    """``h^n * #{x in region : f(x) <= threshold}``."""
    mask = resolve_region(f.domain, region)
    return float(np.count_nonzero(mask & (f.values <= threshold))) * f.domain.cell


def level_measures(f: GridFunction, threshold: float, region: Region = None) -> tuple:
    """``(sublevel, superlevel)`` measures; they add up to the region's measure."""
    return (sublevel_measure(f, threshold, region), superlevel_measure(f, threshold, region))
