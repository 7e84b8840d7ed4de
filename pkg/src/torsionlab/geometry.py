"""Rasterized planar domains.

A domain is represented on a cell-centred uniform grid: cell ``(i, j)`` has
centre ``(x0 + (i + 1/2) h, y0 + (j + 1/2) h)`` and belongs to the open set
iff its centre does.  Arrays are indexed ``[i, j]`` (x first).  Every mask
keeps at least one exterior cell along the grid frame so that Dirichlet
neighbours always exist inside the array.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import ClassVar, Optional, Sequence

import numpy as np
from scipy import ndimage

from .errors import BadSpec, EmptyRaster, GridMismatch

_FOUR = ndimage.generate_binary_structure(2, 1)
_EIGHT = ndimage.generate_binary_structure(2, 2)


@dataclass(frozen=True)
class GridSpec:
    x0: float
    y0: float
    h: float
    nx: int
    ny: int

    def __post_init__(self):
        if not self.h > 0:
            raise BadSpec(f"grid spacing must be positive, got {self.h}")
        if self.nx < 1 or self.ny < 1:
            raise BadSpec(f"grid needs at least one cell, got {self.nx}x{self.ny}")

    @property
    def shape(self):
        return (self.nx, self.ny)

    def centers(self):
        """Return the ``(X, Y)`` arrays of cell centres, each of shape ``(nx, ny)``."""
        xs = self.x0 + (np.arange(self.nx) + 0.5) * self.h
        ys = self.y0 + (np.arange(self.ny) + 0.5) * self.h
        return np.meshgrid(xs, ys, indexing="ij")

    def center(self, cell):
        i, j = cell
        return (self.x0 + (i + 0.5) * self.h, self.y0 + (j + 0.5) * self.h)

    def cell_of(self, x, y):
        """Index of the cell containing the point ``(x, y)``."""
        return (int(math.floor((x - self.x0) / self.h)),
                int(math.floor((y - self.y0) / self.h)))

    def to_dict(self):
        return {"x0": self.x0, "y0": self.y0, "h": self.h, "nx": self.nx, "ny": self.ny}


def check_same_grid(a: GridSpec, b: GridSpec):
    if a != b:
        raise GridMismatch(f"grids differ: {a} vs {b}")


# --------------------------------------------------------------------------
# Domain specifications
# --------------------------------------------------------------------------

class DomainSpec:
    """Base class of the parametric domain families.

    Subclasses provide ``contains`` (vectorised, strict: the sets are open),
    ``bbox`` and ``scaled``.
    """

    kind: ClassVar[str] = ""

    def validate(self):
        for name, value in self._lengths().items():
            if not (isinstance(value, (int, float)) and value > 0 and math.isfinite(value)):
                raise BadSpec(f"{self.kind}: {name} must be a positive length, got {value!r}")

    def _lengths(self):
        return {}

    def contains(self, x, y):
        raise NotImplementedError

    def bbox(self):
        raise NotImplementedError

    def scaled(self, s):
        raise NotImplementedError

    @property
    def label(self):
        return self.kind

    def to_dict(self):
        out = {"kind": self.kind}
        out.update({k: v for k, v in self.__dict__.items()})
        return out


@dataclass(frozen=True)
class Disk(DomainSpec):
    R: float = 1.0
    kind: ClassVar[str] = "disk"

    def _lengths(self):
        return {"R": self.R}

    def contains(self, x, y):
        return x * x + y * y < self.R * self.R

    def bbox(self):
        return (-self.R, -self.R, self.R, self.R)

    def scaled(self, s):
        return Disk(self.R * s)


@dataclass(frozen=True)
class Rectangle(DomainSpec):
    """Open rectangle ``(0, a) x (0, b)``."""

    a: float = 1.0
    b: float = 1.0
    kind: ClassVar[str] = "rectangle"

    def _lengths(self):
        return {"a": self.a, "b": self.b}

    def contains(self, x, y):
        return (x > 0) & (x < self.a) & (y > 0) & (y < self.b)

    def bbox(self):
        return (0.0, 0.0, self.a, self.b)

    def scaled(self, s):
        return Rectangle(self.a * s, self.b * s)


@dataclass(frozen=True)
class LShape(DomainSpec):
    """Rectangle ``(0, a) x (0, b)`` with the square ``[a-notch, a] x [b-notch, b]`` removed.

    The re-entrant corner sits at ``(a - notch, b - notch)``.
    """

    a: float = 1.0
    b: float = 1.0
    notch: float = 0.5
    kind: ClassVar[str] = "l_shape"

    def _lengths(self):
        return {"a": self.a, "b": self.b, "notch": self.notch}

    def validate(self):
        super().validate()
        if self.notch >= min(self.a, self.b):
            raise BadSpec("l_shape: notch must be smaller than both sides")

    @property
    def corner(self):
        return (self.a - self.notch, self.b - self.notch)

    def contains(self, x, y):
        rect = (x > 0) & (x < self.a) & (y > 0) & (y < self.b)
        cx, cy = self.corner
        return rect & ~((x >= cx) & (y >= cy))

    def bbox(self):
        return (0.0, 0.0, self.a, self.b)

    def scaled(self, s):
        return LShape(self.a * s, self.b * s, self.notch * s)


@dataclass(frozen=True)
class Annulus(DomainSpec):
    r_in: float = 0.5
    r_out: float = 1.0
    kind: ClassVar[str] = "annulus"

    def _lengths(self):
        return {"r_in": self.r_in, "r_out": self.r_out}

    def validate(self):
        super().validate()
        if self.r_in >= self.r_out:
            raise BadSpec("annulus: r_in must be smaller than r_out")

    def contains(self, x, y):
        r2 = x * x + y * y
        return (r2 > self.r_in ** 2) & (r2 < self.r_out ** 2)

    def bbox(self):
        return (-self.r_out, -self.r_out, self.r_out, self.r_out)

    def scaled(self, s):
        return Annulus(self.r_in * s, self.r_out * s)


@dataclass(frozen=True)
class PuncturedSquare(DomainSpec):
    """Unit square with ``N*N`` closed discs of radius ``rho`` removed.

    Hole centres sit on the lattice ``((2k-1)/(2N), (2l-1)/(2N))``.  ``side``
    rescales the whole picture (default: unit square).
    """

    N: int = 3
    rho: float = 0.05
    side: float = 1.0
    kind: ClassVar[str] = "punctured_square"

    def validate(self):
        if not (isinstance(self.N, (int, np.integer)) and self.N >= 1):
            raise BadSpec(f"punctured_square: N must be a positive integer, got {self.N!r}")
        if not (self.rho > 0 and self.side > 0):
            raise BadSpec("punctured_square: rho and side must be positive")
        if self.rho >= self.side / (2 * self.N):
            raise BadSpec("punctured_square: rho must be < side/(2N) so holes are disjoint")

    def hole_centers(self):
        t = (2 * np.arange(1, self.N + 1) - 1) / (2 * self.N) * self.side
        return [(float(a), float(b)) for a in t for b in t]

    def contains(self, x, y):
        out = (x > 0) & (x < self.side) & (y > 0) & (y < self.side)
        for cx, cy in self.hole_centers():
            out &= (x - cx) ** 2 + (y - cy) ** 2 > self.rho ** 2
        return out

    def bbox(self):
        return (0.0, 0.0, self.side, self.side)

    def scaled(self, s):
        return PuncturedSquare(self.N, self.rho * s, self.side * s)

    @property
    def label(self):
        return f"punctured_square_N{self.N}_rho{self.rho:g}"


@dataclass(frozen=True)
class Dumbbell(DomainSpec):
    """``n`` discs of radius ``R`` in a row, joined by straight tubes.

    Disc centres are ``(k (2R + tube_len), 0)``; consecutive centres are
    joined by the open rectangle of width ``tube_w`` spanning centre to centre.
    """

    n: int = 2
    R: float = 1.0
    tube_w: float = 0.1
    tube_len: float = 0.5
    kind: ClassVar[str] = "dumbbell"

    def validate(self):
        if not (isinstance(self.n, (int, np.integer)) and self.n >= 1):
            raise BadSpec(f"dumbbell: n must be a positive integer, got {self.n!r}")
        for name in ("R", "tube_w", "tube_len"):
            if not getattr(self, name) > 0:
                raise BadSpec(f"dumbbell: {name} must be positive")
        if self.tube_w >= 2 * self.R:
            raise BadSpec("dumbbell: tube_w must be smaller than 2R")

    @property
    def pitch(self):
        return 2 * self.R + self.tube_len

    def contains(self, x, y):
        out = np.zeros(np.broadcast(x, y).shape, dtype=bool)
        for k in range(self.n):
            cx = k * self.pitch
            out |= (x - cx) ** 2 + y ** 2 < self.R ** 2
        half = self.tube_w / 2
        for k in range(self.n - 1):
            out |= (x > k * self.pitch) & (x < (k + 1) * self.pitch) & (np.abs(y) < half)
        return out

    def bbox(self):
        return (-self.R, -self.R, (self.n - 1) * self.pitch + self.R, self.R)

    def scaled(self, s):
        return Dumbbell(self.n, self.R * s, self.tube_w * s, self.tube_len * s)

    @property
    def label(self):
        return f"dumbbell_n{self.n}"


@dataclass(frozen=True)
class Polygon(DomainSpec):
    vertices: tuple = ()
    kind: ClassVar[str] = "polygon"

    def __post_init__(self):
        object.__setattr__(self, "vertices", tuple((float(a), float(b)) for a, b in self.vertices))

    def validate(self):
        if len(self.vertices) < 3:
            raise BadSpec("polygon: need at least 3 vertices")

    def contains(self, x, y):
        # even-odd ray casting towards +x
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        out = np.zeros(np.broadcast(x, y).shape, dtype=bool)
        vs = self.vertices
        for (xa, ya), (xb, yb) in zip(vs, vs[1:] + vs[:1]):
            if ya == yb:
                continue
            crosses = (ya > y) != (yb > y)
            xint = xa + (y - ya) * (xb - xa) / (yb - ya)
            out ^= crosses & (x < xint)
        return out

    def bbox(self):
        xs = [v[0] for v in self.vertices]
        ys = [v[1] for v in self.vertices]
        return (min(xs), min(ys), max(xs), max(ys))

    def scaled(self, s):
        return Polygon(tuple((a * s, b * s) for a, b in self.vertices))

    def to_dict(self):
        return {"kind": self.kind, "vertices": [list(v) for v in self.vertices]}


@dataclass(frozen=True)
class Bitmap(DomainSpec):
    """PGM image; pixel value 255 is inside, one pixel per cell."""

    path: str = ""
    x0: float = 0.0
    y0: float = 0.0
    kind: ClassVar[str] = "bitmap"

    def validate(self):
        if not Path(self.path).is_file():
            raise BadSpec(f"bitmap: no such file {self.path!r}")

    def scaled(self, s):
        return Bitmap(self.path, self.x0 * s, self.y0 * s)

    @property
    def label(self):
        return Path(self.path).stem


SPEC_TYPES = {cls.kind: cls for cls in
              (Disk, Rectangle, LShape, Annulus, PuncturedSquare, Dumbbell, Polygon, Bitmap)}


def spec_from_dict(data: dict) -> DomainSpec:
    data = dict(data)
    try:
        cls = SPEC_TYPES[data.pop("kind")]
    except KeyError as exc:
        raise BadSpec(f"unknown or missing domain kind in {data!r}") from exc
    if cls is Polygon:
        return Polygon(tuple(tuple(v) for v in data["vertices"]))
    try:
        return cls(**data)
    except TypeError as exc:
        raise BadSpec(str(exc)) from exc


# --------------------------------------------------------------------------
# Masks
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DomainMask:
    grid: GridSpec
    inside: np.ndarray
    name: str = "domain"
    declared_simply_connected: Optional[bool] = None

    def __post_init__(self):
        inside = np.array(self.inside, dtype=bool)
        if inside.shape != self.grid.shape:
            raise GridMismatch(f"mask shape {inside.shape} does not match grid {self.grid.shape}")
        if not inside.any():
            raise EmptyRaster(f"{self.name}: no inside cells")
        if inside[0, :].any() or inside[-1, :].any() or inside[:, 0].any() or inside[:, -1].any():
            raise BadSpec(f"{self.name}: inside cells touch the grid frame")
        inside.setflags(write=False)
        object.__setattr__(self, "inside", inside)

    @property
    def h(self):
        return self.grid.h

    @property
    def n_inside(self):
        return int(self.inside.sum())

    def cells(self):
        """Inside cells as an ``(n, 2)`` integer array in ``(i, j)`` order."""
        return np.argwhere(self.inside)

    def is_inside(self, cell):
        i, j = cell
        return 0 <= i < self.grid.nx and 0 <= j < self.grid.ny and bool(self.inside[i, j])

    def intersect(self, other: np.ndarray, name=None):
        return DomainMask(self.grid, self.inside & other, name or self.name)


def _grid_for_bbox(bbox, h, pad=1):
    xmin, ymin, xmax, ymax = bbox
    i0 = math.floor(xmin / h) - pad
    j0 = math.floor(ymin / h) - pad
    i1 = math.ceil(xmax / h) + pad
    j1 = math.ceil(ymax / h) + pad
    return GridSpec(i0 * h, j0 * h, h, i1 - i0, j1 - j0)


def rasterize(spec: DomainSpec, h: float, name: Optional[str] = None) -> DomainMask:
    """Rasterize ``spec`` on a cell-centred grid of spacing ``h``.

    The grid origin sits on a multiple of ``h`` so that axis-aligned edges at
    multiples of ``h`` are reproduced exactly.
    """
    if not h > 0:
        raise BadSpec(f"h must be positive, got {h}")
    spec.validate()
    name = name or spec.label
    if isinstance(spec, Bitmap):
        return _bitmap_mask(spec, h, name)
    grid = _grid_for_bbox(spec.bbox(), h)
    X, Y = grid.centers()
    inside = np.asarray(spec.contains(X, Y), dtype=bool)
    if not inside.any():
        raise EmptyRaster(f"{name}: no cell centre lies inside at h={h}")
    declared = None
    if isinstance(spec, (Disk, Rectangle, LShape, Polygon, Dumbbell)):
        declared = True
    elif isinstance(spec, (Annulus, PuncturedSquare)):
        declared = False
    return DomainMask(grid, inside, name, declared)


def measure(mask: DomainMask) -> float:
    return mask.h ** 2 * mask.n_inside


# --------------------------------------------------------------------------
# Distance to the boundary
# --------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DistanceField:
    grid: GridSpec
    d: np.ndarray

    def at(self, cell):
        return float(self.d[cell[0], cell[1]])


def distance_field(mask: DomainMask) -> DistanceField:
    """Distance from each inside centre to the nearest outside centre, minus ``h/2``.

    Values are clamped below at ``h/4`` so an inside cell never reports zero.
    Outside cells carry 0.
    """
    h = mask.h
    raw = ndimage.distance_transform_edt(mask.inside) * h
    d = np.where(mask.inside, np.maximum(raw - h / 2, h / 4), 0.0)
    d.setflags(write=False)
    return DistanceField(mask.grid, d)


def argmax_cell(values: np.ndarray, where: np.ndarray):
    """Cell of the maximum of ``values`` over ``where``; ties go to lowest ``(j, i)``."""
    masked = np.where(where, values, -np.inf)
    flat = np.argmax(masked.T)  # row-major over (j, i)
    j, i = np.unravel_index(flat, masked.T.shape)
    return (int(i), int(j))


def inradius(field: DistanceField):
    """Return ``(r, cell)``: the largest distance value and where it occurs."""
    cell = argmax_cell(field.d, field.d > 0)
    return field.at(cell), cell


# --------------------------------------------------------------------------
# Topology
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TopologyReport:
    component_count: int
    hole_count: int
    simply_connected: bool

    def to_dict(self):
        return {"component_count": self.component_count, "hole_count": self.hole_count,
                "simply_connected": self.simply_connected}


def topology_check(mask: DomainMask) -> TopologyReport:
    """Count 4-connected inside components and 8-connected bounded holes."""
    _, ncomp = ndimage.label(mask.inside, structure=_FOUR)
    outside_labels, nout = ndimage.label(~mask.inside, structure=_EIGHT)
    frame = np.concatenate([outside_labels[0, :], outside_labels[-1, :],
                            outside_labels[:, 0], outside_labels[:, -1]])
    touching = set(np.unique(frame[frame > 0]).tolist())
    holes = nout - len(touching)
    return TopologyReport(int(ncomp), int(holes), bool(ncomp == 1 and holes == 0))


# --------------------------------------------------------------------------
# PGM interchange
# --------------------------------------------------------------------------

def _pgm_tokens(data: bytes, count: int):
    """Parse ``count`` whitespace-separated header tokens, skipping comments."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while data[pos:pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos])
    return tokens, pos + 1


def read_pgm(path) -> np.ndarray:
    """Read a binary (P5, maxval 255) PGM; returns a ``(nx, ny)`` boolean array."""
    data = Path(path).read_bytes()
    tokens, offset = _pgm_tokens(data, 4)
    if tokens[0] != b"P5":
        raise BadSpec(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise BadSpec(f"{path}: maxval must be 255, got {maxval}")
    pixels = np.frombuffer(data, dtype=np.uint8, count=width * height, offset=offset)
    img = pixels.reshape(height, width)
    bad = (img != 0) & (img != 255)
    if bad.any():
        raise BadSpec(f"{path}: pixel values must be 0 or 255")
    # row 0 is the top of the picture
    return (img[::-1, :] == 255).T.copy()


def write_pgm(mask: DomainMask, path):
    img = np.where(mask.inside.T[::-1, :], 255, 0).astype(np.uint8)
    height, width = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def _bitmap_mask(spec: Bitmap, h: float, name: str) -> DomainMask:
    inside = read_pgm(spec.path)
    x0, y0 = spec.x0, spec.y0
    frame = np.concatenate([inside[0, :], inside[-1, :], inside[:, 0], inside[:, -1]])
    if frame.any():
        inside = np.pad(inside, 1)
        x0, y0 = x0 - h, y0 - h
    if not inside.any():
        raise EmptyRaster(f"{name}: bitmap has no inside pixel")
    grid = GridSpec(x0, y0, h, inside.shape[0], inside.shape[1])
    return DomainMask(grid, inside, name)
