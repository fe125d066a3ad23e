"""Cantilever geometries on a structured element grid and their image encodings.

Axis convention used throughout: planes are indexed ``(row, col)`` with row 0
at the top of the domain and col 0 at the clamped wall. Physical ``x`` runs
along the columns and physical ``y`` points *up*, so a positive ``qy`` pushes
the free end towards row 0.
"""

from __future__ import annotations

import configparser
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy import ndimage

from stresslab.errors import CatalogParseError, FloatingMaterial, InvalidParameters, NoLoadSurface
from stresslab.material import Material

TWO_PI = 2.0 * math.pi

FAMILIES = (
    "rectangle",
    "trapezoid",
    "curved-trapezoid",
    "rectangle-hole",
    "trapezoid-hole",
    "curved-trapezoid-hole",
)
HOLE_SHAPES = ("rectangle", "ellipse", "diamond")

DEFAULT_CATALOG = Path(__file__).parent / "data" / "default_catalog.ini"


@dataclass(frozen=True)
class GridSpec:
    height: int = 24
    width: int = 32
    element_size: float = 1.0

    def __post_init__(self):
        if self.height < 2 or self.width < 2:
            raise InvalidParameters(f"grid must be at least 2x2, got {self.height}x{self.width}")
        if not self.element_size > 0:
            raise InvalidParameters("element_size must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def n_nodes(self) -> int:
        return (self.height + 1) * (self.width + 1)


def _check_mask(cells: np.ndarray) -> None:
    if cells.ndim != 2:
        raise InvalidParameters("mask must be two-dimensional")
    if not np.isin(cells, (0, 1)).all():
        raise InvalidParameters("mask entries must be 0 or 1")
    if not cells[:, 0].any():
        raise InvalidParameters("no solid cell in the wall column")
    if not cells[:, -1].any():
        raise NoLoadSurface("no solid cell in the free-end column")
    _, n = ndimage.label(cells)  # default structure is 4-connectivity
    if n != 1:
        raise FloatingMaterial(f"solid region has {n} 4-connected components")


@dataclass(frozen=True, eq=False)
class GeometryMask:
    """Validated binary occupancy grid (1 = solid). The array is read-only."""

    cells: np.ndarray

    def __post_init__(self):
        cells = np.array(self.cells, dtype=np.uint8)
        _check_mask(cells)
        cells.setflags(write=False)
        object.__setattr__(self, "cells", cells)

    @property
    def shape(self) -> tuple[int, int]:
        return self.cells.shape

    def load_rows(self) -> np.ndarray:
        """Rows of the solid cells in the rightmost column (the loaded free end)."""
        return np.flatnonzero(self.cells[:, -1])

    def flipud(self) -> GeometryMask:
        return GeometryMask(self.cells[::-1].copy())

    def __eq__(self, other):
        return isinstance(other, GeometryMask) and np.array_equal(self.cells, other.cells)

    __hash__ = None


@dataclass(frozen=True)
class Hole:
    """Hole cut into the outer shape, in grid units (x from the wall, y from the top)."""

    shape: str
    center_x: float
    center_y: float
    width: float
    height: float

    def contains(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        dx = (x - self.center_x) / (self.width / 2.0)
        dy = (y - self.center_y) / (self.height / 2.0)
        if self.shape == "rectangle":
            return (np.abs(dx) < 1.0) & (np.abs(dy) < 1.0)
        if self.shape == "ellipse":
            return dx * dx + dy * dy < 1.0
        if self.shape == "diamond":
            return np.abs(dx) + np.abs(dy) < 1.0
        raise InvalidParameters(f"unknown hole shape {self.shape!r}")


@dataclass(frozen=True)
class GeometryFamily:
    """Parameterized outer contour plus an optional hole.

    The top edge sits ``top_left`` rows below the top of the domain at the wall
    and ``top_right`` rows below it at the free end; the bottom edge likewise
    sits ``bottom_left``/``bottom_right`` rows above the bottom. ``sagitta``
    bows both edges towards the centre line (negative values bow outwards).
    A cell is solid when its centroid lies strictly inside the contour.
    """

    family: str
    top_left: float = 0.0
    top_right: float = 0.0
    bottom_left: float = 0.0
    bottom_right: float = 0.0
    sagitta: float = 0.0
    hole: Hole | None = None
    name: str = ""

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidParameters(f"unknown geometry family {self.family!r}")
        has_hole = self.family.endswith("-hole")
        if has_hole and self.hole is None:
            raise InvalidParameters(f"family {self.family} requires hole parameters")
        if not has_hole and self.hole is not None:
            raise InvalidParameters(f"family {self.family} does not take a hole")
        base = self.family.removesuffix("-hole")
        if base == "rectangle" and (self.top_left != self.top_right or self.bottom_left != self.bottom_right):
            raise InvalidParameters("rectangle edges must be parallel")
        if base != "curved-trapezoid" and self.sagitta != 0.0:
            raise InvalidParameters(f"family {self.family} takes no sagitta")
        if min(self.top_left, self.top_right, self.bottom_left, self.bottom_right) < 0:
            raise InvalidParameters("edge offsets must be non-negative")
        if self.hole is not None and self.hole.shape not in HOLE_SHAPES:
            raise InvalidParameters(f"unknown hole shape {self.hole.shape!r}")

    def edges(self, x: np.ndarray, width: float, height: float) -> tuple[np.ndarray, np.ndarray]:
        """Top and bottom contour (measured downward from the top) at positions ``x``."""
        t = x / width
        top = self.top_left + (self.top_right - self.top_left) * t
        bottom = height - (self.bottom_left + (self.bottom_right - self.bottom_left) * t)
        bow = 4.0 * self.sagitta * t * (1.0 - t)
        return np.clip(top + bow, 0.0, height), np.clip(bottom - bow, 0.0, height)


def build_geometry(family: GeometryFamily, grid: GridSpec = GridSpec()) -> GeometryMask:
    """Rasterize a geometry family by centroid sampling."""
    h, w = grid.height, grid.width
    yc = np.arange(h)[:, None] + 0.5
    xc = np.arange(w)[None, :] + 0.5
    top, bottom = family.edges(xc, w, h)
    outer = (yc > top) & (yc < bottom)
    if not outer[:, 0].any():
        raise InvalidParameters("taper removes the wall attachment column")
    if not outer[:, -1].any():
        raise InvalidParameters("taper removes the free-end column")
    rows = np.flatnonzero(outer[:, -1])
    if rows[-1] - rows[0] + 1 != rows.size:
        raise InvalidParameters("free-end column is not contiguous")
    cells = outer.copy()
    if family.hole is not None:
        hole = family.hole.contains(np.broadcast_to(xc, (h, w)), np.broadcast_to(yc, (h, w)))
        if not hole.any():
            raise InvalidParameters("hole is smaller than one cell")
        # a hole must keep at least one solid cell between itself and the outside
        padded = np.pad(outer, 1, constant_values=False)
        ring = ndimage.binary_erosion(padded, structure=np.ones((3, 3), bool))[1:-1, 1:-1]
        if (hole & ~ring).any():
            raise InvalidParameters("hole overflows the outer boundary")
        cells &= ~hole
    try:
        return GeometryMask(cells.astype(np.uint8))
    except FloatingMaterial as exc:
        raise InvalidParameters(f"geometry {family.name or family.family} is disconnected") from exc


@dataclass(frozen=True)
class LoadSpec:
    """Resultant free-end force ``q`` (N) acting in direction ``theta`` (rad)."""

    q: float
    theta: float = 0.0

    def __post_init__(self):
        if not (np.isfinite(self.q) and self.q >= 0):
            raise InvalidParameters(f"q must be finite and >= 0, got {self.q}")
        if not (0.0 <= self.theta < TWO_PI):
            raise InvalidParameters(f"theta must lie in [0, 2pi), got {self.theta}")

    @property
    def qx(self) -> float:
        return self.q * math.cos(self.theta)

    @property
    def qy(self) -> float:
        return self.q * math.sin(self.theta)

    def mirrored(self) -> LoadSpec:
        """Load reflected about the horizontal axis (theta -> -theta)."""
        return LoadSpec(self.q, (TWO_PI - self.theta) % TWO_PI if self.theta else 0.0)


@dataclass(frozen=True)
class ProblemSpec:
    mask: GeometryMask
    load: LoadSpec
    material: Material = Material()
    grid: GridSpec = GridSpec()
    body_force: tuple[float, float] = field(default=(0.0, 0.0), init=False)

    def __post_init__(self):
        if self.mask.shape != self.grid.shape:
            raise InvalidParameters(f"mask shape {self.mask.shape} does not match grid {self.grid.shape}")

    def mirrored(self) -> ProblemSpec:
        return replace(self, mask=self.mask.flipud(), load=self.load.mirrored())


def rasterize_single_channel(p: ProblemSpec) -> np.ndarray:
    """0 = void, 1 = solid, 2 = loaded free-end cell."""
    img = p.mask.cells.astype(np.float32)
    img[p.mask.load_rows(), -1] = 2.0
    return img


def rasterize_multi_channel(p: ProblemSpec) -> np.ndarray:
    """Five planes: geometry, load-x, load-y, bc-x, bc-y (float32, shape 5 x H x W)."""
    rows = p.mask.load_rows()
    k = rows.size
    if k == 0:
        raise NoLoadSurface("free-end column has no solid cells")
    h, w = p.mask.shape
    out = np.zeros((5, h, w), dtype=np.float64)
    out[0] = p.mask.cells
    out[1, rows, -1] = p.load.qx / k
    out[2, rows, -1] = p.load.qy / k
    fixed = np.flatnonzero(p.mask.cells[:, 0])
    out[3, fixed, 0] = -1.0
    out[4, fixed, 0] = -1.0
    return out.astype(np.float32)


def node_index(i, j, height: int):
    """Global node number of node row ``i`` and node column ``j``.

    Nodes are numbered down each column so the stiffness bandwidth is set by
    the (short) column height.
    """
    return j * (height + 1) + i


def distribute_load(mask: GeometryMask, load: LoadSpec) -> list[tuple[int, float, float]]:
    """Lump the resultant onto the right-edge nodes of the loaded cells.

    Each loaded cell carries an equal share ``q / k``, split half-and-half
    between the two nodes of its right edge. Entries are sorted by node.
    """
    rows = mask.load_rows()
    k = rows.size
    if k == 0:
        raise NoLoadSurface("free-end column has no solid cells")
    h, w = mask.shape
    fx = load.qx / k / 2.0
    fy = load.qy / k / 2.0
    acc: dict[int, list[float]] = {}
    for r in rows:
        for i in (r, r + 1):
            n = node_index(int(i), w, h)
            slot = acc.setdefault(n, [0.0, 0.0])
            slot[0] += fx
            slot[1] += fy
    return [(n, f[0], f[1]) for n, f in sorted(acc.items())]


# -- catalog -----------------------------------------------------------------

_FLOAT_KEYS = ("top_left", "top_right", "bottom_left", "bottom_right", "sagitta")
_HOLE_KEYS = ("hole_shape", "hole_x", "hole_y", "hole_width", "hole_height")


@dataclass(frozen=True)
class CatalogEntry:
    id: str
    family: GeometryFamily

    def mask(self, grid: GridSpec = GridSpec()) -> GeometryMask:
        return build_geometry(self.family, grid)


def _parse_entry(name: str, section) -> CatalogEntry:
    known = {"family", "top", "bottom", *_FLOAT_KEYS, *_HOLE_KEYS}
    unknown = set(section) - known
    if unknown:
        raise CatalogParseError(f"[{name}] unknown keys: {sorted(unknown)}")
    if "family" not in section:
        raise CatalogParseError(f"[{name}] missing 'family'")
    try:
        kw = {k: float(section[k]) for k in _FLOAT_KEYS if k in section}
        # 'top' / 'bottom' are shorthands for parallel edges
        for side in ("top", "bottom"):
            if side in section:
                kw.setdefault(f"{side}_left", float(section[side]))
                kw.setdefault(f"{side}_right", float(section[side]))
        hole = None
        if any(k in section for k in _HOLE_KEYS):
            missing = [k for k in _HOLE_KEYS if k not in section]
            if missing:
                raise CatalogParseError(f"[{name}] incomplete hole, missing {missing}")
            hole = Hole(
                section["hole_shape"].strip(),
                float(section["hole_x"]),
                float(section["hole_y"]),
                float(section["hole_width"]),
                float(section["hole_height"]),
            )
        fam = GeometryFamily(section["family"].strip(), hole=hole, name=name, **kw)
    except ValueError as exc:
        if isinstance(exc, CatalogParseError):
            raise
        raise CatalogParseError(f"[{name}] {exc}") from exc
    return CatalogEntry(name, fam)


def parse_catalog(text: str) -> list[CatalogEntry]:
    """Parse INI-style catalog text: one section per entry, in file order."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise CatalogParseError(str(exc)) from exc
    entries = [_parse_entry(name, cp[name]) for name in cp.sections()]
    if not entries:
        raise CatalogParseError("catalog has no entries")
    return entries


def load_catalog(path: str | Path | None = None) -> list[CatalogEntry]:
    path = DEFAULT_CATALOG if path is None else Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CatalogParseError(f"cannot read catalog {path}: {exc}") from exc
    return parse_catalog(text)


def catalog_to_text(entries: Iterable[CatalogEntry]) -> str:
    lines = []
    for e in entries:
        f = e.family
        lines.append(f"[{e.id}]")
        lines.append(f"family = {f.family}")
        for k in _FLOAT_KEYS:
            v = getattr(f, k)
            if v:
                lines.append(f"{k} = {v!r}")
        if f.hole is not None:
            h = f.hole
            lines += [
                f"hole_shape = {h.shape}",
                f"hole_x = {h.center_x!r}",
                f"hole_y = {h.center_y!r}",
                f"hole_width = {h.width!r}",
                f"hole_height = {h.height!r}",
            ]
        lines.append("")
    return "\n".join(lines)


def expand_catalog(
    entries: list[CatalogEntry], copies: int, seed: int = 0, grid: GridSpec = GridSpec(), jitter: float = 2.0
) -> list[CatalogEntry]:
    """Original entries followed by ``copies - 1`` jittered variants of each.

    Variants perturb edge offsets, sagitta and hole position/size by up to
    ``jitter`` cells; candidates that fail validation are redrawn.
    """
    if copies < 1:
        raise InvalidParameters("copies must be >= 1")
    rng = np.random.default_rng(seed)
    out = list(entries)
    for c in range(1, copies):
        for e in entries:
            for _ in range(200):
                cand = _jitter(e, rng, jitter, f"{e.id}~{c}")
                try:
                    build_geometry(cand.family, grid)
                except InvalidParameters:
                    continue
                out.append(cand)
                break
            else:
                raise InvalidParameters(f"could not find a valid variant of {e.id}")
    return out


def _jitter(e: CatalogEntry, rng: np.random.Generator, amount: float, new_id: str) -> CatalogEntry:
    f = e.family

    def nudge(v):
        return max(0.0, v + rng.uniform(-amount, amount))

    if f.family.startswith("rectangle"):
        top, bottom = nudge(f.top_left), nudge(f.bottom_left)
        edges = dict(top_left=top, top_right=top, bottom_left=bottom, bottom_right=bottom)
    else:
        edges = {k: nudge(getattr(f, k)) for k in ("top_left", "top_right", "bottom_left", "bottom_right")}
    sag = f.sagitta + rng.uniform(-amount, amount) if f.family.startswith("curved") else 0.0
    hole = None
    if f.hole is not None:
        h = f.hole
        hole = Hole(
            h.shape,
            h.center_x + rng.uniform(-amount, amount),
            h.center_y + rng.uniform(-amount, amount),
            max(1.5, h.width + rng.uniform(-amount, amount)),
            max(1.5, h.height + rng.uniform(-amount, amount)),
        )
    fam = GeometryFamily(f.family, sagitta=sag, hole=hole, name=new_id, **edges)
    return CatalogEntry(new_id, fam)
