"""Sweep enumeration, parallel FEM generation and the SFD1 dataset container.

Container layout (all little-endian)::

    b"SFD1" | u32 header length | UTF-8 JSON header
    | multi   f32 [N, 5, H, W]
    | single  f32 [N, 1, H, W]
    | targets f32 [N, H, W]
    | provenance records [N] of (u32 geometry index, f64 q, f64 theta)

The header lists the geometry ids the provenance indices refer to and embeds
the catalog text, so any sample can be re-solved from the file alone.
"""

from __future__ import annotations

import json
import math
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from stresslab.errors import (
    BadMagic,
    CatalogParseError,
    DegenerateSplit,
    EmptyDataset,
    FormatError,
    InvalidParameters,
    ProblemFailed,
    StressLabError,
    TruncatedPayload,
    VersionMismatch,
)
from stresslab.fem import solve_problem
from stresslab.geometry import (
    TWO_PI,
    CatalogEntry,
    GridSpec,
    LoadSpec,
    ProblemSpec,
    catalog_to_text,
    expand_catalog,
    load_catalog,
    parse_catalog,
    rasterize_multi_channel,
    rasterize_single_channel,
)
from stresslab.material import Material

MAGIC = b"SFD1"
VERSION = 1
FIELD_ORDER = ("multi", "single", "targets", "provenance")
PROVENANCE_DTYPE = np.dtype([("geometry", "<u4"), ("q", "<f8"), ("theta", "<f8")])


@dataclass(frozen=True)
class SweepConfig:
    """Geometry x load sweep: catalog entries, q in [q_start, q_stop] by q_step, theta_count angles."""

    catalog: str | None = None
    q_start: float = 0.0
    q_stop: float = 100.0
    q_step: float = 20.0
    theta_count: int = 24
    material: Material = Material()
    grid: GridSpec = GridSpec()
    copies: int = 0
    expand_seed: int = 0
    dedupe_zero_load: bool = False
    seed: int = 0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.q_start, self.q_stop, self.q_step)):
            raise InvalidParameters("q schedule must be finite")
        if self.q_start < 0 or self.q_stop < self.q_start:
            raise InvalidParameters(f"need 0 <= q_start <= q_stop, got {self.q_start}, {self.q_stop}")
        if self.q_step <= 0 and self.q_stop > self.q_start:
            raise InvalidParameters(f"q_step must be positive, got {self.q_step}")
        if self.theta_count < 1:
            raise InvalidParameters(f"theta_count must be >= 1, got {self.theta_count}")
        if self.copies < 0:
            raise InvalidParameters("copies must be >= 0")

    def q_values(self) -> list[float]:
        if self.q_stop == self.q_start:
            return [float(self.q_start)]
        n = int(math.floor((self.q_stop - self.q_start) / self.q_step + 1e-9))
        return [float(self.q_start + i * self.q_step) for i in range(n + 1)]

    def theta_values(self) -> list[float]:
        # the 2*pi endpoint duplicates 0 and is excluded
        return [TWO_PI * k / self.theta_count for k in range(self.theta_count)]

    def entries(self) -> list[CatalogEntry]:
        entries = load_catalog(self.catalog)
        if self.copies:
            entries = expand_catalog(entries, self.copies, self.expand_seed, self.grid)
        return entries

    def schedules(self) -> dict:
        return {
            "q": self.q_values(),
            "theta_count": self.theta_count,
            "dedupe_zero_load": self.dedupe_zero_load,
        }


@dataclass(frozen=True)
class Provenance:
    geometry: str
    q: float
    theta: float


@dataclass
class Dataset:
    multi: np.ndarray
    single: np.ndarray
    targets: np.ndarray
    geometry_ids: list[str]
    provenance: np.ndarray
    material: Material = Material()
    catalog_text: str = ""
    schedules: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.provenance)
        h, w = self.targets.shape[1:] if self.targets.ndim == 3 else (0, 0)
        if (
            self.multi.shape != (n, 5, h, w)
            or self.single.shape != (n, 1, h, w)
            or self.targets.shape != (n, h, w)
        ):
            raise FormatError(
                f"inconsistent dataset arrays {self.multi.shape}, {self.single.shape}, {self.targets.shape}, n={n}"
            )

    def __len__(self) -> int:
        return len(self.provenance)

    @property
    def shape(self) -> tuple[int, int]:
        return self.targets.shape[1], self.targets.shape[2]

    def record(self, i: int) -> Provenance:
        r = self.provenance[i]
        return Provenance(self.geometry_ids[int(r["geometry"])], float(r["q"]), float(r["theta"]))

    def loads(self) -> np.ndarray:
        """N x 2 raw (qx, qy) in N."""
        q, t = self.provenance["q"], self.provenance["theta"]
        return np.stack([q * np.cos(t), q * np.sin(t)], axis=1)

    def subset(self, idx) -> Dataset:
        idx = np.asarray(idx, dtype=np.int64)
        return replace(
            self,
            multi=self.multi[idx],
            single=self.single[idx],
            targets=self.targets[idx],
            provenance=self.provenance[idx],
        )

    def model_input(self):
        """The channel-last :class:`stresslab.models.ModelInput` the surrogates consume."""
        from stresslab.models import ModelInput

        return ModelInput(
            np.ascontiguousarray(self.multi.transpose(0, 2, 3, 1)),
            np.ascontiguousarray(self.single.transpose(0, 2, 3, 1)),
            self.loads().astype(np.float32),
        )

    def problem(self, i: int) -> ProblemSpec:
        """Rebuild the FEM problem of sample ``i`` from the embedded catalog."""
        rec = self.record(i)
        entries = {e.id: e for e in parse_catalog(self.catalog_text)}
        if rec.geometry not in entries:
            raise CatalogParseError(f"geometry {rec.geometry!r} is not in the embedded catalog")
        h, w = self.shape
        grid = GridSpec(h, w)
        return ProblemSpec(entries[rec.geometry].mask(grid), LoadSpec(rec.q, rec.theta), self.material, grid)


@dataclass(frozen=True)
class DatasetStats:
    min: float
    max: float
    mean: float
    count: int

    def to_text(self) -> str:
        return f"samples = {self.count}\nmin = {self.min!r}\nmax = {self.max!r}\nmean = {self.mean!r}\n"


# -- enumeration and generation ---------------------------------------------------


def enumerate_problems(cfg: SweepConfig) -> list[tuple[CatalogEntry, float, float]]:
    """(entry, q, theta) in catalog order, then q ascending, then theta ascending."""
    out = []
    thetas = cfg.theta_values()
    for entry in cfg.entries():
        for q in cfg.q_values():
            for t in thetas:
                if cfg.dedupe_zero_load and q == 0 and t != 0:
                    continue
                out.append((entry, q, t))
    return out


def _solve_geometry(args):
    entry, loads, material, grid = args
    try:
        mask = entry.mask(grid)
    except StressLabError as exc:
        raise ProblemFailed(f"geometry {entry.id}: {exc}") from exc
    h, w = grid.shape
    multi = np.empty((len(loads), 5, h, w), np.float32)
    single = np.empty((len(loads), 1, h, w), np.float32)
    targets = np.empty((len(loads), h, w), np.float32)
    for k, (q, t) in enumerate(loads):
        try:
            p = ProblemSpec(mask, LoadSpec(q, t), material, grid)
            targets[k] = solve_problem(p)
        except StressLabError as exc:
            raise ProblemFailed(f"{entry.id} q={q!r} theta={t!r}: {exc}") from exc
        multi[k] = rasterize_multi_channel(p)
        single[k, 0] = rasterize_single_channel(p)
    return multi, single, targets


def default_workers() -> int:
    """CPU count, capped by the ``STRESSLAB_THREADS`` environment variable."""
    n = os.cpu_count() or 1
    cap = os.environ.get("STRESSLAB_THREADS")
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            pass
    return n


def generate_dataset(cfg: SweepConfig, workers: int | None = None) -> Dataset:
    """Solve every enumerated problem; the result does not depend on ``workers``."""
    problems = enumerate_problems(cfg)
    if not problems:
        raise EmptyDataset("the sweep enumerates no problems")
    entries: list[CatalogEntry] = []
    index: dict[str, int] = {}
    groups: list[list[tuple[float, float]]] = []
    prov = np.empty(len(problems), PROVENANCE_DTYPE)
    for i, (entry, q, t) in enumerate(problems):
        if entry.id not in index:
            index[entry.id] = len(entries)
            entries.append(entry)
            groups.append([])
        groups[index[entry.id]].append((q, t))
        prov[i] = (index[entry.id], q, t)
    tasks = [(e, g, cfg.material, cfg.grid) for e, g in zip(entries, groups)]
    workers = default_workers() if workers is None else max(1, int(workers))
    if workers == 1 or len(tasks) == 1:
        results = [_solve_geometry(t) for t in tasks]
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
            results = list(pool.map(_solve_geometry, tasks))
    # problems are grouped by geometry in enumeration order, so concatenation restores it
    return Dataset(
        np.concatenate([r[0] for r in results]),
        np.concatenate([r[1] for r in results]),
        np.concatenate([r[2] for r in results]),
        [e.id for e in entries],
        prov,
        cfg.material,
        catalog_to_text(entries),
        cfg.schedules(),
    )


# -- splitting and statistics ---------------------------------------------------


def split_indices(n: int, train_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 < train_fraction < 1.0:
        raise DegenerateSplit(f"train fraction must lie in (0, 1), got {train_fraction}")
    n_train = int(round(train_fraction * n))
    if n_train == 0 or n_train == n:
        raise DegenerateSplit(f"a {train_fraction} split of {n} samples leaves one side empty")
    order = np.random.default_rng(seed).permutation(n)
    return np.sort(order[:n_train]), np.sort(order[n_train:])


def split_dataset(d: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    tr, te = split_indices(len(d), train_fraction, seed)
    return d.subset(tr), d.subset(te)


def dataset_stats(d: Dataset) -> DatasetStats:
    """Min, max and mean of the target stress over solid pixels of all samples."""
    if len(d) == 0:
        raise EmptyDataset("cannot summarize an empty dataset")
    vals = d.targets[d.multi[:, 0] > 0].astype(np.float64)
    if vals.size == 0:
        raise EmptyDataset("dataset has no solid pixels")
    return DatasetStats(float(vals.min()), float(vals.max()), float(vals.mean()), len(d))


# -- persistence ----------------------------------------------------------------


def _header(d: Dataset) -> bytes:
    h, w = d.shape
    return json.dumps(
        {
            "format": "SFD1",
            "version": VERSION,
            "count": len(d),
            "height": h,
            "width": w,
            "material": d.material.to_dict(),
            "schedules": d.schedules,
            "field_order": list(FIELD_ORDER),
            "geometry_ids": d.geometry_ids,
            "catalog": d.catalog_text,
        },
        sort_keys=True,
    ).encode("utf-8")


def write_dataset(d: Dataset, path: str | Path) -> None:
    header = _header(d)
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            for arr in (d.multi, d.single, d.targets):
                fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
            fh.write(np.ascontiguousarray(d.provenance, dtype=PROVENANCE_DTYPE).tobytes())
    except OSError as exc:
        raise FormatError(f"cannot write dataset {path}: {exc}") from exc


def read_dataset(path: str | Path, verify: int = 0, seed: int = 0) -> Dataset:
    """Load an SFD1 file; ``verify > 0`` re-solves that many random samples and compares."""
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read dataset {path}: {exc}") from exc
    if raw[:4] != MAGIC:
        raise BadMagic(f"{path}: not an SFD1 dataset (magic {raw[:4]!r})")
    if len(raw) < 8:
        raise TruncatedPayload(f"{path}: truncated header")
    (hlen,) = struct.unpack("<I", raw[4:8])
    if len(raw) < 8 + hlen:
        raise TruncatedPayload(f"{path}: truncated header")
    try:
        header = json.loads(raw[8 : 8 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable header: {exc}") from exc
    if header.get("version") != VERSION:
        raise VersionMismatch(f"{path}: dataset version {header.get('version')} != {VERSION}")
    n, h, w = int(header["count"]), int(header["height"]), int(header["width"])
    sizes = [4 * n * 5 * h * w, 4 * n * h * w, 4 * n * h * w, PROVENANCE_DTYPE.itemsize * n]
    off = 8 + hlen
    if len(raw) < off + sum(sizes):
        raise TruncatedPayload(f"{path}: header declares {n} samples but the payload is shorter")
    arrays = []
    for dtype, shape, size in zip(
        ("<f4", "<f4", "<f4", PROVENANCE_DTYPE), ((n, 5, h, w), (n, 1, h, w), (n, h, w), (n,)), sizes
    ):
        arrays.append(np.frombuffer(raw, dtype=dtype, count=size // np.dtype(dtype).itemsize, offset=off).reshape(shape).copy())
        off += size
    mat = header.get("material", {})
    d = Dataset(
        *arrays[:3],
        list(header["geometry_ids"]),
        arrays[3],
        Material(mat.get("youngs_modulus", 200_000.0), mat.get("poisson_ratio", 0.3)),
        header.get("catalog", ""),
        header.get("schedules", {}),
    )
    if verify:
        verify_samples(d, verify, seed)
    return d


def verify_samples(d: Dataset, count: int, seed: int = 0, rtol: float = 1e-6) -> list[int]:
    """Re-solve ``count`` random samples and check them against the stored targets."""
    rng = np.random.default_rng(seed)
    picks = rng.choice(len(d), size=min(count, len(d)), replace=False)
    for i in picks:
        expect = solve_problem(d.problem(int(i))).astype(np.float32)
        scale = max(1.0, float(np.abs(expect).max()))
        if not np.allclose(d.targets[i], expect, rtol=0, atol=rtol * scale):
            raise FormatError(f"sample {int(i)} ({d.record(int(i))}) does not match its re-solved field")
    return sorted(int(i) for i in picks)
