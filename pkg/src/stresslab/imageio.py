"""Field export: raw little-endian f32 grids and 8-bit P5 graymaps."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from stresslab.errors import FormatError, NonFiniteError


def sidecar_path(image_path: str | Path) -> Path:
    p = Path(image_path)
    return p.with_name(p.name + ".max.txt")


def quantize(field: np.ndarray) -> tuple[np.ndarray, float]:
    """``round(255 * field / max)`` as uint8 (half rounds up); all zero when max is 0."""
    field = np.asarray(field, dtype=np.float64)
    if not np.isfinite(field).all():
        raise NonFiniteError("cannot render a non-finite field")
    top = float(field.max()) if field.size else 0.0
    if top <= 0:
        return np.zeros(field.shape, np.uint8), max(top, 0.0)
    pix = np.floor(255.0 * field / top + 0.5)
    return np.clip(pix, 0, 255).astype(np.uint8), top


def render_field_image(field: np.ndarray, path: str | Path) -> float:
    """Write ``field`` as a P5 graymap plus a sidecar holding its max (MPa); returns the max."""
    field = np.asarray(field)
    if field.ndim != 2:
        raise FormatError(f"expected a 2-D field, got shape {field.shape}")
    pix, top = quantize(field)
    h, w = pix.shape
    try:
        with open(path, "wb") as fh:
            fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
            fh.write(pix.tobytes())
        sidecar_path(path).write_text(f"sigma_max = {top!r}\n")
    except OSError as exc:
        raise FormatError(f"cannot write image {path}: {exc}") from exc
    return top


def read_pgm(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5":
        raise FormatError(f"{path}: not a binary graymap")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit graymaps are supported")
    data = parts[4]
    if len(data) < w * h:
        raise FormatError(f"{path}: truncated pixel data")
    return np.frombuffer(data[: w * h], dtype=np.uint8).reshape(h, w)


def read_sidecar_max(image_path: str | Path) -> float:
    text = sidecar_path(image_path).read_text()
    return float(text.split("=", 1)[1])


def write_raw_f32(field: np.ndarray, path: str | Path) -> None:
    """Row-major little-endian float32 dump (no header)."""
    try:
        Path(path).write_bytes(np.ascontiguousarray(field, dtype="<f4").tobytes())
    except OSError as exc:
        raise FormatError(f"cannot write {path}: {exc}") from exc


def read_raw_f32(path: str | Path, shape: tuple[int, ...]) -> np.ndarray:
    raw = Path(path).read_bytes()
    n = int(np.prod(shape))
    if len(raw) != 4 * n:
        raise FormatError(f"{path}: expected {4 * n} bytes for shape {shape}, found {len(raw)}")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
