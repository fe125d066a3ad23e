import numpy as np
import pytest

from stresslab.errors import FormatError, NonFiniteError
from stresslab.imageio import (
    quantize,
    read_pgm,
    read_raw_f32,
    read_sidecar_max,
    render_field_image,
    sidecar_path,
    write_raw_f32,
)


def test_zero_field_is_black(tmp_path):
    path = tmp_path / "z.pgm"
    top = render_field_image(np.zeros((24, 32)), path)
    assert top == 0.0
    pix = read_pgm(path)
    assert pix.shape == (24, 32) and not pix.any()
    assert read_sidecar_max(path) == 0.0


def test_uniform_field_is_white(tmp_path):
    path = tmp_path / "u.pgm"
    render_field_image(np.full((24, 32), 10.0), path)
    assert (read_pgm(path) == 255).all()
    assert read_sidecar_max(path) == 10.0
    assert sidecar_path(path).name == "u.pgm.max.txt"


def test_header_layout(tmp_path):
    path = tmp_path / "h.pgm"
    render_field_image(np.ones((3, 5)), path)
    raw = path.read_bytes()
    assert raw.startswith(b"P5\n5 3\n255\n")
    assert len(raw) == len(b"P5\n5 3\n255\n") + 15


def test_ramp_quantization():
    field = np.linspace(0.0, 255.0, 256).reshape(16, 16)
    pix, top = quantize(field)
    assert top == 255.0
    np.testing.assert_array_equal(pix.ravel(), np.arange(256))
    # 255 / 2 = 127.5 rounds up
    pix, _ = quantize(np.array([[1.0, 2.0]]))
    assert pix.tolist() == [[128, 255]]


def test_nonfinite_rejected(tmp_path):
    with pytest.raises(NonFiniteError):
        render_field_image(np.array([[1.0, np.nan]]), tmp_path / "n.pgm")
    with pytest.raises(FormatError):
        render_field_image(np.zeros(4), tmp_path / "v.pgm")


def test_raw_round_trip(tmp_path):
    field = np.random.default_rng(0).random((24, 32)).astype(np.float32)
    path = tmp_path / "f.raw"
    write_raw_f32(field, path)
    assert path.stat().st_size == 24 * 32 * 4
    assert read_raw_f32(path, (24, 32)).tobytes() == field.tobytes()
    with pytest.raises(FormatError):
        read_raw_f32(path, (24, 31))
