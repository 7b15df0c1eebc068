import json

import numpy as np
import pytest

from lfmicroscan import io
from lfmicroscan.calibrate import decode
from lfmicroscan.core import LightField, RawCapture
from lfmicroscan.errors import ConfigurationError, DomainError


@pytest.fixture
def decoded(small_grid, rng):
    return decode(RawCapture(rng.random(small_grid.sensor_shape_px), (3.5, -3.03), 2, (3.6, -3.0)), small_grid)


def _files(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_pgm16_round_trip(tmp_path, rng):
    img = rng.random((13, 17))
    io.write_pgm16(tmp_path / "a.pgm", img)
    raw = (tmp_path / "a.pgm").read_bytes()
    assert raw.startswith(b"P5") and b"65535" in raw[:20]
    back = io.read_pgm16(tmp_path / "a.pgm")
    assert np.abs(back - img).max() <= 0.5 / 65535 + 1e-12
    q = io.to_uint16(img)
    io.write_pgm16(tmp_path / "b.pgm", q / 65535.0)
    assert np.array_equal(io.to_uint16(io.read_pgm16(tmp_path / "b.pgm")), q)


def test_lightfield_round_trip_bit_exact(tmp_path, decoded):
    io.save_lightfield(tmp_path / "lf", decoded)
    back = io.load_lightfield(tmp_path / "lf")
    assert np.array_equal(back.data, decoded.data)
    assert np.array_equal(back.lens_data, decoded.lens_data)
    assert np.array_equal(back.lens_positions_um, decoded.lens_positions_um)
    assert np.array_equal(back.valid_mask, decoded.valid_mask)
    assert (back.pitch_x_um, back.pitch_y_um, back.origin_um) == (decoded.pitch_x_um, decoded.pitch_y_um,
                                                                  decoded.origin_um)
    assert back.provenance == decoded.provenance


def test_container_layout(tmp_path, decoded):
    io.save_lightfield(tmp_path / "lf", decoded)
    man = json.loads((tmp_path / "lf" / "manifest.json").read_text())
    assert man["schema_version"] == 1
    assert man["angular_size"] == [7, 7] and man["spatial_size"] == [16, 16]
    names = {p.name for p in (tmp_path / "lf").iterdir()}
    assert {f"p_{v}_{u}.pgm" for v in range(7) for u in range(7)} <= names
    approx = io.load_lightfield(tmp_path / "lf", exact=False)
    assert np.abs(approx.data - np.clip(decoded.data, 0, 1)).max() <= 0.5 / 65535 + 1e-12


def test_container_deterministic(tmp_path, decoded):
    io.save_lightfield(tmp_path / "a", decoded)
    io.save_lightfield(tmp_path / "b", decoded)
    assert _files(tmp_path / "a") == _files(tmp_path / "b")


def test_container_errors(tmp_path, decoded):
    with pytest.raises(ConfigurationError):
        io.load_lightfield(tmp_path)
    io.save_lightfield(tmp_path / "lf", decoded)
    (tmp_path / "lf" / "p_3_3.pgm").unlink()
    with pytest.raises(DomainError):
        io.load_lightfield(tmp_path / "lf")
    io.save_lightfield(tmp_path / "lf2", decoded)
    man = json.loads((tmp_path / "lf2" / "manifest.json").read_text())
    man["spatial_size"] = [4, 4]
    (tmp_path / "lf2" / "manifest.json").write_text(json.dumps(man))
    with pytest.raises(DomainError):
        io.load_lightfield(tmp_path / "lf2")
    man["schema_version"] = 99
    (tmp_path / "lf2" / "manifest.json").write_text(json.dumps(man))
    with pytest.raises(ConfigurationError):
        io.load_lightfield(tmp_path / "lf2")


def test_save_replaces_previous(tmp_path, decoded):
    io.save_lightfield(tmp_path / "lf", decoded)
    small = LightField(np.zeros((1, 1, 3, 3)), 1.0, 1.0)
    io.save_lightfield(tmp_path / "lf", small)
    assert not (tmp_path / "lf" / "p_6_6.pgm").exists()
    assert not (tmp_path / "lf.partial").exists()


def test_capture_round_trip(tmp_path, rng):
    cap = RawCapture(rng.random((20, 30)), (3.5, -6.06), 14, (3.4, -6.1), {"seed": 3})
    io.write_capture(tmp_path, "capture_14", cap)
    back = io.read_capture(tmp_path, "capture_14")
    assert back.commanded_shift_um == cap.commanded_shift_um
    assert back.actual_shift_um == cap.actual_shift_um
    assert back.capture_index == 14 and back.metadata == {"seed": 3}
    assert np.abs(back.image - cap.image).max() <= 0.5 / 65535 + 1e-12
