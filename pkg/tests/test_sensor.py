import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from raybos.sensor import (
    SensorModel,
    accumulate_spot,
    diffraction_diameter,
    gain_for_peak,
    intersect_sensor,
    quantize,
    read_pgm,
    write_pgm,
)

SENSOR = SensorModel.on_axis(0.0, 64, 48, 10e-6)
D_TAU = diffraction_diameter(11.0, 0.12, 500e-9)


def test_diffraction_diameter_reference_camera():
    assert D_TAU == pytest.approx(47.22e-6, rel=1e-3)
    assert diffraction_diameter(11.0, 0.12, 500e-9, pi_factor=False) == pytest.approx(15.03e-6, rel=1e-3)


def test_diffraction_diameter_scaling():
    assert diffraction_diameter(11.0, 0.12, 1e-15) < 1e-12
    a = diffraction_diameter(8.0, 0.0, 600e-9)
    b = diffraction_diameter(8.0, 1.0, 600e-9)
    assert b / a == pytest.approx(2.0)
    with pytest.raises(ValueError):
        diffraction_diameter(0.0, 0.1, 500e-9)


def test_sensor_validation():
    with pytest.raises(ValueError):
        SensorModel.on_axis(0.0, 10, 10, 10e-6, bit_depth=14)
    with pytest.raises(ValueError):
        SensorModel.on_axis(0.0, 10, 10, 0.0)
    with pytest.raises(ValueError):
        SensorModel.on_axis(0.0, 0, 10, 1e-6)


def test_pixel_mapping():
    np.testing.assert_allclose(SENSOR.to_pixels([0.0, 0.0]), [32.0, 24.0])
    np.testing.assert_allclose(SENSOR.to_pixels([15e-6, -5e-6]), [33.5, 23.5])
    assert SENSOR.size == pytest.approx((640e-6, 480e-6))


def test_intersect_sensor():
    uv, hit = intersect_sensor(np.array([1e-4, 2e-4, -1.0]), np.array([0.0, 0.0, 1.0]), SENSOR)
    assert hit
    np.testing.assert_allclose(uv, [1e-4, 2e-4])
    d = np.array([1.0, 0.0, 1.0]) / math.sqrt(2)
    uv, hit = intersect_sensor(np.array([0.0, 0.0, -0.01]), d, SENSOR)
    np.testing.assert_allclose(uv, [0.01, 0.0], atol=1e-16)
    _, hit = intersect_sensor(np.array([0.0, 0.0, 1.0]), np.array([0.0, 0.0, 1.0]), SENSOR)
    assert not hit
    _, hit = intersect_sensor(np.array([0.0, 0.0, -1.0]), np.array([1.0, 0.0, 0.0]), SENSOR)
    assert not hit


@given(st.floats(-50e-6, 50e-6), st.floats(-50e-6, 50e-6), st.floats(0.01, 100.0),
       st.sampled_from(["compiled", "numpy"]))
def test_spot_energy_and_centroid(u, v, e, backend):
    img = accumulate_spot(SENSOR.blank(), [[u, v]], D_TAU, e, SENSOR, backend=backend)
    assert img.sum() == pytest.approx(e, rel=1e-6)
    rows, cols = np.mgrid[0:48, 0:64] + 0.5
    c = np.array([(img * cols).sum(), (img * rows).sum()]) / img.sum()
    np.testing.assert_allclose(c, SENSOR.to_pixels([u, v]), atol=1e-3)


def test_spot_at_pixel_centre_is_symmetric():
    img = accumulate_spot(SENSOR.blank(), [[5e-6, 5e-6]], D_TAU, 1.0, SENSOR)
    r, c = np.unravel_index(img.argmax(), img.shape)
    assert (r, c) == (24, 32)
    win = img[r - 6:r + 7, c - 6:c + 7]
    np.testing.assert_allclose(win, win[::-1, :], atol=1e-15)
    np.testing.assert_allclose(win, win[:, ::-1], atol=1e-15)
    np.testing.assert_allclose(win, win.T, atol=1e-15)


@given(st.floats(-30e-6, 30e-6), st.floats(-30e-6, 30e-6), st.integers(-5, 5), st.integers(-5, 5))
def test_spot_integer_shift_equivariance(u, v, di, dj):
    a = accumulate_spot(SENSOR.blank(), [[u, v]], D_TAU, 1.0, SENSOR)
    b = accumulate_spot(SENSOR.blank(), [[u + di * 10e-6, v + dj * 10e-6]], D_TAU, 1.0, SENSOR)
    np.testing.assert_allclose(np.roll(a, (dj, di), axis=(0, 1)), b, atol=1e-12)


def test_spots_superpose_and_clip_at_edges():
    pts = np.array([[0.0, 0.0], [100e-6, -50e-6]])
    both = accumulate_spot(SENSOR.blank(), pts, D_TAU, [1.0, 2.0], SENSOR)
    one = accumulate_spot(SENSOR.blank(), pts[:1], D_TAU, 1.0, SENSOR)
    two = accumulate_spot(SENSOR.blank(), pts[1:], D_TAU, 2.0, SENSOR)
    np.testing.assert_allclose(both, one + two, atol=1e-15)
    edge = accumulate_spot(SENSOR.blank(), [[-320e-6, 0.0]], D_TAU, 1.0, SENSOR)
    assert edge.sum() == pytest.approx(0.5, rel=1e-6)
    off = accumulate_spot(SENSOR.blank(), [[1.0, 1.0], [np.nan, 0.0]], D_TAU, 1.0, SENSOR)
    assert off.sum() == 0.0


def test_compiled_matches_numpy():
    rng = np.random.default_rng(4)
    pts = rng.uniform(-400e-6, 400e-6, (3000, 2))
    e = rng.random(3000)
    a = accumulate_spot(SENSOR.blank(), pts, D_TAU, e, SENSOR, backend="numpy")
    b = accumulate_spot(SENSOR.blank(), pts, D_TAU, e, SENSOR, backend="compiled")
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_spot_errors():
    with pytest.raises(ValueError):
        accumulate_spot(SENSOR.blank(), [[0, 0]], D_TAU, -1.0, SENSOR)
    with pytest.raises(ValueError):
        accumulate_spot(SENSOR.blank(), [[0, 0]], D_TAU, 1.0, SENSOR, backend="gpu")


def test_quantize():
    q = quantize(np.array([[-1.0, 0.4, 0.6, 1e9]]), 16, 1.0)
    np.testing.assert_array_equal(q, [[0, 0, 1, 65535]])
    assert q.dtype == np.uint16
    assert quantize(np.array([[300.0]]), 8).dtype == np.uint8
    assert quantize(np.array([[5000.0]]), 12)[0, 0] == 4095
    np.testing.assert_array_equal(quantize(np.array([[2.0]]), 16, gain=2.5), [[5]])
    with pytest.raises(ValueError):
        quantize(np.zeros((1, 1)), 16, gain=0.0)
    with pytest.raises(ValueError):
        quantize(np.zeros((1, 1)), 14)


def test_gain_for_peak():
    assert gain_for_peak(2.0, 16, 0.9) * 2.0 == pytest.approx(0.9 * 65535)
    with pytest.raises(ValueError):
        gain_for_peak(0.0)


def test_pgm_binary_round_trip_big_endian(tmp_path):
    counts = np.array([[0, 1, 256], [65535, 513, 7]], dtype=np.uint16)
    write_pgm(tmp_path / "a.pgm", counts)
    raw = (tmp_path / "a.pgm").read_bytes()
    assert raw.startswith(b"P5\n3 2\n65535\n")
    assert raw[len(b"P5\n3 2\n65535\n"):][4:6] == b"\x01\x00"  # 256 stored MSB first
    np.testing.assert_array_equal(read_pgm(tmp_path / "a.pgm"), counts)


def test_pgm_plain_and_8bit(tmp_path):
    counts = np.array([[0, 10], [255, 3]], dtype=np.uint8)
    write_pgm(tmp_path / "b.pgm", counts, plain=True)
    assert (tmp_path / "b.pgm").read_text().startswith("P2\n2 2\n255\n")
    np.testing.assert_array_equal(read_pgm(tmp_path / "b.pgm"), counts)
    write_pgm(tmp_path / "c.pgm", counts)
    np.testing.assert_array_equal(read_pgm(tmp_path / "c.pgm"), counts)
    with pytest.raises(ValueError):
        write_pgm(tmp_path / "d.pgm", np.zeros(3))
    (tmp_path / "e.pgm").write_bytes(b"not an image")
    with pytest.raises(ValueError):
        read_pgm(tmp_path / "e.pgm")
