import numpy as np
import pytest

from srvp.data import (
    DIGIT_BITMAPS,
    DataFormatError,
    GlyphSpec,
    batch_iterator,
    generate,
    read_dataset,
    simulate_glyphs,
    write_dataset,
    write_pgm,
    _reflect,
)


def test_digit_bitmaps_nonempty_8x8():
    assert set(DIGIT_BITMAPS) == set(range(10))
    for mask in DIGIT_BITMAPS.values():
        assert mask.shape == (8, 8)
        assert mask.sum() > 0


def test_zero_velocity_static_frames():
    spec = GlyphSpec(DIGIT_BITMAPS[3], (5.0, 7.0), (0.0, 0.0))
    frames = simulate_glyphs([spec], 6, 24, 24)
    for t in range(1, 6):
        assert np.array_equal(frames[t], frames[0])


def test_unit_velocity_shifts_one_pixel():
    spec = GlyphSpec(DIGIT_BITMAPS[1], (4.0, 2.0), (0.0, 1.0))
    frames = simulate_glyphs([spec], 3, 20, 20)
    assert np.array_equal(frames[1][:, 1:], frames[0][:, :-1])
    assert np.array_equal(frames[2][:, 1:], frames[1][:, :-1])


def test_pixels_are_binary_0_255():
    batch = generate(3, 5, 24, 24, glyphs_per_seq=2, seed=5)
    assert set(np.unique(batch.frames)) <= {0, 255}


def test_generate_deterministic():
    a = generate(4, 6, 32, 32, 1, seed=9)
    b = generate(4, 6, 32, 32, 1, seed=9)
    assert np.array_equal(a.frames, b.frames)
    c = generate(4, 6, 32, 32, 1, seed=10)
    assert not np.array_equal(a.frames, c.frames)


def test_every_frame_has_content():
    batch = generate(6, 12, 16, 16, 1, seed=3)
    assert (batch.frames.reshape(6, 12, -1).max(axis=2) == 255).all()


def test_glyph_stays_inside_frame():
    spec = GlyphSpec(DIGIT_BITMAPS[8], (0.0, 0.0), (3.7, -2.9))
    frames = simulate_glyphs([spec], 50, 12, 12)
    assert frames.shape == (50, 12, 12)
    assert (frames.reshape(50, -1).sum(axis=1) > 0).all()


def test_reflection_preserves_speed():
    pos, vel = 1.0, -3.7
    for _ in range(25):
        pos, vel = _reflect(pos, vel, 10.0)
        assert 0.0 <= pos <= 10.0
        assert abs(vel) == 3.7


def test_glyph_larger_than_frame_rejected():
    spec = GlyphSpec(DIGIT_BITMAPS[0], (0.0, 0.0), (1.0, 0.0))
    with pytest.raises(ValueError, match="larger than frame"):
        simulate_glyphs([spec], 3, 4, 4)


def test_overlap_composes_with_max():
    a = GlyphSpec(DIGIT_BITMAPS[8], (2.0, 2.0), (0.0, 0.0))
    b = GlyphSpec(DIGIT_BITMAPS[1], (2.0, 2.0), (0.0, 0.0))
    frames = simulate_glyphs([a, b], 1, 16, 16)
    only_a = simulate_glyphs([a], 1, 16, 16)
    assert (frames[0] >= only_a[0]).all()
    assert set(np.unique(frames)) <= {0, 255}


# -- dataset file format --------------------------------------------------------


def test_roundtrip_bit_exact(tmp_path):
    batch = generate(5, 4, 16, 16, 1, seed=1)
    path = tmp_path / "data.ds"
    write_dataset(batch, path)
    back = read_dataset(path)
    assert np.array_equal(back.frames, batch.frames)
    # and byte-for-byte on a rewrite
    path2 = tmp_path / "again.ds"
    write_dataset(back, path2)
    assert path.read_bytes() == path2.read_bytes()


def test_magic_present(tmp_path):
    path = tmp_path / "data.ds"
    write_dataset(generate(1, 2, 16, 16, 1, seed=0), path)
    assert path.read_bytes()[:8] == b"SRVPDS1\n"


def test_bad_magic(tmp_path):
    path = tmp_path / "bogus.ds"
    path.write_bytes(b"NOTMINE!" + b"\x00" * 40)
    with pytest.raises(DataFormatError, match="bad magic"):
        read_dataset(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "data.ds"
    write_dataset(generate(2, 3, 16, 16, 1, seed=2), path)
    blob = path.read_bytes()
    path.write_bytes(blob[:-7])
    with pytest.raises(DataFormatError, match="truncated payload"):
        read_dataset(path)


def test_length_mismatch(tmp_path):
    path = tmp_path / "data.ds"
    write_dataset(generate(2, 3, 16, 16, 1, seed=2), path)
    path.write_bytes(path.read_bytes() + b"\x00\x00\x00")
    with pytest.raises(DataFormatError, match="mismatch"):
        read_dataset(path)


# -- batch iterator ----------------------------------------------------------------


def test_single_batch_contains_everything():
    batch = generate(6, 5, 16, 16, 1, seed=4)
    chunks = list(batch_iterator(batch, 3, 2, batch_size=6, shuffle_seed=0))
    assert len(chunks) == 1
    inputs, targets = chunks[0]
    assert inputs.shape == (6, 3, 1, 16, 16)
    assert targets.shape == (6, 2, 1, 16, 16)


def test_shuffle_deterministic():
    batch = generate(10, 4, 16, 16, 1, seed=6)
    a = [i.sum() for i, _ in batch_iterator(batch, 2, 2, 3, shuffle_seed=(7, 0))]
    b = [i.sum() for i, _ in batch_iterator(batch, 2, 2, 3, shuffle_seed=(7, 0))]
    c = [i.sum() for i, _ in batch_iterator(batch, 2, 2, 3, shuffle_seed=(7, 1))]
    assert a == b
    assert a != c


def test_values_scaled_to_unit_interval():
    batch = generate(3, 4, 16, 16, 1, seed=8)
    for inputs, targets in batch_iterator(batch, 2, 2, 2):
        for arr in (inputs, targets):
            assert arr.dtype == np.float64
            assert arr.min() >= 0.0 and arr.max() <= 1.0
    assert inputs.max() == 1.0          # glyph pixels map to exactly 1


def test_horizon_mismatch_rejected():
    batch = generate(2, 5, 16, 16, 1, seed=9)
    with pytest.raises(ValueError, match="sequence length"):
        list(batch_iterator(batch, 2, 2, 2))


# -- pgm export ----------------------------------------------------------------------


def test_pgm_format(tmp_path):
    frame = np.zeros((4, 6), dtype=np.uint8)
    frame[1, 2] = 255
    path = tmp_path / "frame.pgm"
    write_pgm(path, frame)
    blob = path.read_bytes()
    assert blob.startswith(b"P5\n6 4\n255\n")
    assert blob[len(b"P5\n6 4\n255\n"):] == frame.tobytes()


def test_pgm_accepts_unit_floats(tmp_path):
    path = tmp_path / "f.pgm"
    write_pgm(path, np.full((3, 3), 0.5))
    assert path.read_bytes().endswith(bytes([128] * 9))


def test_pgm_rejects_multichannel():
    with pytest.raises(ValueError):
        write_pgm("/tmp/never.pgm", np.zeros((3, 4, 4)))
