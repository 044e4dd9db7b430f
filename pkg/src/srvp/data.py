"""Synthetic bouncing-glyph sequences and the on-disk dataset format.

Glyphs are 8x8 seven-segment block digits moving at constant velocity with
elastic wall reflection; positions stay continuous and are rounded only at
rasterization. Overlapping glyphs compose by per-pixel max, so frames hold
exactly {0, 255}. Everything is deterministic given the seed.
"""

from dataclasses import dataclass

import numpy as np


class DataFormatError(ValueError):
    """Raised for malformed dataset / checkpoint files."""


DATASET_MAGIC = b"SRVPDS1\n"
GLYPH_SIZE = 8


def _segment_masks():
    top = np.zeros((8, 8), dtype=bool); top[0:2, :] = True
    mid = np.zeros((8, 8), dtype=bool); mid[3:5, :] = True
    bot = np.zeros((8, 8), dtype=bool); bot[6:8, :] = True
    tl = np.zeros((8, 8), dtype=bool); tl[0:4, 0:2] = True
    bl = np.zeros((8, 8), dtype=bool); bl[4:8, 0:2] = True
    tr = np.zeros((8, 8), dtype=bool); tr[0:4, 6:8] = True
    br = np.zeros((8, 8), dtype=bool); br[4:8, 6:8] = True
    segs = {"top": top, "mid": mid, "bot": bot, "tl": tl, "bl": bl, "tr": tr, "br": br}
    layout = {
        0: "top bot tl bl tr br",
        1: "tr br",
        2: "top tr mid bl bot",
        3: "top tr mid br bot",
        4: "tl mid tr br",
        5: "top tl mid br bot",
        6: "top tl mid bl br bot",
        7: "top tr br",
        8: "top mid bot tl bl tr br",
        9: "top tl tr mid br bot",
    }
    masks = {}
    for digit, names in layout.items():
        m = np.zeros((8, 8), dtype=bool)
        for nm in names.split():
            m |= segs[nm]
        masks[digit] = m.astype(np.uint8)
    return masks


DIGIT_BITMAPS = _segment_masks()


@dataclass
class GlyphSpec:
    bitmap: np.ndarray          # (h, w) in {0, 1}
    position: tuple             # (y, x) of the top-left corner, real pixels
    velocity: tuple             # (vy, vx) pixels per frame


@dataclass
class SequenceBatch:
    frames: np.ndarray          # (S, T, C, H, W) uint8

    @property
    def num_sequences(self):
        return self.frames.shape[0]

    @property
    def seq_length(self):
        return self.frames.shape[1]


def _reflect(pos, vel, hi):
    """Advance one coordinate with elastic reflection inside [0, hi]."""
    if hi <= 0.0:
        return 0.0, 0.0
    p = pos + vel
    while p < 0.0 or p > hi:
        if p < 0.0:
            p = -p
            vel = -vel
        else:
            p = 2.0 * hi - p
            vel = -vel
    return p, vel


def simulate_glyphs(specs, num_frames, height, width):
    """Render (T, H, W) uint8 frames of the given glyphs in motion."""
    for s in specs:
        gh, gw = s.bitmap.shape
        if gh > height or gw > width:
            raise ValueError(f"glyph {s.bitmap.shape} larger than frame ({height},{width})")
    frames = np.zeros((num_frames, height, width), dtype=np.uint8)
    state = [(float(s.position[0]), float(s.position[1]),
              float(s.velocity[0]), float(s.velocity[1])) for s in specs]
    for t in range(num_frames):
        for i, s in enumerate(specs):
            y, x, vy, vx = state[i]
            gh, gw = s.bitmap.shape
            yi, xi = int(round(y)), int(round(x))
            patch = frames[t, yi : yi + gh, xi : xi + gw]
            np.maximum(patch, s.bitmap * np.uint8(255), out=patch)
            y, vy = _reflect(y, vy, float(height - gh))
            x, vx = _reflect(x, vx, float(width - gw))
            state[i] = (y, x, vy, vx)
    return frames


def generate(num_sequences, num_frames, height, width, glyphs_per_seq=1, seed=0):
    """Seed-deterministic batch of bouncing-glyph sequences (S,T,1,H,W)."""
    if GLYPH_SIZE > height or GLYPH_SIZE > width:
        raise ValueError(f"glyph size {GLYPH_SIZE} exceeds frame ({height},{width})")
    children = np.random.SeedSequence(seed).spawn(num_sequences)
    out = np.zeros((num_sequences, num_frames, 1, height, width), dtype=np.uint8)
    for s, child in enumerate(children):
        rng = np.random.default_rng(child)
        specs = []
        for _ in range(glyphs_per_seq):
            digit = int(rng.integers(0, 10))
            y = rng.uniform(0.0, height - GLYPH_SIZE)
            x = rng.uniform(0.0, width - GLYPH_SIZE)
            angle = rng.uniform(0.0, 2.0 * np.pi)
            speed = rng.uniform(0.8, 2.0)
            vy, vx = speed * np.sin(angle), speed * np.cos(angle)
            if height - GLYPH_SIZE <= 0:
                vy = 0.0
            if width - GLYPH_SIZE <= 0:
                vx = 0.0
            specs.append(GlyphSpec(DIGIT_BITMAPS[digit], (y, x), (vy, vx)))
        out[s, :, 0] = simulate_glyphs(specs, num_frames, height, width)
    return SequenceBatch(out)


# -- on-disk format ---------------------------------------------------------------


def write_dataset(batch, path):
    s, t, c, h, w = batch.frames.shape
    header = np.array([s, t, c, h, w], dtype="<u4")
    with open(path, "wb") as f:
        f.write(DATASET_MAGIC)
        f.write(header.tobytes())
        f.write(np.ascontiguousarray(batch.frames, dtype=np.uint8).tobytes())


def read_dataset(path):
    with open(path, "rb") as f:
        magic = f.read(len(DATASET_MAGIC))
        if magic != DATASET_MAGIC:
            raise DataFormatError(f"bad magic in dataset {path}")
        header = np.frombuffer(f.read(20), dtype="<u4")
        if header.size != 5:
            raise DataFormatError(f"truncated header in dataset {path}")
        s, t, c, h, w = (int(v) for v in header)
        expected = s * t * c * h * w
        payload = f.read()
    if len(payload) < expected:
        raise DataFormatError(
            f"truncated payload in dataset {path}: {len(payload)} < {expected} bytes"
        )
    if len(payload) > expected:
        raise DataFormatError(
            f"header/payload length mismatch in dataset {path}: {len(payload)} > {expected}"
        )
    frames = np.frombuffer(payload, dtype=np.uint8).reshape(s, t, c, h, w).copy()
    return SequenceBatch(frames)


def batch_iterator(batch, n_input, n_predict, batch_size, shuffle_seed=None):
    """Yield (inputs, targets) float64 pairs scaled to [0,1].

    The sequence length must equal n_input + n_predict. With a seed the
    order is a deterministic permutation; with ``None`` the stored order is
    kept. The final chunk may be smaller than ``batch_size``.
    """
    s, t = batch.frames.shape[0], batch.frames.shape[1]
    if t != n_input + n_predict:
        raise ValueError(f"sequence length {t} != n_input {n_input} + n_predict {n_predict}")
    order = np.arange(s)
    if shuffle_seed is not None:
        order = np.random.default_rng(shuffle_seed).permutation(s)
    for lo in range(0, s, batch_size):
        idx = order[lo : lo + batch_size]
        chunk = batch.frames[idx].astype(np.float64) / 255.0
        yield chunk[:, :n_input], chunk[:, n_input:]


# -- frame export ------------------------------------------------------------------


def write_pgm(path, frame):
    """Binary PGM (P5, maxval 255) of a single (H, W) frame; float frames in
    [0,1] are scaled, uint8 frames written as-is."""
    arr = np.asarray(frame)
    if arr.ndim == 3 and arr.shape[0] == 1:
        arr = arr[0]
    if arr.ndim != 2:
        raise ValueError(f"write_pgm expects a single-channel frame, got {arr.shape}")
    if arr.dtype != np.uint8:
        arr = np.clip(np.rint(arr * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{arr.shape[1]} {arr.shape[0]}\n255\n".encode())
        f.write(arr.tobytes())
