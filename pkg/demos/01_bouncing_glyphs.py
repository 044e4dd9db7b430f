# Generate a small bouncing-glyph dataset, look at its motion properties,
# and round-trip it through the on-disk format.

import os
import numpy as np

from srvp import data

out_dir = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(out_dir, exist_ok=True)

# 12 sequences of 20 frames, one digit glyph per sequence, 32x32 pixels
batch = data.generate(num_sequences=12, num_frames=20, height=32, width=32,
                      glyphs_per_seq=1, seed=7)
print("frames array:", batch.frames.shape, batch.frames.dtype)
print("pixel values:", np.unique(batch.frames))          # strictly {0, 255}

# every frame keeps the glyph fully inside the borders
on_pixels = batch.frames.reshape(12, 20, -1).sum(axis=2) / 255
print("on-pixels per frame (seq 0):", on_pixels[0].astype(int))

# a custom glyph with zero velocity just sits there
still = data.GlyphSpec(data.DIGIT_BITMAPS[4], position=(10.0, 10.0), velocity=(0.0, 0.0))
frames = data.simulate_glyphs([still], num_frames=5, height=24, width=24)
print("static glyph identical across frames:", all(np.array_equal(frames[0], f) for f in frames))

# dataset files round-trip bit-exactly
path = os.path.join(out_dir, "demo.ds")
data.write_dataset(batch, path)
back = data.read_dataset(path)
print("round trip exact:", np.array_equal(back.frames, batch.frames))
print("file size:", os.path.getsize(path), "bytes")

# export the first few frames for eyeballing (any PGM viewer opens these)
for t in range(4):
    data.write_pgm(os.path.join(out_dir, f"glyph_t{t}.pgm"), batch.frames[0, t, 0])
print("wrote", out_dir + "/glyph_t*.pgm")
