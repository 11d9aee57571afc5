"""Convert the digit samples bundled with the npm `mnist` package into IDX files.

Usage: python3 scripts/make_digits.py <path-to-npm-mnist/src/digits> <out-dir>

The last 100 samples of every class form the held-out test split (1000
images, committed under fixtures/digits). Everything else is written as
the training split, which is only needed to re-train the fixture model.
"""
import json
import os
import struct
import sys

import numpy as np

HELD_OUT_PER_CLASS = 100


def write_idx_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        f.write(np.asarray(images, dtype=np.uint8).tobytes())


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())


def main():
    src, out = sys.argv[1], sys.argv[2]
    os.makedirs(out, exist_ok=True)
    train, test = [], []
    for digit in range(10):
        raw = json.load(open(os.path.join(src, f"{digit}.json")))["data"]
        data = np.rint(np.asarray(raw, dtype=np.float64) * 255.0).clip(0, 255)
        data = data.astype(np.uint8).reshape(-1, 784)
        cut = len(data) - HELD_OUT_PER_CLASS
        train += [(img, digit) for img in data[:cut]]
        test += [(img, digit) for img in data[cut:]]
    rng = np.random.default_rng(20240611)
    for name, split in (("train", train), ("test", test)):
        order = rng.permutation(len(split))
        images = [split[i][0] for i in order]
        labels = [split[i][1] for i in order]
        write_idx_images(os.path.join(out, f"{name}-images-idx3-ubyte"), images)
        write_idx_labels(os.path.join(out, f"{name}-labels-idx1-ubyte"), labels)
        print(name, len(labels))


if __name__ == "__main__":
    main()
