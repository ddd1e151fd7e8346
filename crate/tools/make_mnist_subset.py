#!/usr/bin/env python3
"""Build a small MNIST subset in IDX format from the `mnist` npm package.

The npm package bundles 10,000 real MNIST digits as JSON arrays of pixel
intensities in [0, 1] (256 distinct values, one per original byte). This
script maps them back to bytes, interleaves the classes with a fixed seed and
writes 6000 training / 4000 test samples as canonical IDX files.

    npm pack mnist@1.1.0 && tar xzf mnist-1.1.0.tgz
    python3 tools/make_mnist_subset.py package data/mnist-subset
"""
import json
import random
import struct
import sys
from pathlib import Path

N_TRAIN = 6000


def write_idx_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_idx_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    pkg = Path(sys.argv[1])
    out = Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    samples = []
    for digit in range(10):
        raw = json.loads((pkg / "src" / "digits" / f"{digit}.json").read_text())["data"]
        n = len(raw) // 784
        for i in range(n):
            px = [int(round(v * 255)) for v in raw[i * 784:(i + 1) * 784]]
            samples.append((px, digit))
    random.Random(20240611).shuffle(samples)
    train, test = samples[:N_TRAIN], samples[N_TRAIN:]
    write_idx_images(out / "train-images-idx3-ubyte", [s[0] for s in train])
    write_idx_labels(out / "train-labels-idx1-ubyte", [s[1] for s in train])
    write_idx_images(out / "t10k-images-idx3-ubyte", [s[0] for s in test])
    write_idx_labels(out / "t10k-labels-idx1-ubyte", [s[1] for s in test])
    print(f"wrote {len(train)} train / {len(test)} test samples to {out}")


if __name__ == "__main__":
    main()
