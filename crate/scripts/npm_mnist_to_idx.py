"""Convert the digit JSON files shipped in the `mnist` npm package into IDX files.

Usage: python3 scripts/npm_mnist_to_idx.py <unpacked-package-dir> <out-dir>

The package stores 10,000 MNIST digits as per-class JSON arrays of pixel
intensities scaled to [0, 1] with three decimals. Pixels are scaled back to
bytes with round(v * 255) and samples are written in a fixed shuffled order.
"""
import gzip
import json
import os
import random
import struct
import sys


def main(pkg, out):
    samples = []
    for label in range(10):
        with open(os.path.join(pkg, "src", "digits", f"{label}.json")) as f:
            data = json.load(f)["data"]
        for i in range(len(data) // 784):
            px = bytes(min(255, round(v * 255)) for v in data[i * 784:(i + 1) * 784])
            samples.append((px, label))
    random.Random(0).shuffle(samples)
    os.makedirs(out, exist_ok=True)
    n = len(samples)
    # mtime=0 keeps the gzip output byte-stable across regenerations
    with gzip.GzipFile(os.path.join(out, "mnist10k-images-idx3-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, n, 28, 28))
        for px, _ in samples:
            f.write(px)
    with gzip.GzipFile(os.path.join(out, "mnist10k-labels-idx1-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, n))
        f.write(bytes(label for _, label in samples))


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
