"""Builds the bundled MNIST subset (IDX, gzipped) from the digits shipped in the
`mnist` npm package (MIT, Juan Cazala), which stores 28x28 MNIST digits as
JSON arrays of intensities in [0, 1].

Usage: python3 scripts/make_mnist_subset.py <path-to-npm-package> <out-dir>
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path

SIZE = 28 * 28
TRAIN = 8000


def write_idx(path, magic, dims, payload):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">I", magic))
        for d in dims:
            f.write(struct.pack(">I", d))
        f.write(bytes(payload))


def main():
    pkg, out = Path(sys.argv[1]), Path(sys.argv[2])
    samples = []
    for label in range(10):
        raw = json.loads((pkg / "src" / "digits" / f"{label}.json").read_text())["data"]
        for i in range(len(raw) // SIZE):
            pixels = [min(255, max(0, round(v * 255))) for v in raw[i * SIZE:(i + 1) * SIZE]]
            samples.append((pixels, label))
    random.Random(20250101).shuffle(samples)
    splits = {"train": samples[:TRAIN], "t10k": samples[TRAIN:]}
    out.mkdir(parents=True, exist_ok=True)
    for name, part in splits.items():
        images = [p for pixels, _ in part for p in pixels]
        labels = [label for _, label in part]
        write_idx(out / f"{name}-images-idx3-ubyte.gz", 0x00000803, [len(part), 28, 28], images)
        write_idx(out / f"{name}-labels-idx1-ubyte.gz", 0x00000801, [len(part)], labels)
        print(name, len(part))


if __name__ == "__main__":
    main()
