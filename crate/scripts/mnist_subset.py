#!/usr/bin/env python3
"""Convert the 10,000 MNIST digits bundled in the npm `mnist` package into
gzip-compressed IDX files.

    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_subset.py package/src/digits data/mnist-10k

Pixel values in the package are b/255 rounded to three decimals, so rounding
v*255 recovers the original bytes exactly. Digits are written interleaved
(0,1,...,9,0,1,...) so any prefix is roughly class balanced.
"""
import gzip
import json
import struct
import sys
from pathlib import Path

SIZE = 28 * 28


def main(src: Path, dst: Path) -> None:
    per_class = []
    for digit in range(10):
        raw = json.loads((src / f"{digit}.json").read_text())["data"]
        assert len(raw) % SIZE == 0
        per_class.append([raw[i : i + SIZE] for i in range(0, len(raw), SIZE)])

    images, labels = [], []
    cursor = [0] * 10
    while any(cursor[d] < len(per_class[d]) for d in range(10)):
        for d in range(10):
            if cursor[d] < len(per_class[d]):
                images.append(per_class[d][cursor[d]])
                labels.append(d)
                cursor[d] += 1

    n = len(images)
    pixels = bytearray()
    for img in images:
        for v in img:
            b = round(v * 255)
            assert 0 <= b <= 255 and abs(b / 255 - v) <= 0.0005 + 1e-12
            pixels.append(b)

    dst.mkdir(parents=True, exist_ok=True)
    with gzip.GzipFile(dst / "images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        f.write(bytes(pixels))
    with gzip.GzipFile(dst / "labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(bytes(labels))
    print(f"wrote {n} examples to {dst}")


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
