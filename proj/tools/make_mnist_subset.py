#!/usr/bin/env python3
"""Convert the 5000-image MNIST sample bundled with mlxtend into IDX files.

Usage: make_mnist_subset.py <mnist_5k.csv.gz> <output_dir>

The CSV holds one image per row: 784 pixel values followed by the label.
"""
import gzip
import struct
import sys
from pathlib import Path

import numpy as np


def main() -> int:
    if len(sys.argv) != 3:
        print(__doc__, file=sys.stderr)
        return 1
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    with gzip.open(src, "rt") as fh:
        rows = np.loadtxt(fh, delimiter=",")
    pixels = rows[:, :-1].astype(np.uint8)
    labels = rows[:, -1].astype(np.uint8)
    count = pixels.shape[0]
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "images-idx3-ubyte", "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, count, 28, 28))
        fh.write(pixels.tobytes())
    with open(out / "labels-idx1-ubyte", "wb") as fh:
        fh.write(struct.pack(">II", 0x00000801, count))
        fh.write(labels.tobytes())
    print(f"wrote {count} images to {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
