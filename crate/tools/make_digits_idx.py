#!/usr/bin/env python3
"""Regenerates data/digits-*-ubyte from scikit-learn's bundled 8x8
handwritten-digits set (1,797 samples, 10 classes). Pixel intensities 0..16
are rescaled to 0..255 so the files follow the usual IDX byte convention."""

import struct

from sklearn.datasets import load_digits


def main() -> None:
    digits = load_digits()
    images = digits.images  # (1797, 8, 8), values 0..16
    labels = digits.target

    n, rows, cols = images.shape
    with open("data/digits-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, rows, cols))
        for img in images:
            f.write(bytes(int(round(v * 255.0 / 16.0)) for v in img.flat))

    with open("data/digits-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(bytes(int(v) for v in labels))

    print(f"wrote {n} images ({rows}x{cols}) and labels")


if __name__ == "__main__":
    main()
