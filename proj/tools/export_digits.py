#!/usr/bin/env python3
"""Export the scikit-learn handwritten digits set to IDX binary files.

Produces the four files read by the C++ IDX loader:

    <out>/train-images-idx3-ubyte
    <out>/train-labels-idx1-ubyte
    <out>/test-images-idx3-ubyte
    <out>/test-labels-idx1-ubyte

The split is stratified per class (80/20) and fully deterministic, so the
committed files are reproducible byte for byte.
"""

import argparse
import struct
from pathlib import Path

import numpy as np
from sklearn.datasets import load_digits

SPLIT_SEED = 0
TEST_FRACTION = 0.2


def write_idx_images(path: Path, images: np.ndarray) -> None:
    n, h, w = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, h, w))
        f.write(images.astype(np.uint8).tobytes())


def write_idx_labels(path: Path, labels: np.ndarray) -> None:
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, labels.shape[0]))
        f.write(labels.astype(np.uint8).tobytes())


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", type=Path, default=Path("data/digits"))
    args = parser.parse_args()
    args.out.mkdir(parents=True, exist_ok=True)

    bunch = load_digits()
    # Pixel values are integers in [0, 16]; rescale to the full ubyte range.
    images = np.round(bunch.images * (255.0 / 16.0)).astype(np.uint8)
    labels = bunch.target.astype(np.uint8)

    rng = np.random.RandomState(SPLIT_SEED)
    train_idx, test_idx = [], []
    for cls in np.unique(labels):
        members = np.flatnonzero(labels == cls)
        members = members[rng.permutation(members.size)]
        n_test = int(round(members.size * TEST_FRACTION))
        test_idx.extend(members[:n_test])
        train_idx.extend(members[n_test:])
    train_idx = np.sort(np.array(train_idx))
    test_idx = np.sort(np.array(test_idx))

    write_idx_images(args.out / "train-images-idx3-ubyte", images[train_idx])
    write_idx_labels(args.out / "train-labels-idx1-ubyte", labels[train_idx])
    write_idx_images(args.out / "test-images-idx3-ubyte", images[test_idx])
    write_idx_labels(args.out / "test-labels-idx1-ubyte", labels[test_idx])

    print(f"train: {train_idx.size} samples, test: {test_idx.size} samples -> {args.out}")


if __name__ == "__main__":
    main()
