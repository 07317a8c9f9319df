#!/usr/bin/env python3
"""Build a small balanced MNIST subset in IDX format.

Source: the digit JSON files shipped in the `mnist` npm package
(`npm pack mnist`, then extract; files live under package/src/digits/).
Each JSON holds a flat list of 28x28 images with pixels scaled to [0, 1].

Usage: mnist_subset.py <digits-dir> <out-dir> [train-per-class] [test-per-class]
"""
import json
import struct
import sys
from pathlib import Path


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    n_train = int(sys.argv[3]) if len(sys.argv) > 3 else 100
    n_test = int(sys.argv[4]) if len(sys.argv) > 4 else 100
    out.mkdir(parents=True, exist_ok=True)
    per_class_train, per_class_test = [], []
    for digit in range(10):
        flat = json.loads((src / f"{digit}.json").read_text())["data"]
        imgs = [
            [min(255, max(0, round(v * 255))) for v in flat[i * 784:(i + 1) * 784]]
            for i in range(len(flat) // 784)
        ]
        per_class_train.append([(img, digit) for img in imgs[:n_train]])
        per_class_test.append([(img, digit) for img in imgs[n_train:n_train + n_test]])
    # interleave classes so prefixes stay balanced
    train = [p for row in zip(*per_class_train) for p in row]
    test = [p for row in zip(*per_class_test) for p in row]
    write_images(out / "train-images-idx3-ubyte", [p[0] for p in train])
    write_labels(out / "train-labels-idx1-ubyte", [p[1] for p in train])
    write_images(out / "t10k-images-idx3-ubyte", [p[0] for p in test])
    write_labels(out / "t10k-labels-idx1-ubyte", [p[1] for p in test])


if __name__ == "__main__":
    main()
