#!/usr/bin/env python3
"""Write the 5000-image MNIST subset bundled with mlxtend as IDX files.

The subset holds 500 images per digit. The first 400 per class go to the
train split and the remaining 100 per class to the test split, keeping the
original order within each class.

    pip download --no-deps mlxtend -d /tmp/pk
    python3 tools/make_mnist_subset.py /tmp/pk/mlxtend-*.whl data/mnist5k
"""
import gzip
import struct
import sys
import zipfile
from pathlib import Path

TRAIN_PER_CLASS = 400


def write_images(path, rows):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(rows), 28, 28))
        for r in rows:
            f.write(bytes(r))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    wheel, out = sys.argv[1], Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    raw = zipfile.ZipFile(wheel).read("mlxtend/data/data/mnist_5k.csv.gz")
    lines = gzip.decompress(raw).decode().splitlines()
    seen = [0] * 10
    split = {"train": ([], []), "test": ([], [])}
    for line in lines:
        vals = [int(float(v)) for v in line.split(",")]
        pixels, label = vals[:-1], vals[-1]
        which = "train" if seen[label] < TRAIN_PER_CLASS else "test"
        seen[label] += 1
        split[which][0].append(pixels)
        split[which][1].append(label)
    for name, (imgs, labels) in split.items():
        write_images(out / f"{name}-images-idx3-ubyte", imgs)
        write_labels(out / f"{name}-labels-idx1-ubyte", labels)
        print(name, len(labels))


if __name__ == "__main__":
    main()
