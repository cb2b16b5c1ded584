#!/usr/bin/env python3
"""Build IDX files from the digits bundled in the `mnist` npm package.

The package ships 10,000 MNIST digits as JSON arrays of intensity/255
rounded to three decimals, which is fine enough to recover the original
bytes exactly. The first TRAIN_PER_CLASS digits of every class go to the
training files and the remainder to the test files.

usage: mnist_from_npm.py <unpacked npm package dir> <output dir>
"""
import json
import os
import struct
import sys

TRAIN_PER_CLASS = 700
SIDE = 28


def write_idx(out_dir, prefix, images, labels):
    with open(os.path.join(out_dir, f"{prefix}-images-idx3-ubyte"), "wb") as f:
        f.write(struct.pack(">IIII", 2051, len(images), SIDE, SIDE))
        for img in images:
            f.write(bytes(img))
    with open(os.path.join(out_dir, f"{prefix}-labels-idx1-ubyte"), "wb") as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(bytes(labels))


def main():
    pkg, out_dir = sys.argv[1], sys.argv[2]
    os.makedirs(out_dir, exist_ok=True)
    train, test = ([], []), ([], [])
    for digit in range(10):
        with open(os.path.join(pkg, "src", "digits", f"{digit}.json")) as f:
            raw = json.load(f)["data"]
        size = SIDE * SIDE
        for i in range(len(raw) // size):
            img = [round(v * 255) for v in raw[i * size:(i + 1) * size]]
            dst = train if i < TRAIN_PER_CLASS else test
            dst[0].append(img)
            dst[1].append(digit)
    write_idx(out_dir, "train", *train)
    write_idx(out_dir, "t10k", *test)
    print(f"train: {len(train[1])} test: {len(test[1])} -> {out_dir}")


if __name__ == "__main__":
    main()
