#!/usr/bin/env python3
"""Build a 10k-image MNIST subset in IDX format from the npm `mnist` package.

The npm package ships 10,000 MNIST digits as JSON (pixel values in [0, 1]).
This script writes them as standard IDX files so the native loader can read
them exactly like the official distribution:

    <out>/mnist/train-images-idx3-ubyte   (9000 images)
    <out>/mnist/train-labels-idx1-ubyte
    <out>/mnist/t10k-images-idx3-ubyte    (1000 images)
    <out>/mnist/t10k-labels-idx1-ubyte

Usage: fetch_mnist_subset.py [--out data] [--package path/to/mnist-x.y.z.tgz]
"""
import argparse
import json
import random
import struct
import subprocess
import tarfile
import tempfile
from pathlib import Path

TRAIN_COUNT = 9000


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
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="data")
    ap.add_argument("--package", default=None, help="pre-downloaded npm tarball")
    ap.add_argument("--seed", type=int, default=20211)
    args = ap.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        tgz = args.package
        if tgz is None:
            name = subprocess.check_output(["npm", "pack", "mnist@1.1.0"], cwd=tmp, text=True).strip().splitlines()[-1]
            tgz = str(Path(tmp) / name)
        with tarfile.open(tgz) as tar:
            tar.extractall(tmp)
        samples = []
        for digit in range(10):
            data = json.loads((Path(tmp) / "package/src/digits" / f"{digit}.json").read_text())["data"]
            assert len(data) % 784 == 0
            for k in range(len(data) // 784):
                px = data[k * 784:(k + 1) * 784]
                samples.append(([min(255, max(0, round(v * 255))) for v in px], digit))

    random.Random(args.seed).shuffle(samples)
    out = Path(args.out) / "mnist"
    out.mkdir(parents=True, exist_ok=True)
    train, test = samples[:TRAIN_COUNT], samples[TRAIN_COUNT:]
    write_idx_images(out / "train-images-idx3-ubyte", [s[0] for s in train])
    write_idx_labels(out / "train-labels-idx1-ubyte", [s[1] for s in train])
    write_idx_images(out / "t10k-images-idx3-ubyte", [s[0] for s in test])
    write_idx_labels(out / "t10k-labels-idx1-ubyte", [s[1] for s in test])
    print(f"wrote {len(train)} train / {len(test)} test images to {out}")


if __name__ == "__main__":
    main()
