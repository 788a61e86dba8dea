#!/usr/bin/env python3
"""Build an MNIST training subset in IDX format.

The source is the `mnist-data` npm package (version 1.2.6), which ships the
original, uncompressed MNIST IDX files. The first --count records (default
12,000) of the training set are copied in their original order.

Usage:
    scripts/build_mnist_subset.py [--package DIR] [--count N] [--out DIR]

Without --package the tarball is fetched with `npm pack` into a temporary
directory. Output: train-images-idx3-ubyte and train-labels-idx1-ubyte.
"""

import argparse
import pathlib
import struct
import subprocess
import tarfile
import tempfile

IMAGE_MAGIC = 0x803
LABEL_MAGIC = 0x801


def fetch_package(workdir: pathlib.Path) -> pathlib.Path:
    subprocess.run(["npm", "pack", "mnist-data@1.2.6"], cwd=workdir, check=True, capture_output=True)
    tarball = next(workdir.glob("mnist-data-*.tgz"))
    with tarfile.open(tarball) as tar:
        tar.extractall(workdir)
    return workdir / "package"


def read_subset(package: pathlib.Path, count: int):
    images = (package / "data" / "train-images-idx3-ubyte").read_bytes()
    labels = (package / "data" / "train-labels-idx1-ubyte").read_bytes()
    magic, n, rows, cols = struct.unpack(">IIII", images[:16])
    if magic != IMAGE_MAGIC or (rows, cols) != (28, 28):
        raise SystemExit("unexpected image file header")
    lmagic, ln = struct.unpack(">II", labels[:8])
    if lmagic != LABEL_MAGIC or ln != n:
        raise SystemExit("unexpected label file header")
    if count > n:
        raise SystemExit(f"requested {count} images, the file has {n}")
    size = rows * cols
    return images[16 : 16 + count * size], labels[8 : 8 + count]


def write_idx(out: pathlib.Path, pixels: bytes, labels: bytes):
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "train-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", IMAGE_MAGIC, len(labels), 28, 28))
        f.write(pixels)
    with open(out / "train-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", LABEL_MAGIC, len(labels)))
        f.write(labels)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--package", type=pathlib.Path, help="unpacked mnist-data npm package")
    parser.add_argument("--count", type=int, default=12000)
    parser.add_argument("--out", type=pathlib.Path, default=pathlib.Path("data/mnist"))
    args = parser.parse_args()

    with tempfile.TemporaryDirectory() as tmp:
        package = args.package or fetch_package(pathlib.Path(tmp))
        pixels, labels = read_subset(package, args.count)
    write_idx(args.out, pixels, labels)
    counts = [labels.count(d) for d in range(10)]
    print(f"wrote {len(labels)} images to {args.out} (per class: {counts})")


if __name__ == "__main__":
    main()
