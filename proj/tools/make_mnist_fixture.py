#!/usr/bin/env python3
"""Write the 5000-image MNIST sample shipped with mlxtend as gzipped IDX files.

Usage: make_mnist_fixture.py <mnist_5k.csv.gz | mlxtend wheel> <out_dir>

The sample is split by a fixed permutation into 4000 training images
(train-*) and 1000 test images (t10k-*).
"""
import gzip
import io
import random
import struct
import sys
import zipfile
from pathlib import Path


def read_rows(src: Path):
    if src.suffix == ".whl":
        raw = zipfile.ZipFile(src).read("mlxtend/data/data/mnist_5k.csv.gz")
    else:
        raw = src.read_bytes()
    text = gzip.decompress(raw).decode()
    rows = []
    for line in text.strip().splitlines():
        vals = [int(float(v)) for v in line.split(",")]
        rows.append((bytes(vals[:784]), vals[784]))
    return rows


def write_idx(path: Path, images, labels):
    img = io.BytesIO()
    img.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
    for im in images:
        img.write(im)
    lab = io.BytesIO()
    lab.write(struct.pack(">II", 0x00000801, len(labels)))
    lab.write(bytes(labels))
    # mtime=0 keeps the archives byte-reproducible
    with gzip.GzipFile(path.with_name(path.name + "-images-idx3-ubyte.gz"), "wb", mtime=0) as f:
        f.write(img.getvalue())
    with gzip.GzipFile(path.with_name(path.name + "-labels-idx1-ubyte.gz"), "wb", mtime=0) as f:
        f.write(lab.getvalue())


def main():
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    rows = read_rows(src)
    order = list(range(len(rows)))
    random.Random(20190520).shuffle(order)
    train = [rows[i] for i in order[:4000]]
    test = [rows[i] for i in order[4000:]]
    write_idx(out / "train", [r[0] for r in train], [r[1] for r in train])
    write_idx(out / "t10k", [r[0] for r in test], [r[1] for r in test])


if __name__ == "__main__":
    main()
