#!/usr/bin/env python3
"""Write a small MNIST subset as gzipped IDX files.

The source is the 5000-digit CSV shipped with mlxtend (784 pixel columns
followed by the label), either as the .csv.gz itself or inside the wheel.
"""
import argparse
import gzip
import io
import random
import struct
import zipfile
from pathlib import Path


def read_rows(source: Path):
    if source.suffix == ".whl":
        with zipfile.ZipFile(source) as z:
            raw = z.read("mlxtend/data/data/mnist_5k.csv.gz")
    else:
        raw = source.read_bytes()
    text = gzip.decompress(raw).decode()
    rows = []
    for line in text.splitlines():
        values = [int(float(v)) for v in line.split(",")]
        rows.append((bytes(values[:784]), values[784]))
    return rows


def write_idx(path: Path, images, labels):
    with gzip.GzipFile(path.with_name(path.name + "-images-idx3-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for img in images:
            f.write(img)
    with gzip.GzipFile(path.with_name(path.name + "-labels-idx1-ubyte.gz"), "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("source", type=Path, help="mnist_5k.csv.gz or an mlxtend wheel")
    ap.add_argument("--out", type=Path, default=Path("data/mnist-subset"))
    ap.add_argument("--train", type=int, default=4000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    rows = read_rows(args.source)
    random.Random(args.seed).shuffle(rows)
    train, test = rows[: args.train], rows[args.train :]
    args.out.mkdir(parents=True, exist_ok=True)
    write_idx(args.out / "train", [r[0] for r in train], [r[1] for r in train])
    write_idx(args.out / "t10k", [r[0] for r in test], [r[1] for r in test])
    print(f"wrote {len(train)} train / {len(test)} test samples to {args.out}")


if __name__ == "__main__":
    main()
