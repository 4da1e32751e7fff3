#!/usr/bin/env python3
"""Write a desk-scale MNIST subset as IDX files.

Sources, in order of preference:
  --mnist-dir DIR   directory holding the official train-images-idx3-ubyte(.gz)
                    and train-labels-idx1-ubyte(.gz) files
  --mlxtend-wheel W the mlxtend wheel, which bundles a 5000-image MNIST
                    sample (mlxtend/data/data/mnist_5k.csv.gz, 500 per class)

The pool is shuffled with a fixed seed and split into train/test files.
"""
import argparse
import gzip
import random
import struct
import zipfile
from pathlib import Path


def read_maybe_gz(path: Path) -> bytes:
    if path.exists():
        return path.read_bytes()
    gz = path.with_name(path.name + ".gz")
    return gzip.decompress(gz.read_bytes())


def pool_from_mnist(mnist_dir: Path):
    img = read_maybe_gz(mnist_dir / "train-images-idx3-ubyte")
    lab = read_maybe_gz(mnist_dir / "train-labels-idx1-ubyte")
    n, rows, cols = struct.unpack(">III", img[4:16])
    size = rows * cols
    return [(img[16 + i * size:16 + (i + 1) * size], lab[8 + i]) for i in range(n)]


def pool_from_mlxtend(wheel: Path):
    with zipfile.ZipFile(wheel) as z:
        text = gzip.decompress(z.read("mlxtend/data/data/mnist_5k.csv.gz")).decode()
    pool = []
    for line in text.splitlines():
        fields = line.split(",")
        pixels = bytes(int(float(v)) for v in fields[:784])
        pool.append((pixels, int(fields[784])))
    return pool


def write_images(path: Path, images):
    with path.open("wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for pixels in images:
            f.write(pixels)


def write_labels(path: Path, labels):
    with path.open("wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def main():
    ap = argparse.ArgumentParser()
    src = ap.add_mutually_exclusive_group(required=True)
    src.add_argument("--mnist-dir", type=Path)
    src.add_argument("--mlxtend-wheel", type=Path)
    ap.add_argument("--out", type=Path, default=Path("data/mnist-desk"))
    ap.add_argument("--train", type=int, default=2000)
    ap.add_argument("--test", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=2023)
    args = ap.parse_args()

    pool = pool_from_mnist(args.mnist_dir) if args.mnist_dir else pool_from_mlxtend(args.mlxtend_wheel)
    if args.train + args.test > len(pool):
        raise SystemExit(f"pool has {len(pool)} images, need {args.train + args.test}")
    random.Random(args.seed).shuffle(pool)
    train, test = pool[:args.train], pool[args.train:args.train + args.test]

    args.out.mkdir(parents=True, exist_ok=True)
    write_images(args.out / "train-images-idx3-ubyte", [p for p, _ in train])
    write_labels(args.out / "train-labels-idx1-ubyte", [l for _, l in train])
    write_images(args.out / "t10k-images-idx3-ubyte", [p for p, _ in test])
    write_labels(args.out / "t10k-labels-idx1-ubyte", [l for _, l in test])
    print(f"wrote {len(train)} train / {len(test)} test images to {args.out}")


if __name__ == "__main__":
    main()
