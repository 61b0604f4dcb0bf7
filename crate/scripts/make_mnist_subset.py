#!/usr/bin/env python3
"""Build the desk-scale MNIST subset shipped under data/mnist/.

Source: the 10,000 MNIST digits bundled with the `mnist` npm package
(https://www.npmjs.com/package/mnist, v1.1.0). Pixels are stored there as
byte/255 rounded to three decimals, which round-trips to the original bytes.

Each digit class is split 80/20 into train/test. Train samples are
interleaved round-robin across classes so that any prefix of the train file
is class balanced (the `data.subsample` option takes a prefix).

Usage: scripts/make_mnist_subset.py [path/to/mnist-1.1.0.tgz] [out_dir]
"""
import gzip
import json
import struct
import subprocess
import sys
import tarfile
import tempfile
from pathlib import Path


def dump(out, stem, images, labels):
    with gzip.GzipFile(out / f"{stem}-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))
    with gzip.GzipFile(out / f"{stem}-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def main():
    tgz = Path(sys.argv[1]) if len(sys.argv) > 1 else None
    out = Path(sys.argv[2]) if len(sys.argv) > 2 else Path(__file__).resolve().parent.parent / "data" / "mnist"
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        if tgz is None:
            subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=tmp, check=True, capture_output=True)
            tgz = Path(tmp) / "mnist-1.1.0.tgz"
        per_class = []
        with tarfile.open(tgz) as tar:
            for d in range(10):
                raw = json.load(tar.extractfile(f"package/src/digits/{d}.json"))["data"]
                assert len(raw) % 784 == 0
                imgs = [
                    [int(round(v * 255)) for v in raw[i : i + 784]]
                    for i in range(0, len(raw), 784)
                ]
                per_class.append(imgs)
    train, test = [], []
    for d, imgs in enumerate(per_class):
        cut = int(len(imgs) * 0.8)
        train.append([(img, d) for img in imgs[:cut]])
        test.extend((img, d) for img in imgs[cut:])
    interleaved = []
    for i in range(max(len(c) for c in train)):
        for c in train:
            if i < len(c):
                interleaved.append(c[i])
    dump(out, "train", [i for i, _ in interleaved], [l for _, l in interleaved])
    dump(out, "t10k", [i for i, _ in test], [l for _, l in test])
    print(f"train={len(interleaved)} test={len(test)} -> {out}")


if __name__ == "__main__":
    main()
