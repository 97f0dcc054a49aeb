#!/usr/bin/env python3
"""Fetch CIFAR-10 in its binary layout (data_batch_{1..5}.bin, test_batch.bin).

Two sources:
  toronto  the official cifar-10-binary.tar.gz (stdlib only)
  npm      the tfjs-cifar10 package, whose PNG rows are re-encoded into the
           binary layout (needs numpy and Pillow)

Either way every record is <label byte><1024 R><1024 G><1024 B>.
"""

import argparse
import io
import json
import pathlib
import sys
import tarfile
import urllib.request

TORONTO_URL = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz"
NPM_URL = "https://registry.npmjs.org/tfjs-cifar10/-/tfjs-cifar10-1.1.1.tgz"
FILES = [f"data_batch_{i}.bin" for i in range(1, 6)] + ["test_batch.bin"]
CLASSES = ["airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck"]


def download(url):
    print(f"downloading {url}", file=sys.stderr)
    with urllib.request.urlopen(url) as r:
        return r.read()


def from_toronto(out):
    with tarfile.open(fileobj=io.BytesIO(download(TORONTO_URL)), mode="r:gz") as tar:
        for member in tar.getmembers():
            name = pathlib.PurePosixPath(member.name).name
            if name in FILES or name == "batches.meta.txt":
                (out / name).write_bytes(tar.extractfile(member).read())


def from_npm(out):
    import numpy as np
    from PIL import Image

    with tarfile.open(fileobj=io.BytesIO(download(NPM_URL)), mode="r:gz") as tar:
        def member(name):
            return tar.extractfile(f"package/{name}").read()

        train_labels = json.loads(member("train_lables.json"))
        test_labels = json.loads(member("test_lables.json"))

        def convert(png, labels, name):
            rows = np.asarray(Image.open(io.BytesIO(member(png))).convert("RGB"))  # (10000, 1024, 3)
            assert rows.shape == (10000, 1024, 3), rows.shape
            rec = np.empty((10000, 3073), np.uint8)
            rec[:, 0] = labels
            rec[:, 1:] = rows.transpose(0, 2, 1).reshape(10000, 3072)
            rec.tofile(out / name)

        for i in range(5):
            convert(f"data_batch_{i + 1}.png", train_labels[i * 10000:(i + 1) * 10000], f"data_batch_{i + 1}.bin")
        convert("test_batch.png", test_labels, "test_batch.bin")
    (out / "batches.meta.txt").write_text("\n".join(CLASSES) + "\n")


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--out", default="data/cifar-10-batches-bin", help="target directory")
    ap.add_argument("--source", choices=["toronto", "npm"], default="toronto")
    args = ap.parse_args()
    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (from_toronto if args.source == "toronto" else from_npm)(out)
    for name in FILES:
        size = (out / name).stat().st_size
        if size != 10000 * 3073:
            sys.exit(f"{name}: unexpected size {size}")
    print(f"CIFAR-10 ready in {out}")


if __name__ == "__main__":
    main()
