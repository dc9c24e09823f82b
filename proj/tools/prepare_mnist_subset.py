#!/usr/bin/env python3
"""Extract the 5000-image MNIST subset shipped inside the mlxtend wheel.

Writes data/mnist/mnist_5k.csv: 784 pixel columns (0-255) and the label last.
The full 70k MNIST archive is not fetched; place the four IDX files in
data/mnist/ yourself to use it instead.
"""
import argparse
import gzip
import pathlib
import subprocess
import sys
import tempfile
import zipfile

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def find_wheel(explicit):
    if explicit:
        return pathlib.Path(explicit)
    tmp = pathlib.Path(tempfile.mkdtemp())
    subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "-d", str(tmp), "mlxtend==0.24.0"],
                   check=True)
    wheels = sorted(tmp.glob("mlxtend-*.whl"))
    if not wheels:
        sys.exit("pip download produced no mlxtend wheel")
    return wheels[0]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--wheel", help="existing mlxtend wheel; downloaded with pip when absent")
    ap.add_argument("--out", default="data/mnist/mnist_5k.csv")
    args = ap.parse_args()
    out = pathlib.Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with zipfile.ZipFile(find_wheel(args.wheel)) as zf:
        text = gzip.decompress(zf.read(MEMBER)).decode()
    rows = [r for r in text.splitlines() if r.strip()]
    for i, r in enumerate(rows):
        if len(r.split(",")) != 785:
            sys.exit(f"row {i + 1}: expected 785 fields")
    out.write_text("\n".join(rows) + "\n")
    print(f"wrote {len(rows)} rows to {out}")


if __name__ == "__main__":
    main()
