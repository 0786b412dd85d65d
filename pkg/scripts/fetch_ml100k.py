"""Fetch MovieLens-100k ratings as ``data/ml-100k.tsv``.

grouplens.org is the canonical source (``ml-100k/u.data``, tab-separated
``user item rating timestamp``, no header) and can be used directly. This
script instead pulls the copy bundled in the ``recbole`` wheel from PyPI,
which is handy where only a package index is reachable. The file has a
header line, which ``parse_interactions`` skips.
"""

import argparse
import glob
import os
import subprocess
import sys
import tempfile
import zipfile

MEMBER = "recbole/dataset_example/ml-100k/ml-100k.inter"


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default=os.path.join("data", "ml-100k.tsv"))
    args = parser.parse_args()
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run([sys.executable, "-m", "pip", "download", "--no-deps", "-q",
                        "-d", tmp, "recbole==1.2.1"], check=True)
        (wheel,) = glob.glob(os.path.join(tmp, "*.whl"))
        with zipfile.ZipFile(wheel) as zf:
            payload = zf.read(MEMBER)
    os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
    with open(args.out, "wb") as fh:
        fh.write(payload)
    n_ratings = payload.count(b"\n") - 1
    print(f"wrote {args.out} ({n_ratings} ratings)")


if __name__ == "__main__":
    main()
