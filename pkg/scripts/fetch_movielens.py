"""Rebuild MovieLens 100K ``u.data`` from the copy bundled in the RecBole wheel.

The sandbox has no route to files.grouplens.org, but the RecBole wheel on PyPI
ships ``ml-100k.inter``: the same 100,000 rows as ``u.data`` plus a typed
header line. This script downloads the wheel, strips the header and writes
``data/ml-100k/u.data`` in the original tab-separated layout.

    python scripts/fetch_movielens.py [--out data/ml-100k/u.data]
"""

import argparse
import glob
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

MEMBER = "recbole/dataset_example/ml-100k/ml-100k.inter"


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default="data/ml-100k/u.data")
    parser.add_argument("--version", default="1.2.1", help="recbole wheel version")
    args = parser.parse_args(argv)

    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "-q",
             "-d", tmp, f"recbole=={args.version}"],
            check=True,
        )
        wheel = glob.glob(f"{tmp}/recbole-*.whl")[0]
        text = zipfile.ZipFile(wheel).read(MEMBER).decode("utf-8")

    lines = text.splitlines()
    if not lines[0].startswith("user_id:token"):
        sys.exit(f"unexpected header in {MEMBER}: {lines[0]!r}")
    rows = []
    for line in lines[1:]:
        user, item, rating, ts = line.split("\t")
        rows.append(f"{user}\t{item}\t{int(float(rating))}\t{int(float(ts))}\n")

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("".join(rows), encoding="utf-8")
    print(f"wrote {len(rows)} ratings to {out}")


if __name__ == "__main__":
    main()
