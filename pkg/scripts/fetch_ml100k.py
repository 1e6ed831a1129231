"""Materialize MovieLens-100K in its native ``u.data`` / ``u.user`` layout.

The GroupLens host is not always reachable from CI sandboxes, so this pulls the
copy that ships inside the ``pytorch-widedeep`` wheel on PyPI and writes it
back out in the original tab/pipe separated formats. Only the wheel is
downloaded; the package itself is never installed or imported.

    python scripts/fetch_ml100k.py [--out data/ml-100k]
"""
import argparse
import glob
import io
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

import pandas as pd

WHEEL = "pytorch-widedeep==1.7.0"
PREFIX = "pytorch_widedeep/datasets/data/MovieLens100k_"


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "data" / "ml-100k"))
    args = parser.parse_args(argv)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "-q", WHEEL, "-d", tmp],
            check=True,
        )
        whl = zipfile.ZipFile(glob.glob(f"{tmp}/*.whl")[0])
        ratings = pd.read_parquet(io.BytesIO(whl.read(PREFIX + "data.parquet.brotli")))
        users = pd.read_parquet(io.BytesIO(whl.read(PREFIX + "users.parquet.brotli")))

    ratings[["user_id", "movie_id", "rating", "timestamp"]].to_csv(
        out / "u.data", sep="\t", header=False, index=False
    )
    users[["user_id", "age", "gender", "occupation", "zip_code"]].to_csv(
        out / "u.user", sep="|", header=False, index=False
    )
    print(f"wrote {len(ratings)} ratings, {len(users)} users to {out}")


if __name__ == "__main__":
    main()
