"""Fetch MovieLens 100K and write it as ``UserID::MovieID::Rating::Timestamp`` lines.

The GroupLens site may be unreachable from build sandboxes, so the ratings are
taken from the RecBole wheel on PyPI, which ships ML-100K as a tab-separated
``.inter`` file. Usage::

    python scripts/fetch_movielens.py [--out data/ml-100k/ratings.dat]
"""
from __future__ import annotations

import argparse
import glob
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

INTER = "recbole/dataset_example/ml-100k/ml-100k.inter"
DEFAULT_OUT = Path(__file__).resolve().parent.parent / "data" / "ml-100k" / "ratings.dat"


def fetch(out: Path = DEFAULT_OUT) -> Path:
    if out.exists():
        return out
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "--quiet", "-d", tmp, "recbole==1.2.1"],
            check=True,
        )
        (wheel,) = glob.glob(f"{tmp}/recbole-*.whl")
        lines = zipfile.ZipFile(wheel).read(INTER).decode("utf-8").splitlines()
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp_out = out.with_suffix(".partial")
    with open(tmp_out, "w", encoding="utf-8") as f:
        for line in lines[1:]:  # header row
            user, item, rating, ts = line.split("\t")
            f.write(f"{user}::{item}::{int(float(rating))}::{int(float(ts))}\n")
    tmp_out.replace(out)
    return out


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--out", type=Path, default=DEFAULT_OUT)
    print(fetch(parser.parse_args().out))


if __name__ == "__main__":
    main()
