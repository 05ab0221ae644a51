#!/usr/bin/env python3
"""Produce ``data/ml-100k.tsv`` (user<TAB>item edge list) from MovieLens-100K.

Sources, in order of preference:
  --udata PATH   the original GroupLens ``u.data`` file
  --inter PATH   an atomic ``ml-100k.inter`` file
  (default)      the ``ml-100k.inter`` example bundled in the RecBole wheel,
                 fetched with ``pip download``
"""
from __future__ import annotations

import argparse
import subprocess
import sys
import tempfile
import zipfile
from pathlib import Path

INTER_MEMBER = "recbole/dataset_example/ml-100k/ml-100k.inter"


def from_udata(text: str) -> list[tuple[str, str]]:
    return [tuple(line.split("\t")[:2]) for line in text.splitlines() if line.strip()]


def from_inter(text: str) -> list[tuple[str, str]]:
    lines = text.splitlines()
    header = [h.split(":")[0] for h in lines[0].split("\t")]
    ui, ii = header.index("user_id"), header.index("item_id")
    out = []
    for line in lines[1:]:
        if line.strip():
            fields = line.split("\t")
            out.append((fields[ui], fields[ii]))
    return out


def fetch_recbole_inter() -> str:
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(
            [sys.executable, "-m", "pip", "download", "--no-deps", "-q", "-d", tmp, "recbole==1.2.1"],
            check=True,
        )
        wheel = next(Path(tmp).glob("recbole-*.whl"))
        with zipfile.ZipFile(wheel) as zf:
            return zf.read(INTER_MEMBER).decode("utf-8")


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--udata", type=Path)
    ap.add_argument("--inter", type=Path)
    ap.add_argument("--out", type=Path, default=Path(__file__).resolve().parent.parent / "data" / "ml-100k.tsv")
    args = ap.parse_args(argv)
    if args.udata:
        pairs = from_udata(args.udata.read_text(encoding="utf-8"))
    elif args.inter:
        pairs = from_inter(args.inter.read_text(encoding="utf-8"))
    else:
        pairs = from_inter(fetch_recbole_inter())
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        for u, i in pairs:
            fh.write(f"{u}\t{i}\n")
    print(f"wrote {len(pairs)} interactions to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
