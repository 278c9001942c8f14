#!/usr/bin/env python3
"""Dump a pickled goal set ({"train": [...], "test": [...]}) as JSON for `dxformer convert`.

Slot order inside each goal is kept, so implicit symptoms stay in annotation order.

    python3 tools/convert_pickle.py goal_set.p goal_set.json
    dxformer convert --input goal_set.json --out data/dxy
"""

import argparse
import json
import pickle
import sys


def plain(value):
    """Turn numpy scalars and other pickle residue into JSON-friendly values."""
    if isinstance(value, dict):
        return {str(k): plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [plain(v) for v in value]
    if hasattr(value, "item") and callable(value.item):
        return value.item()
    return value


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("pickle_path")
    parser.add_argument("json_path", nargs="?", default="-")
    args = parser.parse_args(argv)

    with open(args.pickle_path, "rb") as fh:
        data = pickle.load(fh, encoding="latin1")
    if not isinstance(data, dict):
        sys.exit(f"error: expected a dict of splits, got {type(data).__name__}")
    unknown = set(data) - {"train", "dev", "test"}
    if unknown:
        sys.exit(f"error: unexpected split names {sorted(unknown)}")

    out = {split: plain(records) for split, records in data.items()}
    text = json.dumps(out, ensure_ascii=False)
    if args.json_path == "-":
        sys.stdout.write(text + "\n")
    else:
        with open(args.json_path, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")


if __name__ == "__main__":
    main()
