from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import Mapping

REPO_ROOT = Path(__file__).resolve().parent.parent
if str(REPO_ROOT) not in sys.path:
    sys.path.insert(0, str(REPO_ROOT))

from histofuse.data import ALL_SUBTYPES, plant_synthetic_tree, scan_directory

# Per-subtype image counts of the public corpus; papillary carcinoma has no published count.
REFERENCE_COUNTS = {"A": 444, "F": 730, "PT": 453, "TA": 569, "DC": 797, "LC": 626, "MC": 792}


def parse_overrides(items: list[str]) -> dict[str, int]:
    overrides: dict[str, int] = {}
    for item in items:
        subtype, _, value = item.partition("=")
        subtype = subtype.strip().upper()
        if subtype not in ALL_SUBTYPES:
            raise ValueError(f"unknown subtype in --count: {item}")
        try:
            overrides[subtype] = int(value)
        except ValueError as exc:
            raise ValueError(f"--count expects SUBTYPE=N, got {item}") from exc
        if overrides[subtype] < 0:
            raise ValueError(f"--count must be >= 0, got {item}")
    return overrides


def scaled_counts(scale: float, overrides: Mapping[str, int] | None = None) -> dict[str, int]:
    """Reference counts times *scale*, at least one image per listed subtype."""
    if not 0.0 < scale <= 1.0:
        raise ValueError(f"--scale must be in (0, 1], got {scale}")
    counts = {subtype: max(1, round(REFERENCE_COUNTS[subtype] * scale)) if subtype in REFERENCE_COUNTS else 0
              for subtype in ALL_SUBTYPES}
    counts.update(overrides or {})
    return counts


def build_tree(root: Path, counts: Mapping[str, int], size: int, seed: int, manifest: Path | None) -> dict:
    written = plant_synthetic_tree(root, counts, size=size, seed=seed)
    summary = {"root": str(root), "images": len(written), "counts": dict(counts), "size": size, "seed": seed}
    if manifest is not None:
        scanned = scan_directory(root)
        scanned.write(manifest)
        summary["manifest"] = str(manifest)
        summary["manifest_records"] = len(scanned)
    return summary


def main() -> int:
    parser = argparse.ArgumentParser(description="Write a BreaKHis-shaped tree of synthetic textures.")
    parser.add_argument("--root", type=Path, required=True)
    parser.add_argument("--scale", type=float, default=0.05, help="fraction of the reference per-subtype counts")
    parser.add_argument("--count", action="append", default=[], help="override one subtype, e.g. PC=30")
    parser.add_argument("--size", type=int, default=64)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--manifest", type=Path, default=None, help="also scan the tree into this manifest CSV")
    args = parser.parse_args()
    try:
        counts = scaled_counts(args.scale, parse_overrides(list(args.count)))
    except ValueError as exc:
        parser.error(str(exc))
    summary = build_tree(args.root, counts, args.size, args.seed, args.manifest)
    print(json.dumps(summary, sort_keys=True))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
