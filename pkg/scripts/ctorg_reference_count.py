"""Plan count on a locally available CT-ORG copy (reference check, not a test).

    python scripts/ctorg_reference_count.py /data/ctorg --threshold 0.02 \
        --organs 1=liver,3=lungs,4=kidneys,5=bone

The dataset directory must follow the ``images/`` + ``labels/`` layout
(or contain a ``manifest.json``). The reference count for a 28-case
training split at threshold 0.02 is 1,545 plans out of 17,210,368
combinations; the organ table and case split must match for the numbers
to be comparable.
"""

import argparse
import sys
from pathlib import Path

from anatoforge import build_index, combination_count, enumerate_plans

REFERENCE_PLANS = 1545


def organ_table(text):
    out = {}
    for part in text.split(","):
        key, _, name = part.partition("=")
        out[int(key)] = name or key
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("dataset", type=Path)
    ap.add_argument("--threshold", type=float, default=0.02)
    ap.add_argument("--organs", type=organ_table, default="1=liver,3=lungs,4=kidneys,5=bone")
    ap.add_argument("--workers", type=int, default=4)
    args = ap.parse_args()

    if not args.dataset.exists():
        print(f"dataset not found: {args.dataset}; nothing to check", file=sys.stderr)
        return 2
    index = build_index(args.dataset, args.organs, workers=args.workers)
    plans = enumerate_plans(index, args.threshold)
    print(f"cases: {len(index.cases)} (rejected {len(index.rejected)})")
    print(f"total combinations: {combination_count(len(index.cases), len(index.organs))}")
    print(f"surviving plans at {args.threshold}: {len(plans)} (reference {REFERENCE_PLANS})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
