#!/usr/bin/env python3
"""Tabulate trainable-parameter budgets for stacks of adapted projections.

For a transformer-style backbone with L blocks where each block adapts
`projections_per_block` square d x d weight matrices at rank r, the total
trainable count is L * projections_per_block * (2*r*d + r + d). This script
prints the per-layer and total counts over a rank sweep so a budget (for
example a ~1.6M-parameter target) can be matched to a configuration.

Example:
    python scripts/adapter_param_budget.py --dim 768 --blocks 12 \
        --projections-per-block 2 --ranks 4 8 16 32
"""

import argparse
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from stratdepth.dvlora import trainable_param_count


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--dim", type=int, default=768, help="projection width d (square d x d weights)")
    parser.add_argument("--blocks", type=int, default=12, help="number of transformer blocks")
    parser.add_argument(
        "--projections-per-block", type=int, default=2, help="adapted projections per block (e.g. q and v)"
    )
    parser.add_argument("--ranks", type=int, nargs="+", default=[4, 8, 16, 32])
    args = parser.parse_args()

    n_layers = args.blocks * args.projections_per_block
    print(f"dim={args.dim} blocks={args.blocks} projections/block={args.projections_per_block} "
          f"({n_layers} adapted layers)")
    print(f"{'rank':>6} {'per-layer':>12} {'total':>14}")
    for rank in args.ranks:
        per_layer = trainable_param_count(args.dim, args.dim, rank)
        total = n_layers * per_layer
        print(f"{rank:>6} {per_layer:>12,} {total:>14,}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
