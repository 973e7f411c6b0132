#!/usr/bin/env python3
"""Time the numba kernels against their numpy fallbacks.

Usage: python3 benchmarks/bench_kernels.py [--repeats N]
Equivalent to `magloc bench`.
"""

import argparse
import sys

from magloc.bench import main


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeats", type=int, default=5)
    args = ap.parse_args()
    sys.exit(main(repeats=args.repeats))
