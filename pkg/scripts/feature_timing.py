#!/usr/bin/env python3
"""Wall-time comparison of the three feature extractors over an (m, d) grid.

Reproduces the timing-table layout (rows = extractor, columns = grid cells)
and prints the derived ratios that the efficiency discussion rests on.
"""

import argparse

from popscape.analysis import bench_grid, timings_to_table_csv


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--runs", type=int, default=20)
    parser.add_argument("--output", default="timing_table.csv")
    args = parser.parse_args()

    cells = [(100, 10), (100, 100), (1000, 10), (1000, 100)]
    rows = bench_grid(cells=cells, runs=args.runs)
    table = timings_to_table_csv(rows)
    with open(args.output, "w") as fh:
        fh.write(table)
    print(table)

    mean = {(r.kind, r.m, r.d): r.mean_s for r in rows}
    print(f"neural vs classical suite at (m=1000, d=10): "
          f"{mean[('ela', 1000, 10)] / mean[('neural', 1000, 10)]:.2f}x")
    print(f"classical-suite growth d=10 -> d=100 at m=100: "
          f"{mean[('ela', 100, 100)] / mean[('ela', 100, 10)]:.1f}x")
    print(f"neural growth d=10 -> d=100 at m=100: "
          f"{mean[('neural', 100, 100)] / mean[('neural', 100, 10)]:.1f}x")


if __name__ == "__main__":
    main()
