#!/usr/bin/env python3
"""Timing harness for the smoothing kernel on a large nested-shell volume.

Reports single-thread wall time, the speedup across a thread sweep, and
verifies that every thread count produces bit-identical output.
"""
import argparse
import os
import time

import numpy as np

from noisyseg.smoothing import smooth_labels
from noisyseg.volume import GridGeometry, LabelVolume, UncertaintyTable


def nested_shell_volume(n, num_labels):
    ax = np.arange(n) - (n - 1) / 2
    x, y, z = np.meshgrid(ax, ax, ax, indexing="ij")
    r = np.sqrt(x * x + y * y + z * z)
    labels = np.zeros((n, n, n), dtype=np.uint16)
    radii = np.linspace(0.45 * n, 0.08 * n, num_labels - 1)
    for k, radius in enumerate(radii, start=1):
        labels[r <= radius] = k
    return LabelVolume(GridGeometry((n, n, n)), labels.ravel(order="F"), num_labels)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size", type=int, default=128)
    parser.add_argument("--labels", type=int, default=10)
    parser.add_argument("--max-uncertainty", type=int, default=4)
    parser.add_argument("--threads", type=int, nargs="+", default=[1, 2, 4, 8])
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    vol = nested_shell_volume(args.size, args.labels)
    table = UncertaintyTable({
        0: args.max_uncertainty,
        **{l: (l % args.max_uncertainty) + 1 for l in range(1, args.labels)},
    })
    print(f"volume {args.size}^3, L={args.labels}, R={table.max_uncertainty}, "
          f"host cores={os.cpu_count()}")

    # warm-up excludes JIT compilation from the timings
    smooth_labels(nested_shell_volume(16, args.labels), table, threads=1)

    reference = None
    base_time = None
    for threads in args.threads:
        best = float("inf")
        for _ in range(args.repeats):
            t0 = time.perf_counter()
            out = smooth_labels(vol, table, threads=threads)
            best = min(best, time.perf_counter() - t0)
        if reference is None:
            reference = out
            base_time = best
            identical = True
        else:
            identical = np.array_equal(out.smoothed.probs, reference.smoothed.probs) \
                and np.array_equal(out.mask.values, reference.mask.values)
        print(f"threads={threads:>2}  best {best:6.2f}s  speedup {base_time / best:5.2f}x  "
              f"bit-identical={identical}")
        assert identical, "thread count changed the output"


if __name__ == "__main__":
    main()
