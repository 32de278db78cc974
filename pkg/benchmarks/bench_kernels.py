"""Compare the numba and pure-numpy kernel paths.

Run ``python benchmarks/bench_kernels.py [repeats]``. Numba is skipped
when ``TENSORCE_DISABLE_NUMBA=1``.
"""

import sys

from tensorce.bench import kernel_table

if __name__ == "__main__":
    repeats = int(sys.argv[1]) if len(sys.argv) > 1 else 50
    print(kernel_table(repeats=repeats))
