"""One-off fixture generator: write the 8x8 digits corpus as CSV.

Produces the full 1797-sample table plus a 200-sample stratified subset
(20 per class, seeded) for offline smoke tests. Raw integer intensities
0..16 are stored; loaders normalize. Requires scikit-learn, which is not
a package dependency; run from the repo root:

    python3 tools/make_digits_fixture.py
"""

import csv
import pathlib

import numpy as np
from sklearn.datasets import load_digits

OUT = pathlib.Path(__file__).resolve().parent.parent / "src" / "qv2x" / "data"


def write_rows(path, pixels, labels):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"p{i:02d}" for i in range(64)] + ["label"])
        for row, lab in zip(pixels, labels):
            writer.writerow([int(v) for v in row] + [int(lab)])


def main():
    bunch = load_digits()
    pixels = bunch.data.astype(np.int64)
    labels = bunch.target.astype(np.int64)
    OUT.mkdir(parents=True, exist_ok=True)
    write_rows(OUT / "digits_full.csv", pixels, labels)

    rng = np.random.default_rng(0)
    keep = []
    for cls in range(10):
        idx = np.flatnonzero(labels == cls)
        keep.extend(sorted(rng.choice(idx, size=20, replace=False)))
    keep = np.array(sorted(keep))
    write_rows(OUT / "digits_subset200.csv", pixels[keep], labels[keep])
    print(f"wrote {len(labels)} + {len(keep)} rows under {OUT}")


if __name__ == "__main__":
    main()
