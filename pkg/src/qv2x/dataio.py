"""Digits corpus ingestion and deterministic stratified splitting.

The corpus is a CSV of 64 integer pixel intensities in 0..16 plus a label
in 0..9 per row, the layout of the common 8x8 optical-digits table. Two
fixtures ship with the package: the full 1797-sample corpus and a
200-sample stratified subset for offline smoke runs.
"""

import csv
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import DataError

N_FIELDS = 65
TRAIN_FRAC, VAL_FRAC = 0.6, 0.2


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint, exhaustive index sets stratified by label."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray


@dataclass
class Dataset:
    images: np.ndarray
    labels: np.ndarray
    split: DatasetSplit


def bundled_path(name: str = "digits_full.csv"):
    """Filesystem path of a fixture shipped inside the package."""
    return resources.files("qv2x") / "data" / name


def stratified_split(labels: np.ndarray, seed: int) -> DatasetSplit:
    """Per class: round(0.6 n) train, round(0.2 n) val, remainder test."""
    labels = np.asarray(labels)
    rng = np.random.default_rng(seed)
    train, val, test = [], [], []
    for cls in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == cls))
        n = idx.size
        n_train = int(round(TRAIN_FRAC * n))
        n_val = int(round(VAL_FRAC * n))
        train.append(idx[:n_train])
        val.append(idx[n_train : n_train + n_val])
        test.append(idx[n_train + n_val :])
    return DatasetSplit(
        train=np.sort(np.concatenate(train)),
        val=np.sort(np.concatenate(val)),
        test=np.sort(np.concatenate(test)),
    )


def load_digits(path, seed: int = 0) -> Dataset:
    """Parse a digits CSV, scale pixels to [0, 1], and split 6:2:2.

    An optional header row is skipped. Every other malformed row fails
    with its 1-based line number.
    """
    pixels, labels = [], []
    with open(path, newline="") as fh:
        for line_no, row in enumerate(csv.reader(fh), start=1):
            if not row:
                continue
            if len(row) != N_FIELDS:
                raise DataError(
                    f"{path}: line {line_no}: expected {N_FIELDS} fields, "
                    f"got {len(row)}"
                )
            try:
                values = [int(field) for field in row]
            except ValueError:
                if line_no == 1:
                    continue
                raise DataError(
                    f"{path}: line {line_no}: non-integer field"
                ) from None
            *pix, label = values
            if any(not 0 <= v <= 16 for v in pix):
                raise DataError(
                    f"{path}: line {line_no}: pixel outside 0..16"
                )
            if not 0 <= label <= 9:
                raise DataError(
                    f"{path}: line {line_no}: label {label} outside 0..9"
                )
            pixels.append(pix)
            labels.append(label)
    if not labels:
        raise DataError(f"{path}: no data rows")
    labels = np.array(labels, dtype=np.int64)
    present = set(np.unique(labels).tolist())
    missing = sorted(set(range(10)) - present)
    if missing:
        raise DataError(f"{path}: no samples for classes {missing}")
    images = np.array(pixels, dtype=np.float64).reshape(-1, 8, 8) / 16.0
    return Dataset(images=images, labels=labels, split=stratified_split(labels, seed))
