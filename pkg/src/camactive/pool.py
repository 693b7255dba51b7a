"""Pool containers: feature matrices with item ids and class tables.

A pool directory holds features.npy, index.csv (row,crop_id),
classes.json, optionally truth.csv (image_id,label,count,empty) and a
crops/ directory of PNG images.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field

import numpy as np


class PoolError(Exception):
    pass


@dataclass
class Pool:
    item_ids: list[str]
    features: np.ndarray  # (n_items, n_features) base features
    class_names: list[str]
    crop_dir: str | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise PoolError(f"features must be 2-d, got shape {self.features.shape}")
        if len(self.item_ids) != self.features.shape[0]:
            raise PoolError(
                f"{len(self.item_ids)} ids for {self.features.shape[0]} feature rows"
            )
        if len(set(self.item_ids)) != len(self.item_ids):
            raise PoolError("duplicate item ids in pool")

    def __len__(self) -> int:
        return len(self.item_ids)

    def class_index(self, name: str) -> int:
        try:
            return self.class_names.index(name)
        except ValueError:
            raise PoolError(f"unknown class {name!r}")


def save_pool_dir(path: str, pool: Pool, truth: dict[str, str] | None = None) -> None:
    os.makedirs(path, exist_ok=True)
    np.save(os.path.join(path, "features.npy"), pool.features)
    with open(os.path.join(path, "index.csv"), "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f)
        writer.writerow(["row", "crop_id"])
        for i, cid in enumerate(pool.item_ids):
            writer.writerow([i, cid])
    with open(os.path.join(path, "classes.json"), "w", encoding="utf-8") as f:
        json.dump(pool.class_names, f)
    if truth is not None:
        with open(os.path.join(path, "truth.csv"), "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["image_id", "label", "count", "empty"])
            for cid in pool.item_ids:
                writer.writerow([cid, truth[cid], 1, "false"])


def load_pool_dir(path: str) -> tuple[Pool, dict[str, str] | None]:
    features = np.load(os.path.join(path, "features.npy"))
    with open(os.path.join(path, "index.csv"), newline="", encoding="utf-8") as f:
        rows = list(csv.DictReader(f))
    item_ids = [r["crop_id"] for r in sorted(rows, key=lambda r: int(r["row"]))]
    with open(os.path.join(path, "classes.json"), encoding="utf-8") as f:
        class_names = json.load(f)
    crop_dir = os.path.join(path, "crops")
    pool = Pool(
        item_ids=item_ids,
        features=features,
        class_names=class_names,
        crop_dir=crop_dir if os.path.isdir(crop_dir) else None,
    )
    truth = None
    truth_path = os.path.join(path, "truth.csv")
    if os.path.exists(truth_path):
        with open(truth_path, newline="", encoding="utf-8") as f:
            truth = {r["image_id"]: r["label"] for r in csv.DictReader(f)}
    return pool, truth


def make_gaussian_pool(
    class_sizes,
    dim: int,
    separation: float = 2.0,
    sigma: float = 1.0,
    seed: int = 0,
    id_prefix: str = "crop",
):
    """Synthetic Gaussian-mixture pool with equidistant class means.

    Class means sit on scaled coordinate axes so every pair of means is
    exactly `separation * sigma` apart; within-class noise is isotropic
    with std sigma. Returns (features, labels).
    """
    class_sizes = [int(s) for s in class_sizes]
    k = len(class_sizes)
    if k > dim:
        raise PoolError(f"need dim >= n_classes for equidistant means ({k} > {dim})")
    rng = np.random.default_rng(seed)
    scale = separation * sigma / np.sqrt(2.0)
    features = []
    labels = []
    for c, size in enumerate(class_sizes):
        mean = np.zeros(dim)
        mean[c] = scale
        features.append(mean + sigma * rng.standard_normal((size, dim)))
        labels.extend([c] * size)
    X = np.vstack(features)
    y = np.array(labels, dtype=int)
    perm = rng.permutation(len(y))
    return X[perm], y[perm]
