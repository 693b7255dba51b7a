"""
Comparing query strategies on a long-tailed pool
================================================

Random sampling spends most of its label budget on the common classes.
This demo builds a small imbalanced Gaussian pool, runs the simulated
labeling loop once per strategy, and prints each learning curve. The
holdout is class-balanced, so strategies that cover the rare classes
score visibly higher.

Takes about half a minute.
"""

import numpy as np

from camactive.classifier import TrainConfig
from camactive.loop import LoopConfig, run_simulation
from camactive.pool import Pool, make_gaussian_pool
from camactive.strategies import StrategyKind

SIZES = [700, 450, 250, 120, 60, 20]  # long tail: 700 down to 20
CLASSES = [f"class_{i}" for i in range(len(SIZES))]

X, y = make_gaussian_pool(SIZES, dim=12, separation=2.0, seed=0)
hold_x, hold_y = make_gaussian_pool([50] * len(SIZES), dim=12, separation=2.0, seed=1)
ids = [f"crop_{i}" for i in range(len(y))]
pool = Pool(item_ids=ids, features=X, class_names=CLASSES)
truth = {ids[i]: CLASSES[y[i]] for i in range(len(y))}

print(f"pool: {len(pool)} items, class sizes {SIZES}; holdout balanced 50/class\n")

for kind in StrategyKind:
    cfg = LoopConfig(
        initial_random=50,
        batch_size=25,
        finetune_interval=25,
        finetune_start=10**9,  # no embedding net in this demo, never fires
        budget=300,
        strategy=kind,
        seed=0,
        classifier_train=TrainConfig(
            learning_rate=0.1, epochs=50, batch_size=32, seed=0, init_scale=0.3
        ),
        classifier_hidden=16,
    )
    curve = run_simulation(pool, truth, cfg, hold_x, hold_y)
    accs = " ".join(f"{a:.3f}" for a in curve.accuracies())
    print(f"{kind.value:22s} {accs}")

print("\ncolumns are holdout accuracy at 50, 75, ..., 300 labels")
