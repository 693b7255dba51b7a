"""
Serving a labeling session over HTTP
====================================

The loop does not care whether labels come from a simulated oracle or a
person clicking in a browser. This demo writes a small pool directory to
a scratch folder, starts the labeling service in-process, and plays the
part of the annotator through plain HTTP calls -- the same endpoints the
web frontend uses.
"""

import tempfile

from fastapi.testclient import TestClient

from camactive.pool import Pool, make_gaussian_pool, save_pool_dir
from camactive.service import create_app

CLASSES = ["wildebeest", "zebra", "gazelle"]

# --- write a pool directory -------------------------------------------
X, y = make_gaussian_pool([40, 40, 40], dim=6, separation=3.0, seed=0)
ids = [f"crop_{i}" for i in range(len(y))]
truth = {ids[i]: CLASSES[y[i]] for i in range(len(y))}
pool_dir = tempfile.mkdtemp(prefix="label-pool-")
save_pool_dir(pool_dir, Pool(ids, X, CLASSES), truth)
print(f"pool written to {pool_dir}")

# --- start a session ----------------------------------------------------
# Outside a demo you would run `camactive serve --session <dir>` and point
# the frontend at it; TestClient keeps everything in one process here.
client = TestClient(create_app())
config = {
    "initial_random": 12,
    "batch_size": 6,
    "budget": 24,
    "finetune_interval": 6,
    "finetune_start": 10**9,
    "strategy": "margin",
    "classifier_hidden": 8,
    "classifier_train": {"learning_rate": 0.2, "epochs": 20, "batch_size": 16, "seed": 0},
}
resp = client.post("/sessions", json={"pool_dir": pool_dir, "config": config})
session = resp.json()["session_id"]
print(f"session {session}: {resp.json()['pending']} crops queued\n")

# --- label until the budget is spent ------------------------------------
while True:
    progress = client.get(f"/sessions/{session}/progress").json()
    print(f"step {progress['step']}: {progress['labels_acquired']}/{progress['budget']} labels, "
          f"state={progress['state']}")
    if progress["state"] == "done":
        break
    queue = client.get(f"/sessions/{session}/queue").json()["items"]
    # a human would look at item["image"]; the demo just knows the answer
    labels = [
        {"crop_id": it["crop_id"], "label": truth[it["crop_id"]], "batch_id": it["batch_id"]}
        for it in queue
    ]
    client.post(f"/sessions/{session}/labels", json={"labels": labels})

print("\nlearning curve:")
print(client.get(f"/sessions/{session}/curve.csv").text)
