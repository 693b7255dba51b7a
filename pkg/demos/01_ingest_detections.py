"""
Turning raw detector output into a pool of labeled-ready crops
==============================================================

A detector run over a camera-trap folder produces one JSON record per
image with zero or more bounding boxes, each with a confidence score.
This walkthrough builds a tiny synthetic folder, then runs the same
steps the `camactive ingest` subcommand performs: parse, threshold,
classify empty frames, and cut square crops.
"""

import json
import os
import tempfile

import numpy as np
from PIL import Image

from camactive.ingest import (
    IngestConfig,
    classify_empty,
    count_animals,
    crop_and_resize,
    filter_detections,
    parse_detection_file,
)

# --- fabricate three camera-trap frames -------------------------------
# a.jpg: two confident detections plus one weak one
# b.jpg: a single borderline detection at exactly the default threshold
# c.jpg: only a weak detection -- the frame should be called empty
workdir = tempfile.mkdtemp(prefix="ingest-demo-")
for name, color in [("a.jpg", (110, 90, 60)), ("b.jpg", (40, 120, 40)), ("c.jpg", (8, 8, 8))]:
    Image.new("RGB", (320, 240), color).save(os.path.join(workdir, name))

detections = {
    "images": [
        {
            "file": "a.jpg",
            "detections": [
                {"category": "1", "conf": 0.97, "bbox": [0.10, 0.10, 0.40, 0.40]},
                {"category": "1", "conf": 0.92, "bbox": [0.55, 0.50, 0.30, 0.30]},
                {"category": "1", "conf": 0.40, "bbox": [0.00, 0.00, 0.20, 0.20]},
            ],
        },
        {
            "file": "b.jpg",
            "detections": [{"category": "1", "conf": 0.90, "bbox": [0.2, 0.2, 0.5, 0.5]}],
        },
        {
            "file": "c.jpg",
            "detections": [{"category": "1", "conf": 0.45, "bbox": [0.1, 0.1, 0.3, 0.3]}],
        },
    ]
}

# --- parse and threshold ----------------------------------------------
# The confidence cut is inclusive: 0.90 survives the default 0.90 bar.
entries = parse_detection_file(json.dumps(detections).encode())
cfg = IngestConfig()  # threshold 0.90, crops 256x256

for entry, dets in entries:
    kept = filter_detections(dets, cfg)
    status = classify_empty(dets, cfg)
    print(f"{entry.image_id}: {status}, {count_animals(dets, cfg)} animal(s), "
          f"{len(kept)}/{len(dets)} detections kept")

# --- cut crops ---------------------------------------------------------
# Boxes are normalized [x, y, w, h]; they are mapped to pixel rectangles
# with round-half-up and resized to a square with bilinear interpolation.
entry, dets = entries[0]
pixels = np.asarray(Image.open(os.path.join(workdir, entry.source_path)).convert("RGB"))
for k, det in enumerate(filter_detections(dets, cfg)):
    crop = crop_and_resize(pixels, det.bbox, cfg, image_id=entry.image_id, crop_id=f"a_{k}")
    print(f"crop {crop.crop_id}: source rect {crop.source_bbox_px} -> {crop.pixels.shape}")

print(f"\n(scratch folder: {workdir})")
