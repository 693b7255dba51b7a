"""Command-line entry points for every pipeline stage.

Subcommands: ingest, embed, simulate, serve, eval, export-embedding.
Flags can be preloaded from a TOML config file (--config); explicit flags
win. Output files are written via temp-then-rename so a failure never
leaves a partial file behind.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import tempfile
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from . import checkpoint as ckpt
from .classifier import evaluate_accuracy  # noqa: F401  (re-exported for scripts)
from .embedding import (
    TripletConfig,
    embed_batch,
    make_embedding_net,
    train_embedding_triplet,
    train_embedding_xent,
)
from .ingest import (
    ConfusionCounts,
    IngestConfig,
    IngestError,
    bin_index,
    binary_metrics,
    classify_empty,
    count_animals,
    count_metrics,
    crop_and_resize,
    filter_detections,
    parse_detection_file,
)
from .loop import LoopConfig, run_simulation
from .pool import load_pool_dir
from .strategies import StrategyKind


class CliError(Exception):
    pass


def _atomic_write_text(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _atomic_save_npy(path: str, arr: np.ndarray) -> None:
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, suffix=".tmp.npy")
    os.close(fd)
    try:
        np.save(tmp, arr)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def cmd_ingest(args) -> int:
    from PIL import Image

    cfg = IngestConfig(confidence_threshold=args.threshold, crop_side=args.crop_side)
    with open(args.detections, "rb") as f:
        entries = parse_detection_file(f.read())
    os.makedirs(args.out, exist_ok=True)
    crops_dir = os.path.join(args.out, "crops")
    os.makedirs(crops_dir, exist_ok=True)
    index_rows = []
    empty_rows = []
    for entry, dets in entries:
        kept = filter_detections(dets, cfg)
        status = classify_empty(dets, cfg)
        empty_rows.append((entry.image_id, status, count_animals(dets, cfg)))
        if not kept:
            continue
        img_path = os.path.join(args.images, entry.source_path)
        if not os.path.exists(img_path):
            raise CliError(f"image file not found: {img_path}")
        pixels = np.asarray(Image.open(img_path).convert("RGB"))
        for k, det in enumerate(kept):
            crop_id = f"{os.path.splitext(os.path.basename(entry.image_id))[0]}_{k}"
            crop = crop_and_resize(pixels, det.bbox, cfg, image_id=entry.image_id, crop_id=crop_id)
            out_img = np.clip(np.round(crop.pixels), 0, 255).astype(np.uint8)
            Image.fromarray(out_img).save(os.path.join(crops_dir, f"{crop_id}.png"))
            x, y, w, h = crop.source_bbox_px
            index_rows.append([crop_id, entry.image_id, x, y, w, h, det.confidence])
    buf = ["crop_id,image_id,x,y,w,h,conf"]
    buf += [",".join(str(v) for v in row) for row in index_rows]
    _atomic_write_text(os.path.join(args.out, "crop_index.csv"), "\n".join(buf) + "\n")
    rep = ["image_id,status,count"]
    rep += [f"{i},{s},{c}" for i, s, c in empty_rows]
    _atomic_write_text(os.path.join(args.out, "empty_report.csv"), "\n".join(rep) + "\n")
    n_empty = sum(1 for _, s, _ in empty_rows if s == "empty")
    print(f"ingested {len(entries)} images: {len(index_rows)} crops, {n_empty} empty")
    return 0


def _load_features_file(path: str) -> np.ndarray:
    if path.endswith(".npy"):
        return np.load(path)
    return np.loadtxt(path, delimiter=",", ndmin=2)


def _load_labels_file(path: str) -> tuple[np.ndarray, list[str]]:
    """Label CSV: one class name per row (optionally crop_id,label)."""
    names = []
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.reader(f):
            if not row:
                continue
            names.append(row[-1])
    classes = sorted(set(names))
    return np.array([classes.index(n) for n in names], dtype=int), classes


def cmd_embed(args) -> int:
    X = _load_features_file(args.features)
    y, classes = _load_labels_file(args.labels)
    if X.shape[0] != y.shape[0]:
        raise CliError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
    cfg = TripletConfig(
        margin=args.margin,
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch_size,
        seed=args.seed,
    )
    hidden = tuple(int(h) for h in args.hidden.split(",") if h)
    net = make_embedding_net(X.shape[1], embed_dim=args.dim, hidden=hidden, seed=args.seed)
    if args.loss == "triplet":
        net = train_embedding_triplet(net, X, y, cfg)
    else:
        net = train_embedding_xent(net, X, y, cfg, n_classes=len(classes))
    ckpt.save_net(args.out, net, extra={"loss": args.loss, "classes": classes, "seed": args.seed})
    print(f"wrote embedding checkpoint to {args.out}")
    return 0


def cmd_simulate(args) -> int:
    pool, truth = load_pool_dir(args.pool)
    if args.truth:
        with open(args.truth, newline="", encoding="utf-8") as f:
            truth = {r["image_id"]: r["label"] for r in csv.DictReader(f)}
    if truth is None:
        raise CliError("no ground truth: pass --truth or add truth.csv to the pool dir")
    strategy = StrategyKind.parse(args.strategy)
    overrides = _toml_overrides(args.config)
    cfg = LoopConfig.from_dict(
        {
            **LoopConfig().to_dict(),
            **overrides,
            "strategy": strategy.value,
            "budget": args.budget,
            "seed": args.seed,
            "initial_random": args.initial,
            "batch_size": args.batch,
        }
    )
    rng = np.random.default_rng(args.seed + 900001)
    n_hold = max(1, int(len(pool) * args.holdout_fraction))
    hold = sorted(int(i) for i in rng.choice(len(pool), size=n_hold, replace=False))
    hold_set = set(hold)
    keep = [i for i in range(len(pool)) if i not in hold_set]
    from .pool import Pool

    sub = Pool(
        item_ids=[pool.item_ids[i] for i in keep],
        features=pool.features[keep],
        class_names=pool.class_names,
    )
    hold_labels = np.array(
        [pool.class_names.index(truth[pool.item_ids[i]]) for i in hold], dtype=int
    )
    embedding_net = ckpt.load_net(args.ckpt) if args.ckpt else None
    curve = run_simulation(
        sub, truth, cfg, pool.features[hold], hold_labels, embedding_net
    )
    _atomic_write_text(args.out, curve.to_csv())
    print(f"wrote {len(curve)}-point learning curve to {args.out}")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(session_root=args.session)
    host, _, port = args.listen.rpartition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port))
    return 0


def _read_eval_csv(path: str) -> dict[str, dict]:
    out = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        required = {"image_id", "label", "count", "empty"}
        if reader.fieldnames is None or not required.issubset(reader.fieldnames):
            raise CliError(f"{path} must have header image_id,label,count,empty")
        for row in reader:
            out[row["image_id"]] = {
                "label": row["label"],
                "count": int(row["count"]) if row["count"].strip() else None,
                "empty": row["empty"].strip().lower() in ("1", "true", "yes"),
            }
    return out


def cmd_eval(args) -> int:
    pred = _read_eval_csv(args.predictions)
    truth = _read_eval_csv(args.truth)
    if set(pred) != set(truth):
        raise CliError(
            f"prediction/truth image sets differ "
            f"({len(pred)} vs {len(truth)} rows)"
        )
    tp = fp = tn = fn = 0
    species_hits = species_total = 0
    pred_counts, true_counts = [], []
    for image_id, p in pred.items():
        t = truth[image_id]
        pred_animal, true_animal = not p["empty"], not t["empty"]
        if pred_animal and true_animal:
            tp += 1
        elif pred_animal and not true_animal:
            fp += 1
        elif not pred_animal and not true_animal:
            tn += 1
        else:
            fn += 1
        if true_animal and pred_animal:
            if t["label"] and p["label"]:
                species_total += 1
                species_hits += p["label"] == t["label"]
            if t["count"] and p["count"]:
                pred_counts.append(p["count"])
                true_counts.append(t["count"])
    metrics = binary_metrics(ConfusionCounts(tp, fp, tn, fn))
    lines = [
        f"binary_accuracy,{metrics['accuracy']:.6f}",
        f"binary_precision,{_fmt(metrics['precision'])}",
        f"binary_recall,{_fmt(metrics['recall'])}",
    ]
    if species_total:
        lines.append(f"species_top1,{species_hits / species_total:.6f}")
    if pred_counts:
        cm = count_metrics(pred_counts, true_counts)
        lines.append(f"count_top1,{cm['top1_accuracy']:.6f}")
        lines.append(f"count_within_one_bin,{cm['within_one_bin_accuracy']:.6f}")
    report = "\n".join(lines) + "\n"
    if args.out:
        _atomic_write_text(args.out, report)
    print(report, end="")
    return 0


def _fmt(v) -> str:
    return "undefined" if v is None else f"{v:.6f}"


def cmd_export_embedding(args) -> int:
    net = ckpt.load_net(args.ckpt)
    X = _load_features_file(args.features)
    emb = embed_batch(net, X)
    if args.out.endswith(".npy"):
        _atomic_save_npy(args.out, emb)
    else:
        _atomic_write_text(
            args.out, "\n".join(",".join(repr(float(v)) for v in row) for row in emb) + "\n"
        )
    print(f"wrote {emb.shape[0]}x{emb.shape[1]} embedding matrix to {args.out}")
    return 0


def _toml_overrides(path: str | None) -> dict:
    if not path:
        return {}
    with open(path, "rb") as f:
        return tomllib.load(f)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="camactive")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="crop detector output into a labeled pool")
    p.add_argument("--detections", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.90)
    p.add_argument("--crop-side", type=int, default=256)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("embed", help="train an embedding checkpoint")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--loss", choices=["triplet", "xent"], default="triplet")
    p.add_argument("--out", required=True)
    p.add_argument("--dim", type=int, default=256)
    p.add_argument("--hidden", default="256,256")
    p.add_argument("--margin", type=float, default=0.2)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("simulate", help="run the loop against a simulated oracle")
    p.add_argument("--pool", required=True)
    p.add_argument("--truth")
    p.add_argument("--strategy", required=True)
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--initial", type=int, default=1000)
    p.add_argument("--batch", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--holdout-fraction", type=float, default=0.2)
    p.add_argument("--ckpt", help="embedding checkpoint (raw features if omitted)")
    p.add_argument("--config", help="TOML config file; flags override it")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("serve", help="run the labeling service")
    p.add_argument("--session", required=True, help="session directory root")
    p.add_argument("--listen", default="127.0.0.1:8000")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--predictions", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export-embedding", help="dump embedded vectors")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_embedding)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, IngestError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # anything else still gets a one-line diagnostic
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
