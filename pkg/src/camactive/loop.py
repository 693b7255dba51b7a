"""Active-learning loop orchestration.

Seeds the session with a random labeled batch, then iterates: select a
query batch, obtain labels from an oracle (simulated or human), retrain
the classifier, fine-tune the embedding on schedule, and track the
learning curve. Sessions persist through an append-only label journal
plus atomic state snapshots, so a crash between oracle reply and commit
never loses or duplicates a label.
"""

from __future__ import annotations

import base64
import csv
import hashlib
import io
import json
import os
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import checkpoint as ckpt
from .classifier import MlpClassifier, TrainConfig, evaluate_accuracy, fit_classifier, train_classifier
from .embedding import TripletConfig, embed_batch, fine_tune
from .nn import DenseNet
from .pool import Pool
from .strategies import (
    SelectionContext,
    StrategyKind,
    entropy_scores,
    margin_scores,
    select,
)

SESSION_MAGIC = "CAMACTIVE-SESSION"
SESSION_VERSION = 1


class LoopError(Exception):
    pass


class OracleError(LoopError):
    pass


class SimulatedCrash(RuntimeError):
    """Raised by fault-injection hooks between journaling and commit."""


@dataclass(frozen=True)
class LoopConfig:
    initial_random: int = 1000
    batch_size: int = 100
    finetune_interval: int = 2000
    finetune_start: int = 2000
    budget: int = 30000
    strategy: StrategyKind = StrategyKind.KCENTER
    seed: int = 0
    embedding_loss: str = "triplet"
    triplet: TripletConfig = field(default_factory=TripletConfig)
    classifier_train: TrainConfig = field(default_factory=TrainConfig)
    classifier_hidden: int = 100
    classifier_warm_start: bool = False
    margin_threshold: float = 0.2
    cluster_count: int | None = None

    def __post_init__(self):
        if self.batch_size < 1:
            raise LoopError("batch_size must be >= 1")
        if self.finetune_interval % self.batch_size != 0:
            raise LoopError("finetune_interval must be divisible by batch_size")
        if self.budget < self.initial_random:
            raise LoopError("budget must be >= initial_random")

    def to_dict(self) -> dict:
        d = {
            "initial_random": self.initial_random,
            "batch_size": self.batch_size,
            "finetune_interval": self.finetune_interval,
            "finetune_start": self.finetune_start,
            "budget": self.budget,
            "strategy": self.strategy.value,
            "seed": self.seed,
            "embedding_loss": self.embedding_loss,
            "triplet": vars(self.triplet).copy(),
            "classifier_train": vars(self.classifier_train).copy(),
            "classifier_hidden": self.classifier_hidden,
            "classifier_warm_start": self.classifier_warm_start,
            "margin_threshold": self.margin_threshold,
            "cluster_count": self.cluster_count,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LoopConfig":
        d = dict(d)
        d["strategy"] = StrategyKind(d["strategy"])
        d["triplet"] = TripletConfig(**d["triplet"])
        d["classifier_train"] = TrainConfig(**d["classifier_train"])
        return cls(**d)


@dataclass(frozen=True)
class CurvePoint:
    labels_acquired: int
    accuracy: float
    wall_time: float


@dataclass
class LearningCurve:
    points: list[CurvePoint] = field(default_factory=list)

    def append(self, pt: CurvePoint) -> None:
        if self.points and pt.labels_acquired <= self.points[-1].labels_acquired:
            raise LoopError("learning curve must be strictly increasing in labels")
        self.points.append(pt)

    def __len__(self) -> int:
        return len(self.points)

    def labels(self) -> list[int]:
        return [p.labels_acquired for p in self.points]

    def accuracies(self) -> list[float]:
        return [p.accuracy for p in self.points]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["labels", "accuracy", "wall_time_s"])
        for p in self.points:
            w.writerow([p.labels_acquired, repr(p.accuracy), f"{p.wall_time:.3f}"])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "LearningCurve":
        curve = cls()
        for row in csv.DictReader(io.StringIO(text)):
            curve.append(
                CurvePoint(int(row["labels"]), float(row["accuracy"]), float(row["wall_time_s"]))
            )
        return curve


class SimulatedOracle:
    """Answers every query instantly from a ground-truth table."""

    kind = "simulated"

    def __init__(self, truth: dict[str, str]):
        self.truth = dict(truth)

    def label(self, item_ids) -> list[str]:
        out = []
        for item_id in item_ids:
            if item_id not in self.truth:
                raise OracleError(f"no ground truth for item {item_id!r}")
            out.append(self.truth[item_id])
        return out


def simulated_oracle(truth: dict[str, str]) -> SimulatedOracle:
    return SimulatedOracle(truth)


@dataclass
class SessionState:
    config: LoopConfig
    pool: Pool
    holdout_features: np.ndarray
    holdout_labels: np.ndarray
    embedding_net: DenseNet | None
    classifier: MlpClassifier | None
    labeled: dict[int, int]
    unlabeled: list[int]
    labels_acquired: int
    step_count: int
    pending: list[int]
    history: LearningCurve
    finetune_events: list[int]
    rng: np.random.Generator
    elapsed: float = 0.0
    embedding_version: int = 0
    # Derived caches, rebuilt on load.
    embedded: np.ndarray | None = None
    holdout_embedded: np.ndarray | None = None
    _cluster_cache: dict = field(default_factory=dict)

    def ensure_embedded(self) -> None:
        if self.embedded is None:
            if self.embedding_net is None:
                self.embedded = self.pool.features
                self.holdout_embedded = self.holdout_features
            else:
                self.embedded = embed_batch(self.embedding_net, self.pool.features)
                self.holdout_embedded = embed_batch(self.embedding_net, self.holdout_features)

    @property
    def done(self) -> bool:
        return self.labels_acquired >= self.config.budget and not self.pending

    def check_invariants(self) -> None:
        if self.labels_acquired != len(self.labeled):
            raise LoopError("labels_acquired out of sync with labeled map")
        if set(self.pending) & set(self.labeled):
            raise LoopError("pending batch overlaps the labeled set")


def create_session(
    pool: Pool,
    cfg: LoopConfig,
    holdout_features: np.ndarray,
    holdout_labels: np.ndarray,
    embedding_net: DenseNet | None = None,
) -> SessionState:
    """New session with the initial random batch already pending."""
    if len(pool) < cfg.initial_random:
        raise LoopError(
            f"pool has {len(pool)} items but initial_random is {cfg.initial_random}"
        )
    rng = np.random.default_rng(cfg.seed)
    state = SessionState(
        config=cfg,
        pool=pool,
        holdout_features=np.asarray(holdout_features, dtype=np.float64),
        holdout_labels=np.asarray(holdout_labels, dtype=int),
        embedding_net=embedding_net,
        classifier=None,
        labeled={},
        unlabeled=list(range(len(pool))),
        labels_acquired=0,
        step_count=0,
        pending=[],
        history=LearningCurve(),
        finetune_events=[],
        rng=rng,
    )
    issue_batch(state)
    return state


def issue_batch(state: SessionState) -> list[int]:
    """Select the next query batch and mark it pending.

    Step 0 is the initial uniform random batch; later steps use the
    configured strategy over the current embedding space.
    """
    if state.pending:
        raise LoopError("a batch is already pending")
    cfg = state.config
    if state.step_count == 0:
        picked = state.rng.choice(
            np.array(state.unlabeled), size=cfg.initial_random, replace=False
        )
        state.pending = [int(i) for i in picked]
        return state.pending
    if state.labels_acquired + cfg.batch_size > cfg.budget:
        raise LoopError("budget reached")
    state.ensure_embedded()
    ctx = SelectionContext(
        embeddings=state.embedded,
        labeled=np.array(sorted(state.labeled), dtype=int),
        unlabeled=np.array(state.unlabeled, dtype=int),
        classifier=state.classifier,
        rng=state.rng,
        margin_threshold=cfg.margin_threshold,
        cluster_count=cfg.cluster_count,
        cluster_cache=state._cluster_cache,
    )
    state.pending = select(cfg.strategy, ctx, cfg.batch_size)
    return state.pending


def selection_scores(state: SessionState, chosen: list[int]) -> list[float]:
    """Audit scores for a selected batch.

    Uncertainty strategies log their scalar criterion; the others log the
    selection rank.
    """
    kind = state.config.strategy
    if state.classifier is not None and kind in (
        StrategyKind.CONFIDENCE,
        StrategyKind.MARGIN,
        StrategyKind.ENTROPY,
    ):
        state.ensure_embedded()
        probs = state.classifier.predict_proba_batch(state.embedded[chosen])
        if kind == StrategyKind.CONFIDENCE:
            return [float(s) for s in probs.max(axis=1)]
        if kind == StrategyKind.MARGIN:
            return [float(s) for s in margin_scores(probs)]
        return [float(s) for s in entropy_scores(probs)]
    return [float(r) for r in range(len(chosen))]


def _classifier_seed(cfg: LoopConfig, step_count: int) -> int:
    return int(np.random.SeedSequence([cfg.seed, 7, step_count]).generate_state(1)[0])


def _retrain_classifier(state: SessionState) -> None:
    cfg = state.config
    state.ensure_embedded()
    idx = sorted(state.labeled)
    X = state.embedded[idx]
    y = np.array([state.labeled[i] for i in idx], dtype=int)
    train_cfg = replace(cfg.classifier_train, seed=_classifier_seed(cfg, state.step_count))
    n_classes = len(state.pool.class_names)
    if cfg.classifier_warm_start and state.classifier is not None:
        state.classifier = train_classifier(state.classifier, X, y, train_cfg)
    else:
        state.classifier = fit_classifier(
            state.embedded.shape[1], n_classes, X, y, train_cfg,
            hidden_units=cfg.classifier_hidden,
        )


def _maybe_finetune(state: SessionState) -> None:
    cfg = state.config
    if state.embedding_net is None:
        return
    if state.labels_acquired < cfg.finetune_start:
        return
    if state.labels_acquired % cfg.finetune_interval != 0:
        return
    idx = sorted(state.labeled)
    X = state.pool.features[idx]
    y = np.array([state.labeled[i] for i in idx], dtype=int)
    state.embedding_net = fine_tune(
        state.embedding_net, X, y, cfg.triplet, loss=cfg.embedding_loss
    )
    state.embedding_version += 1
    state.embedded = None  # re-embed the whole pool before the retrain
    state._cluster_cache = {}
    state.finetune_events.append(state.labels_acquired)


def commit_batch(state: SessionState, answers: dict[int, int], step_started: float) -> None:
    """Apply a fully answered batch: label bookkeeping, scheduled embedding
    fine-tune (with full re-embed), classifier retrain, holdout eval."""
    if set(answers) != set(state.pending):
        raise LoopError("answers do not match the pending batch")
    n_classes = len(state.pool.class_names)
    for i, y in answers.items():
        if not (0 <= y < n_classes):
            raise LoopError(f"label index {y} out of range for item {i}")
    for i, y in answers.items():
        state.labeled[i] = y
    pending_set = set(state.pending)
    state.unlabeled = [i for i in state.unlabeled if i not in pending_set]
    state.labels_acquired += len(answers)
    state.pending = []
    _maybe_finetune(state)
    _retrain_classifier(state)
    state.ensure_embedded()
    acc = evaluate_accuracy(state.classifier, state.holdout_embedded, state.holdout_labels)
    state.elapsed += time.perf_counter() - step_started
    state.history.append(CurvePoint(state.labels_acquired, acc, state.elapsed))
    state.step_count += 1
    state.check_invariants()


def step(
    state: SessionState,
    oracle,
    store: "SessionStore | None" = None,
    crash_after_journal: bool = False,
) -> SessionState:
    """Run one loop iteration: issue (if needed), label, commit.

    An oracle failure aborts before any state mutation, leaving the pending
    batch intact and the step re-runnable. Answers are journaled before the
    commit so a crash in between is recoverable from the store.
    """
    if state.done:
        raise LoopError("budget reached")
    started = time.perf_counter()
    if not state.pending:
        issue_batch(state)
        if store is not None:
            store.write_state(state)
    recovered: dict[int, int] = {}
    if store is not None:
        journaled = store.pending_answers(state.step_count)
        for item_id, label_name in journaled.items():
            recovered[state.pool.item_ids.index(item_id)] = state.pool.class_index(label_name)
    need = [i for i in state.pending if i not in recovered]
    fresh: dict[int, int] = {}
    if need:
        ids = [state.pool.item_ids[i] for i in need]
        names = oracle.label(ids)  # raises -> state untouched, step re-runnable
        if len(names) != len(need):
            raise OracleError(f"oracle returned {len(names)} labels for {len(need)} items")
        fresh = {i: state.pool.class_index(name) for i, name in zip(need, names)}
        if store is not None:
            store.append_labels(
                state.step_count,
                [(state.pool.item_ids[i], names[k]) for k, i in enumerate(need)],
                oracle_kind=getattr(oracle, "kind", "unknown"),
            )
    if crash_after_journal:
        raise SimulatedCrash("injected crash between oracle reply and commit")
    commit_batch(state, {**recovered, **fresh}, started)
    if store is not None:
        store.write_state(state)
    return state


def init_session(
    pool: Pool,
    cfg: LoopConfig,
    oracle,
    holdout_features: np.ndarray,
    holdout_labels: np.ndarray,
    embedding_net: DenseNet | None = None,
    store: "SessionStore | None" = None,
) -> SessionState:
    """Create a session and resolve its initial random batch via the oracle."""
    state = create_session(pool, cfg, holdout_features, holdout_labels, embedding_net)
    if store is not None:
        store.init(state)
    return step(state, oracle, store=store)


def run_simulation(
    pool: Pool,
    truth: dict[str, str],
    cfg: LoopConfig,
    holdout_features: np.ndarray,
    holdout_labels: np.ndarray,
    embedding_net: DenseNet | None = None,
) -> LearningCurve:
    """Full loop against a simulated oracle; deterministic for a fixed seed."""
    oracle = simulated_oracle(truth)
    state = init_session(
        pool, cfg, oracle, holdout_features, holdout_labels, embedding_net
    )
    while state.labels_acquired + cfg.batch_size <= cfg.budget:
        step(state, oracle)
    return state.history


# -- session serialization --


def _encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a)
    return {
        "dtype": str(a.dtype),
        "shape": list(a.shape),
        "data": base64.b64encode(a.tobytes()).decode("ascii"),
    }


def _decode_array(d: dict) -> np.ndarray:
    a = np.frombuffer(base64.b64decode(d["data"]), dtype=d["dtype"]).copy()
    return a.reshape(d["shape"])


def save_session(state: SessionState) -> bytes:
    """Snapshot the full session, including RNG state and pending batch.

    The container is a header with payload length and SHA-256, so truncated
    or corrupted files fail loudly on load.
    """
    doc = {
        "config": state.config.to_dict(),
        "pool": {
            "item_ids": state.pool.item_ids,
            "features": _encode_array(state.pool.features),
            "class_names": state.pool.class_names,
            "crop_dir": state.pool.crop_dir,
        },
        "holdout_features": _encode_array(state.holdout_features),
        "holdout_labels": _encode_array(state.holdout_labels),
        "embedding_net": (
            ckpt.net_to_dict(state.embedding_net) if state.embedding_net else None
        ),
        "classifier": (
            ckpt.classifier_to_dict(state.classifier) if state.classifier else None
        ),
        "labeled": sorted([int(i), int(y)] for i, y in state.labeled.items()),
        "unlabeled": [int(i) for i in state.unlabeled],
        "labels_acquired": state.labels_acquired,
        "step_count": state.step_count,
        "pending": [int(i) for i in state.pending],
        "history": [
            [p.labels_acquired, repr(p.accuracy), repr(p.wall_time)]
            for p in state.history.points
        ],
        "finetune_events": state.finetune_events,
        "rng_state": state.rng.bit_generator.state,
        "elapsed": repr(state.elapsed),
        "embedding_version": state.embedding_version,
    }
    payload = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    header = json.dumps(
        {
            "magic": SESSION_MAGIC,
            "version": SESSION_VERSION,
            "length": len(payload),
            "sha256": hashlib.sha256(payload).hexdigest(),
        },
        sort_keys=True,
    ).encode("utf-8")
    return header + b"\n" + payload


def load_session(data: bytes) -> SessionState:
    try:
        header_raw, payload = data.split(b"\n", 1)
        header = json.loads(header_raw)
    except (ValueError, json.JSONDecodeError) as exc:
        raise LoopError(f"corrupt session file: {exc}") from exc
    if header.get("magic") != SESSION_MAGIC:
        raise LoopError("not a session file")
    if header.get("version") != SESSION_VERSION:
        raise LoopError(f"unsupported session version {header.get('version')}")
    if len(payload) != header.get("length") or (
        hashlib.sha256(payload).hexdigest() != header.get("sha256")
    ):
        raise LoopError("session file is truncated or corrupted")
    doc = json.loads(payload)
    pool = Pool(
        item_ids=list(doc["pool"]["item_ids"]),
        features=_decode_array(doc["pool"]["features"]),
        class_names=list(doc["pool"]["class_names"]),
        crop_dir=doc["pool"]["crop_dir"],
    )
    history = LearningCurve()
    for labels, acc, wall in doc["history"]:
        history.append(CurvePoint(int(labels), float(acc), float(wall)))
    rng = np.random.default_rng()
    rng.bit_generator.state = doc["rng_state"]
    return SessionState(
        config=LoopConfig.from_dict(doc["config"]),
        pool=pool,
        holdout_features=_decode_array(doc["holdout_features"]),
        holdout_labels=_decode_array(doc["holdout_labels"]),
        embedding_net=(
            ckpt.net_from_dict(doc["embedding_net"]) if doc["embedding_net"] else None
        ),
        classifier=(
            ckpt.classifier_from_dict(doc["classifier"]) if doc["classifier"] else None
        ),
        labeled={int(i): int(y) for i, y in doc["labeled"]},
        unlabeled=[int(i) for i in doc["unlabeled"]],
        labels_acquired=int(doc["labels_acquired"]),
        step_count=int(doc["step_count"]),
        pending=[int(i) for i in doc["pending"]],
        history=history,
        finetune_events=[int(v) for v in doc["finetune_events"]],
        rng=rng,
        elapsed=float(doc["elapsed"]),
        embedding_version=int(doc["embedding_version"]),
    )


class SessionStore:
    """On-disk session directory.

    Layout: config.json, state.bin (atomic snapshot), journal.ndjson
    (append-only label records), curve.csv, checkpoints/.
    """

    def __init__(self, path: str):
        self.path = path

    @property
    def state_path(self) -> str:
        return os.path.join(self.path, "state.bin")

    @property
    def journal_path(self) -> str:
        return os.path.join(self.path, "journal.ndjson")

    def init(self, state: SessionState) -> None:
        os.makedirs(self.path, exist_ok=True)
        os.makedirs(os.path.join(self.path, "checkpoints"), exist_ok=True)
        _atomic_write(
            os.path.join(self.path, "config.json"),
            json.dumps(state.config.to_dict(), indent=2).encode("utf-8"),
        )
        if not os.path.exists(self.journal_path):
            open(self.journal_path, "a").close()
        self.write_state(state)

    def write_state(self, state: SessionState) -> None:
        _atomic_write(self.state_path, save_session(state))
        _atomic_write(
            os.path.join(self.path, "curve.csv"), state.history.to_csv().encode("utf-8")
        )
        if state.embedding_net is not None:
            ckpt.save_net(
                os.path.join(self.path, "checkpoints", "embedding.json"),
                state.embedding_net,
            )
        if state.classifier is not None:
            ckpt.save_classifier(
                os.path.join(self.path, "checkpoints", "classifier.json"),
                state.classifier,
            )

    def append_labels(self, step_index: int, records, oracle_kind: str) -> None:
        with open(self.journal_path, "a", encoding="utf-8") as f:
            for crop_id, label_name in records:
                f.write(
                    json.dumps(
                        {
                            "step": step_index,
                            "crop_id": crop_id,
                            "label": label_name,
                            "timestamp": time.time(),
                            "oracle_kind": oracle_kind,
                        },
                        sort_keys=True,
                    )
                    + "\n"
                )
            f.flush()
            os.fsync(f.fileno())

    def journal_records(self) -> list[dict]:
        if not os.path.exists(self.journal_path):
            return []
        out = []
        with open(self.journal_path, encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if not line:
                    continue
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError:
                    break  # torn final write; everything before it is intact
        return out

    def pending_answers(self, step_index: int) -> dict[str, str]:
        return {
            r["crop_id"]: r["label"]
            for r in self.journal_records()
            if r["step"] == step_index
        }

    def load(self) -> SessionState:
        with open(self.state_path, "rb") as f:
            return load_session(f.read())


def _atomic_write(path: str, data: bytes) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(data)
        f.flush()
        os.fsync(f.fileno())
    os.replace(tmp, path)
