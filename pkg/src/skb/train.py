"""Training loops, run configuration, evaluation, and ablation sweeps."""

from __future__ import annotations

import hashlib
import itertools
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .data import Sketch, load_cache, truncate_pad, truncated
from .encoder import EncoderConfig
from .heads import (
    class_scores_from_neighbors,
    mean_average_precision,
    retrieval_objective,
    top_k_accuracy,
)
from .masking import make_gestalt_batch, sgm_loss_terms
from .model import ModelConfig, SketchModel
from .optim import Adam
from .tensor import cross_entropy, no_grad

ENV_PREFIX = "SKB_"
TASKS = ("pretrain", "finetune_cls", "finetune_ret", "eval", "complete")


class ConfigError(ValueError):
    """Run configuration is inconsistent with the data or checkpoint."""


@dataclass
class RunConfig:
    task: str = "pretrain"
    seed: int = 0
    epochs: int = 10
    batch_size: int = 64
    learning_rate: float = 1e-4
    mask_mode: str = "full"
    mask_ratio: float = 0.15
    lambda_pos: float = 1.0
    lambda_state: float = 1.0
    margin: float = 0.2
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    embed_dim: int = 128
    max_len: int = 250
    stroke_cap: int = 50
    data: dict = field(default_factory=dict)
    checkpoint: str | None = None
    init_from: str | None = None
    num_classes: int | None = None
    target_accuracy: float | None = None
    target_split: str = "valid"
    eval_train: bool = True

    def __post_init__(self):
        if isinstance(self.encoder, dict):
            self.encoder = EncoderConfig(**self.encoder)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "RunConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def save_json(self, path):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            encoder=self.encoder,
            embed_dim=self.embed_dim,
            max_len=self.max_len,
            stroke_cap=self.stroke_cap,
        )


def _parse_env_value(raw: str):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_env_overrides(cfg: RunConfig, environ=None) -> RunConfig:
    """Override flat fields via SKB_<FIELD>, encoder fields via SKB_ENCODER_<FIELD>."""
    environ = os.environ if environ is None else environ
    updates = {}
    for f in fields(RunConfig):
        if f.name == "encoder":
            continue
        key = ENV_PREFIX + f.name.upper()
        if key in environ:
            updates[f.name] = _parse_env_value(environ[key])
    enc_updates = {}
    for f in fields(EncoderConfig):
        key = ENV_PREFIX + "ENCODER_" + f.name.upper()
        if key in environ:
            enc_updates[f.name] = _parse_env_value(environ[key])
    if "data" in updates and not isinstance(updates["data"], dict):
        raise ConfigError("SKB_DATA must be a JSON object of split paths")
    for split in ("train", "valid", "test"):
        key = ENV_PREFIX + "DATA_" + split.upper()
        if key in environ:
            updates.setdefault("data", dict(cfg.data))[split] = environ[key]
    out = replace(cfg, **updates) if updates else cfg
    if enc_updates:
        out = replace(out, encoder=replace(out.encoder, **enc_updates))
    return out


def config_hash(cfg: RunConfig | dict) -> str:
    d = cfg.to_dict() if isinstance(cfg, RunConfig) else cfg
    blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:12]


@dataclass
class TrainingCurve:
    records: list[dict] = field(default_factory=list)

    def add(self, epoch: int, **metrics):
        if self.records and epoch <= self.records[-1]["epoch"]:
            raise ValueError("curve epochs must be strictly increasing")
        self.records.append({"epoch": epoch, **metrics})

    def series(self, key: str) -> list:
        return [r[key] for r in self.records if key in r]

    def epochs_to_target(self, key: str, threshold: float) -> int | None:
        """1-based count of epochs needed to first reach ``threshold``."""
        for i, r in enumerate(self.records):
            if r.get(key) is not None and r[key] >= threshold:
                return i + 1
        return None

    def final_smoothed(self, key: str = "loss", window: int = 3) -> float:
        vals = self.series(key)
        return float(np.mean(vals[-window:]))

    def initial(self, key: str = "loss") -> float:
        return float(self.series(key)[0])


# -- data plumbing -----------------------------------------------------------


def load_split_data(cfg: RunConfig, data=None) -> tuple[dict[str, list[Sketch]], int]:
    """Resolve split sketch lists and the class count.

    ``data`` may supply in-memory lists keyed by split name, bypassing the
    cache files (used by tests and sweeps).
    """
    splits: dict[str, list[Sketch]] = {}
    class_names = None
    if data is not None:
        splits = {k: list(v) for k, v in data.items()}
    else:
        for split, path in cfg.data.items():
            sketches, names = load_cache(path)
            splits[split] = sketches
            if names and split == "train":
                class_names = names
    num_classes = cfg.num_classes
    if num_classes is None and class_names:
        num_classes = len(class_names)
    if num_classes is None:
        labels = [s.label for split in splits.values() for s in split if s.label is not None]
        num_classes = (max(labels) + 1) if labels else 0
    return splits, int(num_classes)


def stack_batch(sketches: list[Sketch], max_len: int, stroke_cap: int):
    """Pad a batch to its own longest (truncated) length."""
    width = min(max(s.n for s in sketches), max_len)
    width = max(width, 1)
    b = len(sketches)
    pts = np.zeros((b, width, 5), dtype=np.float32)
    mask = np.zeros((b, width), dtype=np.float32)
    ids = np.zeros((b, width), dtype=np.int32)
    for i, s in enumerate(sketches):
        pts[i], mask[i], ids[i] = truncate_pad(s, width, stroke_cap)
    labels = np.array(
        [-1 if s.label is None else s.label for s in sketches], dtype=np.int64
    )
    return pts, mask, ids, labels


def _batches(n: int, batch_size: int, rng: np.random.Generator | None):
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def build_model(cfg: RunConfig, num_classes: int | None = None) -> SketchModel:
    return SketchModel(
        cfg.model_config(),
        num_classes=num_classes,
        task=cfg.task,
        seed=cfg.seed,
        margin=cfg.margin,
    )


def _save_model_checkpoint(cfg: RunConfig, model: SketchModel, optimizer: Adam,
                           step: int, num_classes: int):
    if cfg.checkpoint is None:
        return
    config = cfg.to_dict()
    config["num_classes"] = num_classes
    moments, steps = optimizer.export_state()
    save_checkpoint(
        cfg.checkpoint,
        {name: p.data for name, p in model.param_dict().items()},
        config=config,
        step=step,
        opt_moments=moments,
        opt_steps=steps,
    )


def _maybe_init_from(cfg: RunConfig, model: SketchModel, optimizer: Adam) -> int:
    if not cfg.init_from:
        return 0
    ckpt = load_checkpoint(cfg.init_from)
    try:
        model.load_params(ckpt.params)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    same_task = ckpt.config.get("task") == cfg.task
    if same_task and ckpt.opt_moments:
        optimizer.load_state(ckpt.opt_moments, ckpt.opt_steps)
    return ckpt.step


# -- evaluation helpers --------------------------------------------------------


def classifier_scores(model: SketchModel, sketches: list[Sketch], cfg: RunConfig
                      ) -> tuple[np.ndarray, np.ndarray]:
    scores = np.zeros((len(sketches), model.cls_head.num_classes), dtype=np.float64)
    labels = np.zeros(len(sketches), dtype=np.int64)
    model.train_mode(False)
    with no_grad():
        for idx in _batches(len(sketches), cfg.batch_size, None):
            batch = [sketches[i] for i in idx]
            pts, mask, ids, lab = stack_batch(batch, cfg.max_len, cfg.stroke_cap)
            scores[idx] = model.classify_logits(pts, ids, mask).data
            labels[idx] = lab
    return scores, labels


def retrieval_embeddings(model: SketchModel, sketches: list[Sketch], cfg: RunConfig
                         ) -> tuple[np.ndarray, np.ndarray]:
    embs = np.zeros((len(sketches), 256), dtype=np.float64)
    labels = np.zeros(len(sketches), dtype=np.int64)
    model.train_mode(False)
    with no_grad():
        for idx in _batches(len(sketches), cfg.batch_size, None):
            batch = [sketches[i] for i in idx]
            pts, mask, ids, lab = stack_batch(batch, cfg.max_len, cfg.stroke_cap)
            embs[idx] = model.retrieval_embed(pts, ids, mask).data
            labels[idx] = lab
    return embs, labels


def _sgm_val_loss(model: SketchModel, sketches: list[Sketch], cfg: RunConfig,
                  rng: np.random.Generator) -> tuple[float, float, float]:
    total = l1_sum = ce_sum = 0.0
    count = 0
    model.train_mode(False)
    with no_grad():
        for idx in _batches(len(sketches), cfg.batch_size, None):
            batch = make_gestalt_batch(
                [sketches[i] for i in idx], cfg.max_len, cfg.mask_ratio,
                cfg.mask_mode, rng, cfg.stroke_cap,
            )
            pos_pred, state_logits = model.gestalt_batch_forward(batch)
            l1, ce = sgm_loss_terms(batch, pos_pred, state_logits)
            b = len(idx)
            l1_sum += l1.item() * b
            ce_sum += ce.item() * b
            total += (cfg.lambda_pos * l1.item() + cfg.lambda_state * ce.item()) * b
            count += b
    return total / count, l1_sum / count, ce_sum / count


# -- training loops ---------------------------------------------------------------


def pretrain(cfg: RunConfig, data=None) -> tuple[SketchModel, TrainingCurve]:
    """Masked-point pretraining; saves the best-validation checkpoint."""
    if cfg.task != "pretrain":
        raise ConfigError(f"pretrain called with task {cfg.task!r}")
    splits, num_classes = load_split_data(cfg, data)
    if "train" not in splits or not splits["train"]:
        raise ConfigError("pretraining needs a non-empty train split")
    train = splits["train"]
    valid = splits.get("valid", [])
    model = build_model(cfg, num_classes=None)
    optimizer = Adam(model.parameters(), learning_rate=cfg.learning_rate)
    step = _maybe_init_from(cfg, model, optimizer)
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    mask_rng = np.random.default_rng([cfg.seed, 2])
    curve = TrainingCurve()
    best_val = np.inf
    saved = False
    for epoch in range(cfg.epochs):
        model.train_mode(True)
        loss_sum = l1_sum = ce_sum = 0.0
        seen = 0
        for idx in _batches(len(train), cfg.batch_size, shuffle_rng):
            batch = make_gestalt_batch(
                [train[i] for i in idx], cfg.max_len, cfg.mask_ratio,
                cfg.mask_mode, mask_rng, cfg.stroke_cap,
            )
            pos_pred, state_logits = model.gestalt_batch_forward(batch)
            l1, ce = sgm_loss_terms(batch, pos_pred, state_logits)
            loss = l1 * cfg.lambda_pos + ce * cfg.lambda_state
            optimizer.zero_grads()
            loss.backward()
            optimizer.step()
            step += 1
            b = len(idx)
            loss_sum += loss.item() * b
            l1_sum += l1.item() * b
            ce_sum += ce.item() * b
            seen += b
        record = {
            "loss": loss_sum / seen,
            "pos_l1": l1_sum / seen,
            "state_ce": ce_sum / seen,
        }
        if valid:
            val_rng = np.random.default_rng([cfg.seed, 3, epoch])
            v_loss, v_l1, v_ce = _sgm_val_loss(model, valid, cfg, val_rng)
            record.update(val_loss=v_loss, val_pos_l1=v_l1, val_state_ce=v_ce)
            if v_loss < best_val:
                best_val = v_loss
                _save_model_checkpoint(cfg, model, optimizer, step, num_classes)
                saved = True
        curve.add(epoch, **record)
    if not saved:
        _save_model_checkpoint(cfg, model, optimizer, step, num_classes)
    return model, curve


def finetune(cfg: RunConfig, data=None) -> tuple[SketchModel, TrainingCurve]:
    """Full-model fine-tuning for classification or retrieval."""
    if cfg.task not in ("finetune_cls", "finetune_ret"):
        raise ConfigError(f"finetune called with task {cfg.task!r}")
    splits, num_classes = load_split_data(cfg, data)
    if "train" not in splits or not splits["train"]:
        raise ConfigError("fine-tuning needs a non-empty train split")
    if num_classes < 2:
        raise ConfigError("fine-tuning needs at least 2 classes")
    train = splits["train"]
    valid = splits.get("valid", [])
    model = build_model(cfg, num_classes=num_classes)
    optimizer = Adam(model.parameters(), learning_rate=cfg.learning_rate)
    step = _maybe_init_from(cfg, model, optimizer)
    shuffle_rng = np.random.default_rng([cfg.seed, 1])
    triplet_rng = np.random.default_rng([cfg.seed, 4])
    curve = TrainingCurve()
    best_val = -np.inf
    saved = False
    by_class: dict[int, np.ndarray] = {}
    if cfg.task == "finetune_ret":
        labels_all = np.array([s.label for s in train])
        by_class = {c: np.flatnonzero(labels_all == c) for c in set(labels_all.tolist())}
        if len(by_class) < 2:
            raise ConfigError("retrieval fine-tuning needs at least 2 classes present")

    for epoch in range(cfg.epochs):
        model.train_mode(True)
        loss_sum = 0.0
        seen = 0
        for idx in _batches(len(train), cfg.batch_size, shuffle_rng):
            batch = [train[i] for i in idx]
            if cfg.task == "finetune_cls":
                pts, mask, ids, labels = stack_batch(batch, cfg.max_len, cfg.stroke_cap)
                logits = model.classify_logits(pts, ids, mask)
                loss = cross_entropy(logits, labels)
            else:
                loss = _triplet_step_loss(model, train, idx, by_class, triplet_rng, cfg)
            optimizer.zero_grads()
            loss.backward()
            optimizer.step()
            step += 1
            loss_sum += loss.item() * len(idx)
            seen += len(idx)
        record = {"loss": loss_sum / seen}
        metric = None
        if cfg.task == "finetune_cls":
            if cfg.eval_train:
                scores, labels = classifier_scores(model, train, cfg)
                record["train_acc"] = top_k_accuracy(scores, labels, 1)
            if valid:
                scores, labels = classifier_scores(model, valid, cfg)
                record["val_acc"] = top_k_accuracy(scores, labels, 1)
            metric = record.get(
                "train_acc" if cfg.target_split == "train" else "val_acc"
            )
            best_key = "val_acc" if valid else "train_acc"
        else:
            if valid:
                embs, labels = retrieval_embeddings(model, valid, cfg)
                record["val_map"] = mean_average_precision(
                    embs, embs, labels, labels, exclude_self=True
                )
            metric = record.get("val_map")
            best_key = "val_map"
        curve.add(epoch, **record)
        current = record.get(best_key)
        if current is not None and current > best_val:
            best_val = current
            _save_model_checkpoint(cfg, model, optimizer, step, num_classes)
            saved = True
        if cfg.target_accuracy is not None and metric is not None:
            if metric >= cfg.target_accuracy:
                break
    if not saved:
        _save_model_checkpoint(cfg, model, optimizer, step, num_classes)
    return model, curve


def _triplet_step_loss(model, train, idx, by_class, rng, cfg):
    anchors = [train[i] for i in idx]
    classes = sorted(by_class)
    pos_sk, neg_sk = [], []
    for i in idx:
        label = train[i].label
        pool = by_class[label]
        j = int(rng.choice(pool))
        if pool.size > 1:
            while j == i:
                j = int(rng.choice(pool))
        pos_sk.append(train[j])
        others = [c for c in classes if c != label]
        neg_sk.append(train[int(rng.choice(by_class[int(rng.choice(others))]))])
    a = stack_batch(anchors, cfg.max_len, cfg.stroke_cap)
    p = stack_batch(pos_sk, cfg.max_len, cfg.stroke_cap)
    n = stack_batch(neg_sk, cfg.max_len, cfg.stroke_cap)
    a_emb = model.retrieval_embed(a[0], a[2], a[1])
    p_emb = model.retrieval_embed(p[0], p[2], p[1])
    n_emb = model.retrieval_embed(n[0], n[2], n[1])
    return retrieval_objective(a_emb, p_emb, n_emb, a[3], n[3], model.ret_head)


# -- evaluation -----------------------------------------------------------------


def evaluate(cfg: RunConfig, split: str = "test", data=None) -> dict:
    """Metric report for a finetuned checkpoint on one split."""
    if not cfg.checkpoint:
        raise ConfigError("evaluate needs cfg.checkpoint")
    ckpt = load_checkpoint(cfg.checkpoint)
    ck_cfg = RunConfig.from_dict(ckpt.config) if ckpt.config else cfg
    if not ck_cfg.data and cfg.data:
        ck_cfg = replace(ck_cfg, data=cfg.data)
    if data is None and split not in ck_cfg.data and split in cfg.data:
        ck_cfg = replace(ck_cfg, data={**ck_cfg.data, split: cfg.data[split]})
    splits, num_classes = load_split_data(ck_cfg, data)
    if split not in splits or not splits[split]:
        raise ConfigError(f"no {split!r} split available for evaluation")
    sketches = splits[split]
    model = build_model(ck_cfg, num_classes=num_classes)
    try:
        model.load_params(ckpt.params)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    report = {
        "top1": None,
        "top5": None,
        "map": None,
        "num_queries": len(sketches),
        "config_hash": config_hash(ckpt.config if ckpt.config else cfg),
        "split": split,
        "task": ck_cfg.task,
    }
    if ck_cfg.task == "finetune_cls":
        scores, labels = classifier_scores(model, sketches, ck_cfg)
        report["top1"] = top_k_accuracy(scores, labels, 1)
        report["top5"] = top_k_accuracy(scores, labels, min(5, num_classes))
    elif ck_cfg.task == "finetune_ret":
        embs, labels = retrieval_embeddings(model, sketches, ck_cfg)
        scores = class_scores_from_neighbors(embs, embs, labels, num_classes,
                                             exclude_self=True)
        report["top1"] = top_k_accuracy(scores, labels, 1)
        report["top5"] = top_k_accuracy(scores, labels, min(5, num_classes))
        report["map"] = mean_average_precision(embs, embs, labels, labels,
                                               exclude_self=True)
    else:
        raise ConfigError(f"checkpoint task {ck_cfg.task!r} has no evaluation metrics")
    return report


# -- ablation sweeps ---------------------------------------------------------------


def _subsample_by_class(sketches: list[Sketch], num_classes: int, per_class: int
                        ) -> list[Sketch]:
    out = []
    taken: dict[int, int] = {}
    for s in sketches:
        if s.label is None or s.label >= num_classes:
            continue
        if taken.get(s.label, 0) < per_class:
            out.append(s)
            taken[s.label] = taken.get(s.label, 0) + 1
    return out


def ablation_sweep(pretrain_cfg: RunConfig | None, finetune_cfg: RunConfig,
                   axes: dict, workdir, data: dict | None = None,
                   eval_split: str = "test") -> list[dict]:
    """Grid over mask modes, seeds, encoder variants, and pretraining volume.

    Every cell optionally pretrains, then fine-tunes from that checkpoint and
    evaluates. Rows carry the cell coordinates plus the metric report.
    """
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    axis_names = [k for k in ("mask_mode", "encoder", "volume", "seed") if k in axes]
    grids = [axes[k] for k in axis_names]
    rows = []
    for cell_id, combo in enumerate(itertools.product(*grids)):
        cell = dict(zip(axis_names, combo))
        pre = replace(pretrain_cfg) if pretrain_cfg is not None else None
        fin = replace(finetune_cfg)
        if "mask_mode" in cell and pre is not None:
            pre = replace(pre, mask_mode=cell["mask_mode"])
        if "seed" in cell:
            if pre is not None:
                pre = replace(pre, seed=cell["seed"])
            fin = replace(fin, seed=cell["seed"])
        if "encoder" in cell:
            enc = EncoderConfig(**cell["encoder"])
            if pre is not None:
                pre = replace(pre, encoder=enc)
            fin = replace(fin, encoder=enc)
        pre_data = dict(data) if data is not None else None
        if "volume" in cell and pre is not None:
            c, n = cell["volume"]
            if pre_data is not None:
                pre_data["train"] = _subsample_by_class(pre_data["train"], c, n)
            else:
                splits, _ = load_split_data(pre, None)
                pre_data = dict(splits)
                pre_data["train"] = _subsample_by_class(splits["train"], c, n)
        row = dict(cell)
        if "encoder" in cell:
            row["encoder"] = EncoderConfig(**cell["encoder"]).tag()
        if "volume" in cell:
            row["volume"] = f"{cell['volume'][0]}x{cell['volume'][1]}"
        if pre is not None and pre.epochs > 0:
            pre = replace(pre, checkpoint=str(workdir / f"cell{cell_id}_pre.ckpt"))
            pretrain(pre, data=pre_data)
            fin = replace(fin, init_from=pre.checkpoint)
        fin = replace(fin, checkpoint=str(workdir / f"cell{cell_id}_fin.ckpt"))
        _, curve = finetune(fin, data=data)
        report = evaluate(fin, split=eval_split, data=data)
        row.update(top1=report["top1"], top5=report["top5"], map=report["map"])
        if curve.records and "val_acc" in curve.records[-1]:
            row["final_val_acc"] = curve.records[-1]["val_acc"]
        rows.append(row)
    return rows


def format_sweep_table(rows: list[dict]) -> str:
    if not rows:
        return "(no sweep rows)"
    keys = list(rows[0].keys())
    widths = {k: max(len(k), *(len(_fmt_cell(r.get(k))) for r in rows)) for k in keys}
    lines = ["  ".join(k.ljust(widths[k]) for k in keys)]
    lines.append("  ".join("-" * widths[k] for k in keys))
    for r in rows:
        lines.append("  ".join(_fmt_cell(r.get(k)).ljust(widths[k]) for k in keys))
    return "\n".join(lines)


def _fmt_cell(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)
