"""Training loop (SGD + cosine schedule), evaluation, localization metrics.

One epoch = one shuffled pass; the learning rate follows
lr0 * 0.5 * (1 + cos(pi * t / T)) over epochs, reaching 0 on the final
epoch.  A non-finite loss aborts with a diagnostic naming the first
non-finite tensor in the forward graph.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .data import Dataset
from .errors import ConfigError, NumericError
from .model import APCNN, save_model
from .optim import cosine_lr, sgd_step, zero_grads
from .refine import merge_rois
from .rois import iou
from .tensor import Rng, backward, first_nonfinite


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 16
    lr0: float = 0.001
    momentum: float = 0.9
    seed: int = 0
    eval_every: int = 1

    def validate(self) -> None:
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if self.lr0 <= 0 or not 0 <= self.momentum < 1:
            raise ConfigError(f"bad lr0/momentum: {self.lr0}/{self.momentum}")
        if self.eval_every < 0:
            raise ConfigError("eval_every must be >= 0 (0 = final epoch only)")


def _batches(n: int, batch_size: int, order) -> list:
    return [order[i : i + batch_size] for i in range(0, n, batch_size)]


EVAL_RNG_SEED = 0x45564C  # fixed stream so eval stays deterministic per call


def train(
    model: APCNN,
    train_ds: Dataset,
    cfg: TrainConfig,
    eval_ds: Optional[Dataset] = None,
    out_dir=None,
    log=None,
) -> list:
    """Returns per-epoch records {epoch, lr, train_loss, train_acc, eval_acc}."""
    cfg.validate()
    params = model.parameters()
    shuffle_rng = Rng(cfg.seed).derive(101)
    refine_rng = Rng(cfg.seed).derive(102)
    horizon = max(1, cfg.epochs - 1)
    history = []
    best_acc = None
    out_dir = Path(out_dir) if out_dir is not None else None
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, horizon, cfg.lr0) if cfg.epochs > 1 else cfg.lr0
        losses, hits, seen = [], 0, 0
        order = shuffle_rng.permutation(len(train_ds))
        for batch in _batches(len(train_ds), cfg.batch_size, order):
            x = train_ds.stack(batch)
            labels = train_ds.labels(batch)
            zero_grads(params)
            pred, _ = model.forward(x, mode="train", rng=refine_rng)
            loss = model.loss(pred, labels)
            if not np.isfinite(loss.item()):
                bad = first_nonfinite(loss)
                where = f"{bad.op} with shape {bad.shape}" if bad is not None else "loss"
                raise NumericError(f"non-finite loss at epoch {epoch}: first non-finite tensor is {where}")
            losses.append(loss.item())
            hits += int((model.predict(pred) == np.asarray(labels)).sum())
            seen += len(batch)
            backward(loss)
            sgd_step(params, lr, cfg.momentum)
        record = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": float(np.mean(losses)),
            "train_acc": hits / seen,
            "eval_acc": None,
        }
        last = epoch == cfg.epochs - 1
        if eval_ds is not None and (last or (cfg.eval_every > 0 and (epoch + 1) % cfg.eval_every == 0)):
            record["eval_acc"] = evaluate(model, eval_ds, cfg.batch_size)
            if out_dir is not None and (best_acc is None or record["eval_acc"] >= best_acc):
                best_acc = record["eval_acc"]
                save_model(model, out_dir / "best")
        history.append(record)
        if log is not None:
            log(
                f"epoch {epoch:3d} lr {lr:.6f} loss {record['train_loss']:.4f} "
                f"train_acc {record['train_acc']:.3f}"
                + (f" eval_acc {record['eval_acc']:.3f}" if record["eval_acc"] is not None else "")
            )
    if out_dir is not None:
        save_model(model, out_dir / "final")
    return history


def evaluate(model: APCNN, ds: Dataset, batch_size: int = 16) -> float:
    rng = Rng(EVAL_RNG_SEED)
    hits = 0
    for batch in _batches(len(ds), batch_size, np.arange(len(ds))):
        pred, _ = model.forward(ds.stack(batch), mode="eval", rng=rng)
        hits += int((model.predict(pred) == np.asarray(ds.labels(batch))).sum())
    return hits / len(ds)


def forward_trace(model: APCNN, ds: Dataset, batch_size: int = 16) -> list:
    """Per-image JSON-ready rows: ROIs, refinement plan, per-head logits."""
    rng = Rng(EVAL_RNG_SEED)
    rows = []
    for batch in _batches(len(ds), batch_size, np.arange(len(ds))):
        pred, trace = model.forward(ds.stack(batch), mode="eval", rng=rng)
        picks = model.predict(pred)
        for j, idx in enumerate(batch):
            item = ds.items[int(idx)]
            row = {
                "image_id": item.image_id,
                "label": int(item.label),
                "pred": int(picks[j]),
                "rois": [
                    [r.to_json() for r in level] for level in trace.rois[j]
                ]
                if trace.rois is not None
                else None,
                "plan": trace.plans[j].to_json() if trace.plans is not None else None,
                "logits": {
                    "raw": [
                        [float(v) for v in lg.data[j].reshape(-1)] for lg in pred.per_level_logits_raw
                    ],
                    "refined": [
                        [float(v) for v in lg.data[j].reshape(-1)]
                        for lg in pred.per_level_logits_refined
                    ]
                    if pred.per_level_logits_refined is not None
                    else None,
                },
            }
            rows.append(row)
    return rows


def eval_localization(model: APCNN, ds: Dataset, batch_size: int = 16) -> dict:
    """mIoU and recall of the merged zoom rectangle against ground-truth boxes.

    Items without a box are skipped and counted.
    """
    if not model.cfg.use_fpn or not model.cfg.attention.use_spatial:
        raise ConfigError("localization needs spatial attention (ROIs)")
    rng = Rng(EVAL_RNG_SEED)
    ious, skipped = [], 0
    for batch in _batches(len(ds), batch_size, np.arange(len(ds))):
        x = ds.stack(batch)
        _, trace = model.forward(x, mode="eval", rng=rng)
        img_hw = x.shape[2:]
        for j, idx in enumerate(batch):
            item = ds.items[int(idx)]
            if item.box is None:
                skipped += 1
                continue
            x1, x2, y1, y2 = merge_rois(trace.rois[j], img_hw)
            ious.append(iou((x1, y1, x2, y2), item.box))
    if not ious:
        return {"miou": 0.0, "recall": 0.0, "skipped": skipped}
    arr = np.asarray(ious)
    return {
        "miou": float(arr.mean()),
        "recall": float((arr >= 0.5).mean()),
        "skipped": skipped,
    }


def write_jsonl(path, rows) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")


def read_jsonl(path) -> list:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
