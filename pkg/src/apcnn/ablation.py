"""Ablation runner: trains one configuration per table row with a shared seed.

Suites mirror the study structure: ``pyramid`` (baseline / feature
pyramid / attention pyramid), ``attention`` (gate arrangements and
bottom-up pathways, with localization metrics where spatial masks
exist), ``refinement`` (erase x zoom x {ROI, Random} guidance), and
``position`` (where the refinement is applied).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .backbone import BackboneConfig
from .data import gen_synthetic
from .errors import ConfigError
from .model import APCNN, ModelConfig
from .pyramid import AttentionConfig
from .rois import RoiConfig
from .tensor import Rng
from .train import TrainConfig, eval_localization, evaluate, train

SUITES = ("pyramid", "attention", "refinement", "position")


@dataclass
class AblationSettings:
    num_classes: int = 8
    train_per_class: int = 32
    test_per_class: int = 16
    size: int = 96
    epochs: int = 30
    batch_size: int = 16
    lr0: float = 0.001
    momentum: float = 0.9
    seed: int = 0
    fpn_channels: int = 128
    patch_frac: float = 64.0 / 448.0
    distractors: int = 3
    patch_jitter: float = 0.0


def make_datasets(s: AblationSettings):
    rng = Rng(s.seed)
    train_ds = gen_synthetic(
        s.num_classes, s.train_per_class, s.size, rng.derive(1), "train",
        s.patch_frac, s.distractors, s.patch_jitter
    )
    test_ds = gen_synthetic(
        s.num_classes, s.test_per_class, s.size, rng.derive(2), "test",
        s.patch_frac, s.distractors, s.patch_jitter
    )
    return train_ds, test_ds


def attention_cfg(s: AblationSettings, use_spatial=True, use_channel=True, pathway="channel_bottom_up"):
    return AttentionConfig(
        use_spatial=use_spatial, use_channel=use_channel, pathway=pathway, fpn_channels=s.fpn_channels
    )


def model_cfg(s: AblationSettings, **kw) -> ModelConfig:
    kw.setdefault("backbone", BackboneConfig(input_size=s.size))
    kw.setdefault("attention", attention_cfg(s))
    kw.setdefault("roi", RoiConfig())
    kw.setdefault("num_classes", s.num_classes)
    return ModelConfig(**kw)


def train_one(cfg: ModelConfig, s: AblationSettings, datasets=None, seed=None) -> tuple:
    seed = s.seed if seed is None else seed
    train_ds, test_ds = datasets if datasets is not None else make_datasets(replace(s, seed=seed))
    model = APCNN(cfg, Rng(seed))
    tc = TrainConfig(
        epochs=s.epochs, batch_size=s.batch_size, lr0=s.lr0, momentum=s.momentum, seed=seed, eval_every=0
    )
    train(model, train_ds, tc, eval_ds=None)
    return model, evaluate(model, test_ds, s.batch_size), test_ds


def suite_rows(suite: str, s: AblationSettings) -> list:
    if suite == "pyramid":
        return [
            ("Baseline", model_cfg(s, use_fpn=False, two_stage=False,
                                   attention=attention_cfg(s, False, False, "none"))),
            ("FP", model_cfg(s, two_stage=False, attention=attention_cfg(s, False, False, "none"))),
            ("FP + AP", model_cfg(s, two_stage=False)),
        ]
    if suite == "attention":
        arrangements = [
            ("FPN", False, False, "none"),
            ("FPN + C", False, True, "none"),
            ("FPN + S", True, False, "none"),
            ("FPN + S + C", True, True, "none"),
            ("FPN + C + SP", True, True, "spatial_bottom_up"),
            ("FPN + S + CP", True, True, "channel_bottom_up"),
        ]
        return [
            (label, model_cfg(s, two_stage=False, attention=attention_cfg(s, sp, ch, pw)))
            for label, sp, ch, pw in arrangements
        ]
    if suite == "refinement":
        rows = []
        for erase in (False, True):
            for zoom in (False, True):
                for guidance in ("ROI", "Random"):
                    label = f"erase={'+' if erase else '-'} zoom={'+' if zoom else '-'} {guidance}"
                    rows.append(
                        (
                            label,
                            model_cfg(
                                s,
                                use_dropblock=erase,
                                use_zoom=zoom,
                                random_drop=(guidance == "Random"),
                                random_zoom=(guidance == "Random"),
                            ),
                        )
                    )
        return rows
    if suite == "position":
        return [
            ("Input image", model_cfg(s, refinement_position="input")),
            ("Block0 feature", model_cfg(s, refinement_position="block0")),
            ("Tap0 feature", model_cfg(s, refinement_position="tap0")),
        ]
    raise ConfigError(f"unknown suite {suite!r}; choose from {SUITES}")


def run_ablation(suite: str, s: AblationSettings = None, log=None) -> list:
    """Train every row of a suite on a shared seed; returns result dicts."""
    s = s or AblationSettings()
    datasets = make_datasets(s)
    results = []
    for label, cfg in suite_rows(suite, s):
        model, acc, test_ds = train_one(cfg, s, datasets)
        row = {"method": label, "accuracy": acc}
        if suite == "attention" and cfg.attention.use_spatial:
            loc = eval_localization(model, test_ds, s.batch_size)
            row["miou"] = loc["miou"]
            row["recall"] = loc["recall"]
        if log is not None:
            log(f"{label}: acc {acc:.3f}" + (f" miou {row['miou']:.3f}" if "miou" in row else ""))
        results.append(row)
    return results


def format_table(rows) -> str:
    """TSV with a header; missing metrics render as '-'."""
    cols = ["method", "accuracy"]
    if any("miou" in r for r in rows):
        cols += ["miou", "recall"]
    lines = ["\t".join(cols)]
    for r in rows:
        vals = []
        for c in cols:
            v = r.get(c)
            if v is None:
                vals.append("-")
            elif isinstance(v, float):
                vals.append(f"{v:.4f}")
            else:
                vals.append(str(v))
        lines.append("\t".join(vals))
    return "\n".join(lines) + "\n"


def directional_ablation(s: AblationSettings = None, seeds=(0, 1, 2), log=None) -> dict:
    """Mean test accuracy for baseline / FP / FP+AP / FP+AP+refine over seeds."""
    s = s or AblationSettings()
    configs = [
        ("baseline", lambda: model_cfg(s, use_fpn=False, two_stage=False,
                                       attention=attention_cfg(s, False, False, "none"))),
        ("FP", lambda: model_cfg(s, two_stage=False, attention=attention_cfg(s, False, False, "none"))),
        ("FP+AP", lambda: model_cfg(s, two_stage=False)),
        ("FP+AP+refine", lambda: model_cfg(s)),
    ]
    means = {}
    for label, build in configs:
        accs = []
        for seed in seeds:
            _, acc, _ = train_one(build(), s, datasets=None, seed=seed)
            accs.append(acc)
            if log is not None:
                log(f"{label} seed {seed}: {acc:.3f}")
        means[label] = sum(accs) / len(accs)
    return means
