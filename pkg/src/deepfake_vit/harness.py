"""Experiment pipelines behind the command-line interface.

Each ``run_*`` function takes an :class:`ExperimentConfig` (run seeds are
re-derived from its master seed) and an output directory, writes its artifacts there and returns what it wrote.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .backbone import Teacher
from .checkpoint import Checkpoint, apply_to, from_module, load_checkpoint, save_checkpoint
from .config import ExperimentConfig, from_text, to_text
from .data import Dataset, build_dataset, export_dataset, make_splits, split_sizes, split_specs
from .errors import CheckpointError, ConfigError, ContractError
from .metrics import (DEFAULT_THRESHOLD, EvalRecord, MetricsReport, confusion_and_f1,
                      export_correlation, make_records, roc_curve)
from .model import HEAD_MODES, HybridViT, predict_logits
from .rng import stream
from .train import (LossConfig, TrainResult, split_loss, student_heads, teacher_heads,
                    teacher_logits_for, train_student, train_teacher)

log = logging.getLogger(__name__)

SPLITS = ("train", "val", "test")


def _write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return path


def sha256_file(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def split_signature(ds: Dataset) -> str:
    """Identifies an evaluation split by its sample seeds and labels."""
    h = hashlib.sha256(ds.split.encode())
    h.update(np.ascontiguousarray(ds.seeds, dtype="<u8").tobytes())
    h.update(np.ascontiguousarray(ds.labels, dtype="<i8").tobytes())
    return h.hexdigest()


def load_split(cfg: ExperimentConfig, split: str) -> Dataset:
    if split not in SPLITS:
        raise ConfigError(f"split must be one of {SPLITS}, got {split!r}")
    n = split_sizes(cfg.data)[split]
    if n < 2:
        raise ConfigError(f"split {split!r} has {n} samples")
    return build_dataset(split_specs(cfg.data)[split], split)


def build_teacher(cfg: ExperimentConfig) -> Teacher:
    return Teacher(cfg.backbone, stream(cfg.seed, "teacher", "init"))


def build_student(cfg: ExperimentConfig) -> HybridViT:
    return HybridViT(cfg.model, stream(cfg.seed, "student", "init"))


# ------------------------------------------------------------------ data

def run_generate_data(cfg: ExperimentConfig, out: Path) -> dict[str, Path]:
    """Export every split as PGM/PPM files with per-split manifests, plus
    ``manifest.csv`` for the generated pool (train + val, ``data.count`` rows)
    and ``checksums.sha256`` over the manifests."""
    cfg.validate()
    cfg = cfg.resolved()
    splits = make_splits(cfg.data)
    written = {}
    for ds in (splits.train, splits.val, splits.test):
        if ds is not None:
            written[ds.split] = export_dataset(ds, out)
    pool = []
    for split in ("train", "val"):
        with open(written[split], newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        pool.extend(row + [split] for row in rows)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["path", "label", "seed", "split"])
    writer.writerows(pool)
    written["pool"] = _write(out / "manifest.csv", buf.getvalue())
    sums = "".join(f"{sha256_file(p)}  {p.name}\n" for p in written.values())
    written["checksums"] = _write(out / "checksums.sha256", sums)
    return written


# -------------------------------------------------------------- training

@dataclass
class TrainOutput:
    checkpoint: Path
    log: Path
    result: TrainResult


def _save_run(kind: str, model, cfg: ExperimentConfig, result: TrainResult, out: Path) -> TrainOutput:
    out.mkdir(parents=True, exist_ok=True)
    log_path = _write(out / f"{kind}_log.csv", result.log_csv())
    meta = {"best_epoch": result.best_epoch, "best_val_L_train": repr(result.best_val),
            "master_seed": cfg.seed}
    ckpt_path = out / f"{kind}.ckpt"
    save_checkpoint(ckpt_path, from_module(model, kind, to_text(cfg, include_out=False), meta))
    return TrainOutput(ckpt_path, log_path, result)


def run_train_teacher(cfg: ExperimentConfig, out: Path) -> TrainOutput:
    cfg.validate()
    cfg = cfg.resolved()
    splits = make_splits(cfg.data, include_test=False)
    teacher = build_teacher(cfg)
    result = train_teacher(splits.train, splits.val, teacher, cfg.teacher)
    return _save_run("teacher", teacher, cfg, result, out)


def load_model(path) -> tuple[Checkpoint, ExperimentConfig, object]:
    """Rebuild the model stored in a checkpoint from its own config snapshot."""
    ckpt = load_checkpoint(path)
    cfg = from_text(ckpt.config_text).resolved()
    model = build_teacher(cfg) if ckpt.kind == "teacher" else build_student(cfg)
    apply_to(ckpt, model)
    return ckpt, cfg, model


def load_teacher(path) -> Teacher:
    if path is None or not Path(path).is_file():
        raise CheckpointError(f"teacher checkpoint not found: {path}")
    ckpt, _, teacher = load_model(path)
    if ckpt.kind != "teacher":
        raise CheckpointError(f"{path} holds a {ckpt.kind!r} checkpoint, expected a teacher")
    return teacher


def run_train_student(cfg: ExperimentConfig, out: Path, teacher_path=None) -> TrainOutput:
    cfg.validate()
    cfg = cfg.resolved()
    # resolve the teacher before any data or weights are produced
    teacher = None
    if cfg.loss.lam < 1.0 or teacher_path is not None:
        teacher = load_teacher(teacher_path)
    splits = make_splits(cfg.data, include_test=False)
    model = build_student(cfg)
    result = train_student(splits.train, splits.val, teacher, model, cfg.student, cfg.loss)
    return _save_run("student", model, cfg, result, out)


# ------------------------------------------------------------ evaluation

@dataclass
class EvalOutput:
    report: MetricsReport
    records: list[EvalRecord]
    paths: dict[str, Path]


def _probabilities(model, kind: str, images: np.ndarray) -> dict[str, np.ndarray]:
    if kind == "teacher":
        return {"teacher": T.stable_sigmoid(teacher_logits_for(model, images))}
    return {k: T.stable_sigmoid(v) for k, v in predict_logits(model, images).items()}


def _csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def run_evaluate(checkpoint, out: Path, cfg: ExperimentConfig | None = None, head: str = "distill",
                 threshold: float = DEFAULT_THRESHOLD, split: str = "test",
                 teacher_path=None, loss_lam: float | None = None) -> EvalOutput:
    """Score one split and write the report, ROC points, confusion matrix
    and per-sample predictions. ``cfg`` defaults to the checkpoint's own
    snapshot; a supplied config must match the checkpoint's shapes.

    For a student, the split's training loss (``L_fake``, ``L_real``,
    ``L_train``) is added to the report when the teacher is supplied or the
    loss does not need one.
    """
    ckpt = load_checkpoint(checkpoint)
    snapshot = from_text(ckpt.config_text).resolved()
    cfg = snapshot if cfg is None else cfg
    cfg.validate()
    cfg = cfg.resolved()
    if not 0.0 <= threshold <= 1.0:
        raise ConfigError(f"threshold must be in [0, 1], got {threshold}")
    if ckpt.kind == "teacher":
        model, head = build_teacher(cfg), "teacher"
    else:
        if head not in HEAD_MODES:
            raise ConfigError(f"head must be one of {HEAD_MODES}, got {head!r}")
        model = build_student(cfg)
    apply_to(ckpt, model)
    ds = load_split(cfg, split)

    probs = _probabilities(model, ckpt.kind, ds.images)[head]
    ids = [str(s) for s in ds.seeds]
    records = make_records(ds.labels, probs, head, ids)
    report = confusion_and_f1(records, threshold)
    report.extra.update({"split": split, "split_signature": split_signature(ds),
                         "checkpoint_kind": ckpt.kind, "checkpoint_sha256": sha256_file(checkpoint)})

    lam = cfg.loss.lam if loss_lam is None else loss_lam
    if ckpt.kind == "student" and (teacher_path is not None or lam == 1.0):
        zt = None if teacher_path is None else teacher_logits_for(load_teacher(teacher_path), ds.images)
        br = split_loss(model, student_heads, ds, LossConfig(lam=lam, eps=cfg.loss.eps), zt)
        report.extra.update({"L_fake": br.fake, "L_real": br.real, "L_train": br.value})
    elif ckpt.kind == "teacher":
        br = split_loss(model, teacher_heads, ds, LossConfig(lam=1.0), None)
        report.extra.update({"L_fake": br.fake, "L_real": br.real, "L_train": br.value})

    stem = f"{ckpt.kind}_{head}_{split}"
    out.mkdir(parents=True, exist_ok=True)
    pred_path = _write(out / f"predictions_{stem}.csv",
                       _csv(["id", "label", "probability"],
                            [[r.sample_id, r.label, repr(r.probability)] for r in records]))
    report.extra["predictions"] = pred_path.name
    paths = {
        "json": _write(out / f"report_{stem}.json", report.to_json() + "\n"),
        "csv": _write(out / f"report_{stem}.csv", report.to_csv()),
        "roc": _write(out / f"roc_{stem}.csv",
                      _csv(["threshold", "fpr", "tpr"],
                           [[repr(t), repr(f), repr(p)] for t, f, p in roc_curve(records)])
                      if report.auc is not None else _csv(["threshold", "fpr", "tpr"], [])),
        "confusion": _write(out / f"confusion_{stem}.csv",
                            _csv(["", "predicted_fake", "predicted_real"],
                                 [["actual_fake", report.tp, report.fn],
                                  ["actual_real", report.fp, report.tn]])),
        "predictions": pred_path,
    }
    return EvalOutput(report, records, paths)


def threshold_sweep(records: list[EvalRecord], thresholds=None) -> list[MetricsReport]:
    thresholds = np.round(np.arange(0.05, 0.951, 0.05), 2) if thresholds is None else thresholds
    return [confusion_and_f1(records, float(t)) for t in thresholds]


# ------------------------------------------------------------ comparison

def read_report(path) -> tuple[dict, list[EvalRecord]]:
    path = Path(path)
    with open(path) as fh:
        report = json.load(fh)
    pred = path.parent / report["extra"]["predictions"]
    with open(pred, newline="") as fh:
        rows = list(csv.DictReader(fh))
    records = [EvalRecord(int(r["label"]), float(r["probability"]), report["head"], r["id"]) for r in rows]
    return report, records


COMPARE_METRICS = ("auc", "log_loss", "f1", "threshold", "tp", "fp", "tn", "fn", "n")


def run_compare(report_a, report_b, out: Path) -> dict[str, Path]:
    a, rec_a = read_report(report_a)
    b, rec_b = read_report(report_b)
    if a["extra"].get("split_signature") != b["extra"].get("split_signature"):
        raise ContractError(f"reports cover different evaluation splits "
                            f"({a['extra'].get('split')} vs {b['extra'].get('split')})")
    corr = export_correlation(rec_a, rec_b)
    rows = []
    for key in COMPARE_METRICS:
        va, vb = a[key], b[key]
        diff = None if va is None or vb is None else vb - va
        rows.append([key, _num(va), _num(vb), _num(diff)])
    rows.append(["pearson", _num(corr.pearson), _num(corr.pearson), _num(0.0)])
    label_a = f"{a['extra'].get('checkpoint_kind')}:{a['head']}"
    label_b = f"{b['extra'].get('checkpoint_kind')}:{b['head']}"
    return {
        "correlation": _write(out / "correlation.csv", corr.to_csv()),
        "table": _write(out / "comparison.csv", _csv(["metric", label_a, label_b, "diff"], rows)),
    }


def _num(v) -> str:
    if v is None:
        return ""
    return repr(v) if isinstance(v, float) else str(v)
