"""Pipeline stages. Each stage reads the previous stage's JSON manifest from the
run directory and writes its own, so any stage can be re-run from disk."""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
import logging
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .cnn import (
    build_default_network, load_checkpoint, predict, save_checkpoint, train, write_train_log,
)
from .codec import encode, read_png, write_png
from .config import PipelineConfig
from .dataset import (
    label_matrix, normalize_per_day, read_split_manifest, stratified_split_indices,
    undersample_indices, write_split_manifest,
)
from .evaluation import confusion, metrics, write_report
from .features import LABEL_TEXT, extract_matrix, read_feature_csv, write_feature_csv
from .ingest import LogKind, check_cert_r42, load_corpus, load_ground_truth
from .synth import ScenarioConfig, generate

log = logging.getLogger(__name__)

STAGES = ("synth", "ingest", "featurize", "prepare", "encode", "train", "evaluate")


class StageError(RuntimeError):
    """A stage cannot run because its inputs are missing or inconsistent."""


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")


def _read_manifest(out: Path, stage: str) -> dict:
    path = out / f"{stage}.json"
    if not path.exists():
        raise StageError(f"{path} not found; run the '{stage}' stage first")
    return json.loads(path.read_text(encoding="utf-8"))


def _record_run(config: PipelineConfig, stage: str) -> None:
    out = config.out_dir
    path = out / "run.json"
    record = json.loads(path.read_text(encoding="utf-8")) if path.exists() else {}
    done = [s for s in record.get("stages", []) if s != stage] + [stage]
    record.update(
        version=__version__,
        config=config.to_dict(),
        config_sha256=config.digest(),
        seeds=config.to_dict()["seeds"],
        stages=sorted(done, key=STAGES.index),
    )
    _write_json(path, record)


def _seed_meta(config: PipelineConfig) -> dict:
    return {"config_sha256": config.digest(), **{f"seed_{k}": v for k, v in config.to_dict()["seeds"].items()}}


def run_synth(config: PipelineConfig) -> dict:
    out = config.out_dir
    s = config.synth
    result = generate(
        ScenarioConfig(users=s.users, days=s.days, seed=s.seed, malicious_fraction=s.fraction,
                       org_domain=config.features.org_domain),
        out / "logs",
    )
    manifest = {
        "logs": str(result.directory),
        "ground_truth": str(result.ground_truth),
        "active_user_days": result.active_user_days,
        "malicious_user_days": len(result.malicious),
        "event_counts": result.event_counts,
        **_seed_meta(config),
    }
    _write_json(out / "synth.json", manifest)
    return manifest


def _data_paths(config: PipelineConfig) -> tuple[Path, Path]:
    if config.data.logs:
        logs = Path(config.data.logs)
        truth = Path(config.data.ground_truth) if config.data.ground_truth else logs / "ground_truth.csv"
        return logs, truth
    synth = _read_manifest(config.out_dir, "synth")
    return Path(synth["logs"]), Path(synth["ground_truth"])


def run_ingest(config: PipelineConfig) -> dict:
    out = config.out_dir
    logs, truth_path = _data_paths(config)
    for kind in LogKind:
        if not (logs / kind.filename).exists():
            raise FileNotFoundError(f"missing log file: {logs / kind.filename}")
    if not truth_path.exists():
        raise FileNotFoundError(f"missing ground truth: {truth_path}")
    corpus = load_corpus(logs, strict=config.data.strict)
    truth = load_ground_truth(truth_path)
    joined = sum(1 for key in truth.pairs if key in corpus.groups)
    if config.data.expect == "cert-r4.2":
        check_cert_r42(corpus, truth)
    manifest = {
        "logs": str(logs),
        "ground_truth": str(truth_path),
        "files": {
            name: {"rows": count, "sha256": _sha256(logs / name)}
            for name, count in corpus.file_counts.items()
        },
        "total_events": corpus.total_events,
        "skipped_rows": len(corpus.errors),
        "user_days": len(corpus.groups),
        "truth_pairs": len(truth),
        "malicious_user_days": joined,
        **_seed_meta(config),
    }
    _write_json(out / "ingest.json", manifest)
    return manifest


def run_featurize(config: PipelineConfig) -> dict:
    out = config.out_dir
    ingest = _read_manifest(out, "ingest")
    corpus = load_corpus(ingest["logs"], strict=config.data.strict)
    matrix = extract_matrix(corpus.groups, config.office_hours, config.features.org_domain)
    path = out / "features_raw.csv"
    write_feature_csv(matrix, path)
    manifest = {"features_raw": str(path), "rows": len(matrix), "office_hours": config.features.office_hours,
                "org_domain": config.features.org_domain, **_seed_meta(config)}
    _write_json(out / "featurize.json", manifest)
    return manifest


def run_prepare(config: PipelineConfig) -> dict:
    out = config.out_dir
    feat = _read_manifest(out, "featurize")
    ingest = _read_manifest(out, "ingest")
    raw = read_feature_csv(feat["features_raw"])
    truth = load_ground_truth(ingest["ground_truth"])
    norm = normalize_per_day(raw)
    labels, unmatched = label_matrix(norm, truth)
    norm.labels = labels
    train_idx, test_idx = stratified_split_indices(labels, config.split.fraction_train, config.seeds.split)
    kept_idx = train_idx[undersample_indices(labels[train_idx], config.split.ratio, config.seeds.sample)]

    norm_path = out / "features_norm.csv"
    write_feature_csv(norm, norm_path)
    split_path = out / "split_manifest.csv"
    write_split_manifest(split_path, norm.keys, train_idx, kept_idx, {
        "seed_split": config.seeds.split,
        "seed_sample": config.seeds.sample,
        "fraction_train": config.split.fraction_train,
        "ratio": config.split.ratio,
    })

    def counts(idx):
        mal = int(labels[idx].sum())
        return {"malicious": mal, "non_malicious": int(len(idx) - mal), "total": int(len(idx))}

    manifest = {
        "features_norm": str(norm_path),
        "split_manifest": str(split_path),
        "unmatched_truth": unmatched,
        "total": counts(np.arange(len(labels))),
        "train": counts(train_idx),
        "train_sampled": counts(kept_idx),
        "test": counts(test_idx),
        **_seed_meta(config),
    }
    _write_json(out / "prepare.json", manifest)
    return manifest


def run_encode(config: PipelineConfig) -> dict:
    out = config.out_dir
    prep = _read_manifest(out, "prepare")
    norm = read_feature_csv(prep["features_norm"], normalized=True)
    split = read_split_manifest(prep["split_manifest"])
    if split.keys != norm.keys:
        raise StageError("split manifest rows do not match the normalized feature matrix")
    if norm.labels is None:
        raise StageError(f"{prep['features_norm']} carries no labels")
    images_dir = out / "images"
    images_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out / "image_manifest.csv"
    written = {"train": 0, "test": 0}
    with open(manifest_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["path", "user", "date", "label", "partition"])
        for i, (user, day) in enumerate(norm.keys):
            if not split.kept[i]:
                continue
            label = LABEL_TEXT[int(norm.labels[i])]
            image = encode(norm.values[i], user, day, label)
            path = write_png(image, images_dir / image.filename())
            partition = split.partition[i]
            writer.writerow([path.relative_to(out).as_posix(), user, day.isoformat(), label, partition])
            written[partition] += 1
    manifest = {"image_manifest": str(manifest_path), "images": written, **_seed_meta(config)}
    _write_json(out / "encode.json", manifest)
    return manifest


def load_images(out: Path, manifest_path: str | Path, partition: str) -> tuple[np.ndarray, np.ndarray, list[dict]]:
    """Pixel batch scaled to [0, 1], labels, and manifest rows for one partition."""
    rows = []
    with open(manifest_path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            if row["partition"] == partition:
                rows.append(row)
    images = np.zeros((len(rows), 1, 32, 32))
    for i, row in enumerate(rows):
        images[i, 0] = read_png(out / row["path"]).pixels / 255.0
    labels = np.array([1 if r["label"] == LABEL_TEXT[1] else 0 for r in rows], dtype=np.int64)
    return images, labels, rows


def run_train(config: PipelineConfig) -> dict:
    out = config.out_dir
    enc = _read_manifest(out, "encode")
    images, labels, _ = load_images(out, enc["image_manifest"], "train")
    if config.train.checkpoint:
        net = load_checkpoint(config.train.checkpoint)
    else:
        net = build_default_network(config.seeds.init)
    tc = config.train_config()
    net, history = train(net, images, labels, tc,
                         on_epoch=lambda s: log.info("epoch %d loss %.5f acc %.4f", s.epoch, s.loss, s.train_accuracy))
    ckpt = save_checkpoint(net, out / "model.ckpt")
    log_path = out / "train_log.csv"
    write_train_log(history, log_path)
    manifest = {
        "checkpoint": str(ckpt),
        "train_log": str(log_path),
        "samples": int(len(labels)),
        "final_loss": history[-1].loss if history else None,
        "final_train_accuracy": history[-1].train_accuracy if history else None,
        "train_config": tc.__dict__,
        **_seed_meta(config),
    }
    _write_json(out / "train.json", manifest)
    return manifest


def run_evaluate(config: PipelineConfig) -> dict:
    out = config.out_dir
    enc = _read_manifest(out, "encode")
    trained = _read_manifest(out, "train")
    net = load_checkpoint(trained["checkpoint"])
    images, labels, rows = load_images(out, enc["image_manifest"], "test")
    predicted, probs = predict(net, images)
    with open(out / "predictions.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["user", "date", "label", "predicted", "p_malicious"])
        for row, p, pr in zip(rows, predicted, probs):
            writer.writerow([row["user"], row["date"], row["label"], LABEL_TEXT[int(p)], f"{pr[1]:.6f}"])
    cm = confusion(predicted, labels)
    achieved = metrics(cm)
    digest = config.digest()
    txt, csv_path = write_report(
        out, achieved, cm,
        method="Image-based CNN (this run)",
        source=f"measured; config sha256:{digest}",
        extra=[f"config sha256: {digest}", f"test samples: {cm.total}"],
    )
    manifest = {
        "report_csv": str(csv_path),
        "report_txt": str(txt),
        "confusion": cm.__dict__,
        "metrics": achieved.__dict__,
        **_seed_meta(config),
    }
    _write_json(out / "evaluate.json", manifest)
    return manifest


STAGE_FUNCS: dict[str, Callable[[PipelineConfig], dict]] = {
    "synth": run_synth,
    "ingest": run_ingest,
    "featurize": run_featurize,
    "prepare": run_prepare,
    "encode": run_encode,
    "train": run_train,
    "evaluate": run_evaluate,
}


def run_stage(config: PipelineConfig, stage: str) -> dict:
    config.out_dir.mkdir(parents=True, exist_ok=True)
    log.info("stage %s -> %s", stage, config.out_dir)
    result = STAGE_FUNCS[stage](config)
    _record_run(config, stage)
    return result


def run_pipeline(config: PipelineConfig) -> dict[str, dict]:
    """All stages in order; ``synth`` only when no log directory is configured."""
    results = {}
    for stage in STAGES:
        if stage == "synth" and config.data.logs:
            continue
        results[stage] = run_stage(config, stage)
    return results
