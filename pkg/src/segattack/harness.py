"""Experiment orchestration: data generation, victim training, attack
execution, and report emission.

A run writes everything under one output directory and is byte
deterministic for a fixed (config, seed) in single-threaded mode.
Attacks on distinct images are independent, so multi-threaded runs
produce the same numbers; files are always written in image order
from the main thread.
"""

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import netpbm
from .attacks import (AsmaConfig, PgdConfig, asma_attack, pgd_attack,
                      write_trace_csv)
from .autodiff import Tensor
from .errors import StageError, ValidationError
from .metrics import mean_iou, perturbation_l2, pixel_agreement
from .model import (ModelConfig, TrainConfig, clean_pixel_accuracy, forward,
                    init_model, load_model, predict_mask, save_model, train)
from .scenes import SceneSpec, class_palette, generate_dataset, write_dataset

DIAGNOSTICS_HEADER = ("label", "iou_vs_clean_pct", "iou_vs_target_pct",
                      "pixacc_vs_clean_pct", "pixacc_vs_target_pct", "l2_norm")

_PALETTE = class_palette()


@dataclass(frozen=True)
class AttackJob:
    kind: str                      # "pgd" | "asma"
    config: object = None          # PgdConfig / AsmaConfig; defaulted by kind
    target_rule: str = "next"      # "next" | "fixed:K"
    label: Optional[str] = None

    def __post_init__(self):
        if self.kind not in ("pgd", "asma"):
            raise ValidationError(f"attack kind must be pgd or asma, got {self.kind!r}")
        if self.config is None:
            object.__setattr__(
                self, "config", PgdConfig() if self.kind == "pgd" else AsmaConfig())
        expected = PgdConfig if self.kind == "pgd" else AsmaConfig
        if not isinstance(self.config, expected):
            raise ValidationError(
                f"attack kind {self.kind!r} needs a {expected.__name__}")

    def to_dict(self):
        d = {"kind": self.kind, "target": self.target_rule,
             "config": dict(self.config.__dict__)}
        if self.label:
            d["label"] = self.label
        return d

    @classmethod
    def from_dict(cls, d):
        kind = d.get("kind")
        raw = dict(d.get("config", {}))
        config = None
        if raw:
            config = PgdConfig(**raw) if kind == "pgd" else AsmaConfig(**raw)
        return cls(kind=kind, config=config,
                   target_rule=d.get("target", "next"), label=d.get("label"))


@dataclass(frozen=True)
class ExperimentConfig:
    scene: SceneSpec
    model: ModelConfig
    train: TrainConfig
    attacks: tuple
    out_dir: str
    seed: int = 0
    num_train_images: int = 24
    num_attack_images: int = 8
    threads: int = 1
    model_in: Optional[str] = None   # load this model instead of training

    def __post_init__(self):
        attacks = tuple(self.attacks)
        if not attacks:
            raise ValidationError("experiment needs at least one attack")
        object.__setattr__(self, "attacks", attacks)
        if self.num_attack_images < 1:
            raise ValidationError("need at least one attack image")
        if self.num_train_images < 1:
            raise ValidationError("need at least one training image")
        if self.threads < 1:
            raise ValidationError(f"threads must be >= 1, got {self.threads}")

    def to_dict(self):
        return {
            "seed": self.seed,
            "scene": self.scene.to_dict(),
            "model": self.model.to_dict(),
            "train": dict(self.train.__dict__),
            "attacks": [job.to_dict() for job in self.attacks],
            "out_dir": self.out_dir,
            "num_train_images": self.num_train_images,
            "num_attack_images": self.num_attack_images,
            "threads": self.threads,
            "model_in": self.model_in,
        }

    @classmethod
    def from_dict(cls, d, out_dir=None):
        """Build from parsed JSON. Sub-seeds omitted in the JSON derive
        from the master seed (+0 scene, +1 model, +2 train)."""
        master = int(d.get("seed", 0))
        scene_d = dict(d.get("scene", {}))
        scene_d.setdefault("seed", master)
        model_d = dict(d.get("model", {}))
        model_d.setdefault("seed", master + 1)
        model_d.setdefault("num_classes", scene_d.get("num_classes", 5))
        train_d = dict(d.get("train", {}))
        train_d.setdefault("seed", master + 2)
        return cls(
            scene=SceneSpec.from_dict(scene_d),
            model=ModelConfig.from_dict(model_d),
            train=TrainConfig(**train_d),
            attacks=tuple(AttackJob.from_dict(a) for a in d.get("attacks", [])),
            out_dir=out_dir if out_dir is not None else d.get("out_dir", "."),
            seed=master,
            num_train_images=int(d.get("num_train_images", 24)),
            num_attack_images=int(d.get("num_attack_images", 8)),
            threads=int(d.get("threads", 1)),
            model_in=d.get("model_in"),
        )


@dataclass
class ReportRow:
    label: str
    iou_vs_clean_pct: float
    iou_vs_target_pct: float
    pixacc_vs_clean_pct: float
    pixacc_vs_target_pct: float
    l2_norm: float

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class ReportBundle:
    diagnostics: list = field(default_factory=list)
    traces: dict = field(default_factory=dict)        # label -> [csv paths]
    images: dict = field(default_factory=dict)        # label -> [quadruple dicts]
    attack_results: dict = field(default_factory=dict)
    clean_pixel_accuracy: Optional[float] = None
    model_path: Optional[str] = None
    out_dir: Optional[str] = None


def default_experiment_config(out_dir, seed=11, threads=1):
    """The stock desk-scale experiment: 5 classes, 64x64 scenes, 8 attacked
    images, PGD(eps=0.1, alpha=100, 300 iters) and the adaptive masked
    attack (beta=3e-6, tau=1e-5, 500 iters)."""
    return ExperimentConfig(
        scene=SceneSpec(height=64, width=64, num_classes=5,
                        shapes_min=1, shapes_max=3, seed=seed),
        model=ModelConfig(num_classes=5, in_channels=3, seed=seed + 1),
        train=TrainConfig(learning_rate=0.05, epochs=40, batch_size=8,
                          seed=seed + 2),
        attacks=(
            AttackJob(kind="pgd", config=PgdConfig(epsilon=0.1, alpha=100.0,
                                                   iterations=300)),
            AttackJob(kind="asma", config=AsmaConfig(beta=3e-6, tau=1e-5,
                                                     iterations=500)),
        ),
        out_dir=out_dir,
        seed=seed,
        threads=threads,
    )


def _parse_target_rule(rule):
    if rule == "next":
        return ("next", None)
    if rule.startswith("fixed:"):
        try:
            return ("fixed", int(rule.split(":", 1)[1]))
        except ValueError:
            raise ValidationError(f"bad fixed target rule {rule!r}") from None
    raise ValidationError(f"target rule must be 'next' or 'fixed:K', got {rule!r}")


def select_target(dataset, rule, attacked_indices=None):
    """Target mask per attacked image.

    rule "next" maps image i to the mask of image (i+1) mod N; rule
    "fixed:K" gives every attacked image the mask of dataset image K.
    An image is never allowed to be its own target; with a fixed rule,
    pass attacked_indices excluding K to attack the rest of the set.
    """
    kind, k = _parse_target_rule(rule)
    n = len(dataset)
    if attacked_indices is None:
        attacked_indices = list(range(n))
    if kind == "next":
        if n < 2:
            raise ValidationError("next-image targeting needs at least 2 images")
        sources = {i: (i + 1) % n for i in attacked_indices}
    else:
        if not 0 <= k < n:
            raise ValidationError(f"fixed target index {k} out of range [0, {n})")
        sources = {i: k for i in attacked_indices}
    for i, src in sources.items():
        if src == i:
            raise ValidationError(
                f"image {i} would be its own target under rule {rule!r}")
    return [dataset[sources[i]].mask for i in attacked_indices]


def _resolve_labels(jobs):
    labels = []
    seen = {}
    for job in jobs:
        base = job.label or job.kind
        seen[base] = seen.get(base, 0) + 1
        labels.append(base if seen[base] == 1 else f"{base}-{seen[base]}")
    return labels


def _write_manifest(out_dir, payload):
    with open(os.path.join(out_dir, "MANIFEST.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _mask_to_color(mask):
    rgb = _PALETTE[np.asarray(mask)]
    return Tensor(rgb.transpose(2, 0, 1).astype(np.float64) / 255.0)


def _attack_one(job, params, labeled, target_mask):
    x = Tensor(labeled.image.data[None])
    y_t = np.asarray(target_mask)[None]
    if job.kind == "pgd":
        result = pgd_attack(params, x, y_t, job.config)
    else:
        result = asma_attack(params, x, y_t, job.config)
    clean_pred = predict_mask(forward(params, x))
    adv_pred = predict_mask(forward(params, result.adversarial_image))
    return result, clean_pred[0], adv_pred[0]


def _fmt(value):
    return format(value, ".10g")


def run_experiment(cfg):
    """Run every configured attack on every attacked image and write the
    full report; returns the in-memory bundle."""
    labels = _resolve_labels(cfg.attacks)
    os.makedirs(cfg.out_dir, exist_ok=True)
    stages_done = []
    manifest = {"status": "incomplete", "stage": None, "stages_done": stages_done,
                "config": cfg.to_dict()}
    bundle = ReportBundle(out_dir=cfg.out_dir)

    def enter_stage(name):
        manifest["stage"] = name
        _write_manifest(cfg.out_dir, manifest)

    def finish_stage(name):
        stages_done.append(name)

    current = "generate-data"
    try:
        enter_stage(current)
        scenes = generate_dataset(cfg.scene,
                                  cfg.num_train_images + cfg.num_attack_images)
        write_dataset(scenes, cfg.scene, os.path.join(cfg.out_dir, "dataset"))
        train_set = scenes[:cfg.num_train_images]
        attack_set = scenes[cfg.num_train_images:]
        finish_stage(current)

        current = "train-victim"
        enter_stage(current)
        if cfg.model_in:
            params = load_model(cfg.model_in)
        else:
            params, _ = train(init_model(cfg.model),
                              [(li.image, li.mask) for li in train_set],
                              cfg.train)
        model_path = os.path.join(cfg.out_dir, "model.sgm")
        save_model(params, model_path)
        bundle.model_path = model_path
        bundle.clean_pixel_accuracy = clean_pixel_accuracy(
            params, [(li.image, li.mask) for li in attack_set])
        finish_stage(current)

        for job, label in zip(cfg.attacks, labels):
            current = f"attack:{label}"
            enter_stage(current)
            run_attack_stage(job, label, params, attack_set, cfg.out_dir,
                             bundle, threads=cfg.threads)
            finish_stage(current)

        current = "report"
        enter_stage(current)
        emit_report(bundle, cfg.out_dir)
        finish_stage(current)
    except Exception as exc:
        manifest["status"] = "incomplete"
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        _write_manifest(cfg.out_dir, manifest)
        raise StageError(current, str(exc)) from exc

    manifest["status"] = "complete"
    manifest["stage"] = None
    _write_manifest(cfg.out_dir, manifest)
    return bundle


def run_attack_stage(job, label, params, attack_set, out_dir, bundle, threads=1):
    """Attack every image in attack_set (skipping a fixed target's own
    image), write the per-image artifacts, and append report rows."""
    kind, k = _parse_target_rule(job.target_rule)
    attacked = list(range(len(attack_set)))
    if kind == "fixed" and 0 <= k < len(attack_set):
        attacked = [i for i in attacked if i != k]
    targets = select_target(attack_set, job.target_rule, attacked)

    def work(pos):
        return _attack_one(job, params, attack_set[attacked[pos]], targets[pos])

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(work, range(len(attacked))))
    else:
        outcomes = [work(pos) for pos in range(len(attacked))]

    attack_dir = os.path.join(out_dir, "attacks", label)
    os.makedirs(attack_dir, exist_ok=True)
    rows = []
    trace_paths = []
    quadruples = []
    results = []
    m = params.config.num_classes
    for pos, (result, clean_pred, adv_pred) in enumerate(outcomes):
        i = attacked[pos]
        labeled = attack_set[i]
        y_t = targets[pos]
        row = ReportRow(
            label=f"{label} image {i}",
            iou_vs_clean_pct=100.0 * mean_iou(adv_pred, clean_pred, m),
            iou_vs_target_pct=100.0 * mean_iou(adv_pred, y_t, m),
            pixacc_vs_clean_pct=100.0 * pixel_agreement(adv_pred, clean_pred),
            pixacc_vs_target_pct=100.0 * pixel_agreement(adv_pred, y_t),
            l2_norm=perturbation_l2(labeled.image.data[None],
                                    result.adversarial_image.data),
        )
        rows.append(row)
        results.append(result)

        trace_path = os.path.join(attack_dir, f"trace_{i:03d}.csv")
        write_trace_csv(result.trace, trace_path)
        trace_paths.append(trace_path)

        stem = os.path.join(attack_dir, f"image_{i:03d}")
        quad = {
            "original": stem + "_original.ppm",
            "perturbed": stem + "_perturbed.ppm",
            "clean_pred": stem + "_clean_pred.pgm",
            "adv_pred": stem + "_adv_pred.pgm",
        }
        netpbm.write_image_ppm(labeled.image, quad["original"])
        netpbm.write_image_ppm(Tensor(result.adversarial_image.data[0]),
                               quad["perturbed"])
        netpbm.write_mask_pgm(clean_pred, quad["clean_pred"])
        netpbm.write_mask_pgm(adv_pred, quad["adv_pred"])
        netpbm.write_image_ppm(_mask_to_color(clean_pred),
                               stem + "_clean_pred_color.ppm")
        netpbm.write_image_ppm(_mask_to_color(adv_pred),
                               stem + "_adv_pred_color.ppm")
        quadruples.append(quad)

    mean_row = ReportRow(
        label=f"{label} mean",
        iou_vs_clean_pct=float(np.mean([r.iou_vs_clean_pct for r in rows])),
        iou_vs_target_pct=float(np.mean([r.iou_vs_target_pct for r in rows])),
        pixacc_vs_clean_pct=float(np.mean([r.pixacc_vs_clean_pct for r in rows])),
        pixacc_vs_target_pct=float(np.mean([r.pixacc_vs_target_pct for r in rows])),
        l2_norm=float(np.mean([r.l2_norm for r in rows])),
    )
    bundle.diagnostics.extend(rows + [mean_row])
    bundle.traces[label] = trace_paths
    bundle.images[label] = quadruples
    bundle.attack_results[label] = results


def emit_report(bundle, out_dir):
    """Write diagnostics.csv and its JSON mirror under out_dir."""
    if not bundle.diagnostics:
        raise ValidationError("report bundle has no diagnostics rows")
    try:
        os.makedirs(out_dir, exist_ok=True)
        csv_path = os.path.join(out_dir, "diagnostics.csv")
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(DIAGNOSTICS_HEADER)
            for row in bundle.diagnostics:
                writer.writerow([row.label,
                                 _fmt(row.iou_vs_clean_pct),
                                 _fmt(row.iou_vs_target_pct),
                                 _fmt(row.pixacc_vs_clean_pct),
                                 _fmt(row.pixacc_vs_target_pct),
                                 _fmt(row.l2_norm)])
        json_path = os.path.join(out_dir, "diagnostics.json")
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump([row.to_dict() for row in bundle.diagnostics], fh,
                      indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise ValidationError(f"cannot write report under {out_dir}: {exc}") from exc
    return csv_path, json_path


def read_diagnostics_csv(path):
    with open(path, "r", newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != DIAGNOSTICS_HEADER:
            raise ValidationError(f"{path}: unexpected header {header!r}")
        rows = []
        for rec in reader:
            rows.append(ReportRow(rec[0], *(float(v) for v in rec[1:])))
    return rows
