"""Command-line entry point.

Subcommands: gen-data, train, attack, report, run. Seeds can be forced
globally with SEGATTACK_SEED. Exit codes: 0 success, 1 validation
error, 2 runtime failure.
"""

import argparse
import json
import os
import sys

from . import harness, scenes
from .attacks import AsmaConfig, PgdConfig
from .errors import StageError, ValidationError
from .harness import (AttackJob, ExperimentConfig, ReportBundle, ReportRow,
                      emit_report, run_attack_stage)
from .model import (ModelConfig, TrainConfig, clean_pixel_accuracy,
                    init_model, load_model, save_model, train)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def _load_json(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ValidationError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: bad JSON: {exc}") from exc


def _seed_override():
    raw = os.environ.get("SEGATTACK_SEED")
    if raw is None:
        return None
    try:
        return int(raw)
    except ValueError:
        raise ValidationError(f"SEGATTACK_SEED must be an integer, got {raw!r}") from None


def _apply_seed(d, seed):
    """Force a master seed: drop sub-seeds so they re-derive from it."""
    d = dict(d)
    d["seed"] = seed
    for key in ("scene", "model", "train"):
        if isinstance(d.get(key), dict):
            d[key] = {k: v for k, v in d[key].items() if k != "seed"}
    return d


def _cmd_gen_data(args):
    spec_d = _load_json(args.spec)
    count = int(spec_d.pop("count", 8))
    seed = _seed_override()
    if seed is not None:
        spec_d["seed"] = seed
    spec = scenes.SceneSpec.from_dict(spec_d)
    images = scenes.generate_dataset(spec, count)
    manifest = scenes.write_dataset(images, spec, args.out)
    print(f"wrote {count} scenes to {args.out} (manifest: {manifest})")
    return 0


def _cmd_train(args):
    cfg_d = _load_json(args.config)
    seed = _seed_override()
    if seed is not None:
        cfg_d = _apply_seed(cfg_d, seed)
    master = int(cfg_d.get("seed", 0))
    model_d = dict(cfg_d.get("model", {}))
    model_d.setdefault("seed", master + 1)
    train_d = dict(cfg_d.get("train", {}))
    train_d.setdefault("seed", master + 2)
    model_cfg = ModelConfig.from_dict(model_d)
    train_cfg = TrainConfig(**train_d)
    dataset = scenes.load_dataset(args.data)
    pairs = [(li.image, li.mask) for li in dataset]
    params, loss_trace = train(init_model(model_cfg), pairs, train_cfg)
    save_model(params, args.model_out)
    accuracy = clean_pixel_accuracy(params, pairs)
    print(f"trained {len(loss_trace)} epochs: loss {loss_trace[0]:.4f} -> "
          f"{loss_trace[-1]:.4f}, clean pixel accuracy {accuracy:.4f}")
    print(f"model saved to {args.model_out}")
    return 0


def _cmd_attack(args):
    params = load_model(args.model)
    dataset = scenes.load_dataset(args.data)
    if args.attack == "pgd":
        config = PgdConfig(epsilon=args.epsilon, alpha=args.alpha,
                           iterations=args.iters if args.iters is not None else 300)
    else:
        config = AsmaConfig(beta=args.beta, tau=args.tau,
                            iterations=args.iters if args.iters is not None else 500)
    job = AttackJob(kind=args.attack, config=config, target_rule=args.target)

    bundle = ReportBundle(out_dir=args.out)
    os.makedirs(args.out, exist_ok=True)
    run_attack_stage(job, job.kind, params, dataset, args.out, bundle,
                     threads=args.threads)
    summary = os.path.join(args.out, f"summary_{job.kind}.json")
    with open(summary, "w", encoding="utf-8") as fh:
        json.dump([row.to_dict() for row in bundle.diagnostics], fh,
                  indent=2, sort_keys=True)
        fh.write("\n")
    for row in bundle.diagnostics:
        print(f"{row.label}: iou_vs_target {row.iou_vs_target_pct:.2f}% "
              f"pixacc_vs_target {row.pixacc_vs_target_pct:.2f}% "
              f"l2 {row.l2_norm:.4f}")
    return 0


def _cmd_report(args):
    rows = []
    for root, _, files in sorted(os.walk(args.in_dir)):
        for name in sorted(files):
            if name.startswith("summary_") and name.endswith(".json"):
                with open(os.path.join(root, name), "r", encoding="utf-8") as fh:
                    for d in json.load(fh):
                        rows.append(ReportRow(**d))
    if not rows:
        raise ValidationError(f"no attack summaries found under {args.in_dir}")
    bundle = ReportBundle(diagnostics=rows, out_dir=args.in_dir)
    csv_path, json_path = emit_report(bundle, args.in_dir)
    _print_report(rows)
    print(f"\nwrote {csv_path} and {json_path}")
    return 0


def _print_report(rows):
    widths = [max(len(r.label) for r in rows)] + [18] * 5
    header = ("label", "iou_vs_clean_pct", "iou_vs_target_pct",
              "pixacc_vs_clean_pct", "pixacc_vs_target_pct", "l2_norm")
    print("  ".join(h.ljust(w) for h, w in zip(header, widths)))
    for r in rows:
        cells = [r.label.ljust(widths[0])]
        for v, w in zip((r.iou_vs_clean_pct, r.iou_vs_target_pct,
                         r.pixacc_vs_clean_pct, r.pixacc_vs_target_pct,
                         r.l2_norm), widths[1:]):
            cells.append(f"{v:.4f}".ljust(w))
        print("  ".join(cells))


def _cmd_run(args):
    if args.config:
        cfg_d = _load_json(args.config)
    elif args.default:
        cfg_d = harness.default_experiment_config(args.out).to_dict()
    else:
        raise ValidationError("run needs --config FILE or --default")
    seed = _seed_override()
    if seed is not None:
        cfg_d = _apply_seed(cfg_d, seed)
    if args.threads is not None:
        cfg_d["threads"] = args.threads
    cfg = ExperimentConfig.from_dict(cfg_d, out_dir=args.out)
    bundle = harness.run_experiment(cfg)
    print(f"clean pixel accuracy on attacked images: "
          f"{bundle.clean_pixel_accuracy:.4f}")
    _print_report(bundle.diagnostics)
    print(f"\nartifacts under {cfg.out_dir}")
    return 0


def build_parser():
    parser = _Parser(prog="segattack",
                     description="Targeted attacks on a small segmentation net")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate synthetic scenes")
    p.add_argument("--spec", required=True, help="scene spec JSON (with count)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train the victim model")
    p.add_argument("--data", required=True)
    p.add_argument("--model-out", required=True)
    p.add_argument("--config", required=True, help="model+train config JSON")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("attack", help="attack every image in a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--attack", required=True, choices=("pgd", "asma"))
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--alpha", type=float, default=100.0)
    p.add_argument("--beta", type=float, default=3e-6)
    p.add_argument("--tau", type=float, default=1e-5)
    p.add_argument("--iters", type=int, default=None)
    p.add_argument("--target", default="next", help="next | fixed:K")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_attack)

    p = sub.add_parser("report", help="aggregate attack summaries")
    p.add_argument("--in", dest="in_dir", required=True)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("run", help="full experiment: data, train, attacks, report")
    p.add_argument("--config", help="experiment config JSON")
    p.add_argument("--default", action="store_true",
                   help="use the stock desk-scale experiment")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_run)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except StageError as exc:
        cause = exc.__cause__
        print(f"error: {exc}", file=sys.stderr)
        return 1 if isinstance(cause, ValidationError) else 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
