"""Command-line interface: synth, train, eval, dump-attn, gradcheck, compare.

Exit status is 0 on success, 1 on a runtime failure (including a failed
gradient check) and 2 on a usage or validation error.
"""

import argparse
import json
import logging
import sys
import time
from dataclasses import fields
from pathlib import Path

from . import gradcheck
from .ablations import describe_variant
from .checkpoint import load_checkpoint, save_checkpoint
from .data import read_dataset, synthesize_dataset, write_dataset, write_manifest
from .errors import ConfigurationError, DataError, EvaluationError
from .model import VARIANTS, Husformer, ModalitySpec, ModelConfig
from .training import TrainConfig, compare_runs, cross_validate, evaluate

log = logging.getLogger("husformer")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2

MODEL_KEYS = {
    "hidden_dim", "heads", "cm_layers", "sa_layers", "d_k", "d_v", "ffn_dim",
    "attn_dropout", "output_dropout", "positional_encoding", "ln_eps", "kernel_sizes",
}
TRAIN_KEYS = {f.name for f in fields(TrainConfig)}
DUMP_KEYS = {"indices", "fold"}
TOP_KEYS = {"dataset", "output_dir", "variant", "model", "train", "dump"}
REQUIRED_KEYS = {"dataset", "output_dir"}


class UsageError(Exception):
    """Bad flags or config; maps to exit status 2."""


# -- run configs ------------------------------------------------------------------


def _reject_unknown(section, given, allowed):
    unknown = set(given) - allowed
    if unknown:
        raise UsageError(f"unknown key(s) in {section}: {', '.join(sorted(unknown))}")


def load_run_config(path, variant=None):
    """Parse and validate a run config; returns a dict of resolved pieces.

    Relative paths inside the file are taken relative to the file itself.
    The dataset header is read here so shape problems surface before training.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise UsageError(f"cannot read config: {exc}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise UsageError(f"{path}: top level must be an object")
    _reject_unknown("config", raw, TOP_KEYS)
    missing = REQUIRED_KEYS - set(raw)
    if missing:
        raise UsageError(f"missing required key(s): {', '.join(sorted(missing))}")
    model_raw = dict(raw.get("model", {}))
    train_raw = dict(raw.get("train", {}))
    dump_raw = dict(raw.get("dump", {}))
    _reject_unknown("model", model_raw, MODEL_KEYS)
    _reject_unknown("train", train_raw, TRAIN_KEYS)
    _reject_unknown("dump", dump_raw, DUMP_KEYS)

    base = path.parent
    dataset_path = base / raw["dataset"]
    output_dir = base / raw["output_dir"]
    train_cfg = TrainConfig(**train_raw)
    dataset = read_dataset(dataset_path)

    kernel_sizes = model_raw.pop("kernel_sizes", 3)
    n = len(dataset.modalities)
    if isinstance(kernel_sizes, int):
        kernel_sizes = [kernel_sizes] * n
    if len(kernel_sizes) != n:
        raise UsageError(f"kernel_sizes has {len(kernel_sizes)} entries for {n} modalities")
    specs = [ModalitySpec(m.name, m.channels, m.input_dim, k)
             for m, k in zip(dataset.modalities, kernel_sizes)]
    model_cfg = ModelConfig(
        specs, dataset.num_classes, variant=variant or raw.get("variant", "husformer"), **model_raw
    )

    indices = [int(i) for i in dump_raw.get("indices", [])]
    _check_indices(indices, len(dataset))
    k = train_cfg.k_folds
    if k > 1 and len(dataset) < k:
        raise UsageError(f"cannot split {len(dataset)} samples into {k} folds")
    fold = int(dump_raw.get("fold", 0))
    if not 0 <= fold < max(k, 1):
        raise UsageError(f"dump.fold {fold} out of range for {k} fold(s)")
    return {
        "dataset": dataset,
        "dataset_path": dataset_path,
        "output_dir": output_dir,
        "model": model_cfg,
        "train": train_cfg,
        "dump_indices": indices,
        "dump_fold": fold,
    }


def _check_indices(indices, n):
    bad = [i for i in indices if not 0 <= i < n]
    if bad:
        raise UsageError(f"sample index {bad[0]} out of range for {n} samples")


def _parse_indices(text):
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--indices must be comma-separated integers, got {text!r}") from None


def _write_json(path, obj):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_attention_dumps(model, dataset, indices, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    batch = dataset.batch(indices)
    result = model.forward(batch.inputs, dump=True)
    written = []
    for i, label, dump in zip(indices, result.labels, result.dumps):
        doc = dump.to_json_dict()
        doc.update(sample=int(i), label=int(dataset.labels[i]), predicted=int(label))
        target = out_dir / f"sample_{i:05d}.json"
        _write_json(target, doc)
        written.append(target)
    return written


# -- commands ---------------------------------------------------------------------


def cmd_synth(args):
    if not 0.0 <= args.coupling <= 1.0:
        raise UsageError(f"--coupling must lie in [0, 1], got {args.coupling}")
    for flag, value, low in (("--modalities", args.modalities, 1), ("--samples", args.samples, 1),
                             ("--classes", args.classes, 2)):
        if value < low:
            raise UsageError(f"{flag} must be >= {low}, got {value}")
    if args.samples < args.classes:
        raise UsageError(f"--samples ({args.samples}) must be >= --classes ({args.classes})")
    if args.noise < 0:
        raise UsageError(f"--noise must be >= 0, got {args.noise}")
    ds = synthesize_dataset(args.modalities, n_samples=args.samples, num_classes=args.classes,
                            coupling=args.coupling, seed=args.seed, noise=args.noise)
    write_dataset(ds, args.output)
    write_manifest(args.output, modalities=[list(m) for m in ds.modalities], samples=args.samples,
                   classes=args.classes, coupling=args.coupling, seed=args.seed, noise=args.noise)
    print(f"wrote {args.output}: N={len(ds)} n={args.modalities} c={args.classes} "
          f"coupling={args.coupling} seed={args.seed}")
    return EXIT_OK


def cmd_train(args):
    run = load_run_config(args.config, args.variant)
    model_cfg, train_cfg, dataset = run["model"], run["train"], run["dataset"]
    out = run["output_dir"]
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    report = cross_validate(dataset, model_cfg, train_cfg, jobs=args.jobs)
    elapsed = time.perf_counter() - start
    for f in report.folds:
        model = Husformer(model_cfg)
        model.load_state(f.state)
        save_checkpoint(model, out / f"fold_{f.fold:02d}.ckpt",
                        meta={"fold": f.fold, "seed": f.seed, "test_indices": f.test_indices})
    doc = report.to_dict()
    doc["model"] = model_cfg.to_dict()
    doc["train"] = train_cfg.to_dict()
    doc["dataset"] = str(run["dataset_path"])
    _write_json(out / "report.json", doc)
    if run["dump_indices"]:
        fold = report.folds[run["dump_fold"]]
        model = Husformer(model_cfg)
        model.load_state(fold.state)
        write_attention_dumps(model, dataset, run["dump_indices"], out / "attention")
    log.info("elapsed %.1f s", elapsed)
    print(f"{report.variant}: acc {report.acc_mean:.4f} +- {report.acc_std:.4f}, "
          f"f1 {report.f1_mean:.4f} +- {report.f1_std:.4f} over {len(report.folds)} fold(s)")
    return EXIT_OK


def _load_pair(args):
    model, meta = load_checkpoint(args.checkpoint)
    dataset = read_dataset(args.dataset)
    return model, meta, dataset


def cmd_eval(args):
    model, meta, dataset = _load_pair(args)
    if args.indices is not None:
        indices = _parse_indices(args.indices)
        _check_indices(indices, len(dataset))
        dataset = dataset.subset(indices)
    metrics = evaluate(model, dataset)
    metrics["variant"] = model.cfg.variant
    text = json.dumps(metrics, indent=2, sort_keys=True) + "\n"
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_dump_attn(args):
    model, _, dataset = _load_pair(args)
    indices = _parse_indices(args.indices)
    if not indices:
        raise UsageError("--indices is empty")
    _check_indices(indices, len(dataset))
    for path in write_attention_dumps(model, dataset, indices, args.output):
        print(path)
    return EXIT_OK


def _gradcheck_configs(args):
    variants = VARIANTS if args.variant == "all" else (args.variant,)
    if args.config is None:
        return [gradcheck.tiny_config(v) for v in variants]
    try:
        raw = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot load gradcheck config: {exc}") from None
    raw.pop("variant", None)
    return [ModelConfig(**raw, variant=v) for v in variants]


def cmd_gradcheck(args):
    configs = _gradcheck_configs(args)
    for cfg in configs:
        n = describe_variant(cfg).parameters
        if n > gradcheck.PARAMETER_CAP:
            raise UsageError(f"{cfg.variant}: {n} parameters exceed the gradcheck cap "
                             f"of {gradcheck.PARAMETER_CAP}")
    failed = False
    for cfg in configs:
        start = time.perf_counter()
        err, n = gradcheck.check_model(cfg, seed=args.seed)
        ok = err < gradcheck.TOLERANCE
        failed |= not ok
        print(f"{cfg.variant}: max relative error {err:.3e} over {n} parameters "
              f"({time.perf_counter() - start:.1f} s) {'PASS' if ok else 'FAIL'}")
    return EXIT_FAILURE if failed else EXIT_OK


def cmd_compare(args):
    reports = []
    for p in (args.report_a, args.report_b):
        try:
            reports.append(json.loads(Path(p).read_text()))
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot load report {p}: {exc}") from None
    print(json.dumps(compare_runs(*reports), indent=2, sort_keys=True))
    return EXIT_OK


# -- entry point ------------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="husformer", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic HSF1 dataset")
    p.add_argument("--modalities", type=int, default=3)
    p.add_argument("--samples", type=int, default=2000)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--coupling", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=1.0)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", parents=[common], help="cross-validate a run config")
    p.add_argument("config")
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="score a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--indices", help="comma-separated sample indices (default: all)")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("dump-attn", parents=[common], help="export attention matrices per sample")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--indices", required=True, help="comma-separated sample indices")
    p.add_argument("-o", "--output", required=True, help="output directory")
    p.set_defaults(func=cmd_dump_attn)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of the full loss")
    p.add_argument("--config", help="model config JSON (default: built-in tiny config)")
    p.add_argument("--variant", choices=VARIANTS + ("all",), default="all")
    p.add_argument("--seed", type=int, default=gradcheck.DEFAULT_SEED)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("compare", parents=[common], help="Welch t-test between two train reports")
    p.add_argument("report_a")
    p.add_argument("report_b")
    p.set_defaults(func=cmd_compare)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        parser.error(f"--jobs must be >= 1, got {args.jobs}")
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigurationError, DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (EvaluationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
