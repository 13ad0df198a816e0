"""Command-line entry point.

Commands: synth, train, evaluate, experiment, selfcheck. Logs go to stderr;
machine-readable results go to stdout. Exit codes: 0 ok, 1 usage or
validation failure, 2 runtime failure, 3 selfcheck failure.

Settings come from (lowest to highest precedence) built-in defaults, an INI
config file (``key = value`` under [model]/[training] sections), repeated
``--set section.key=value`` overrides, and explicit flags. Unknown keys are
rejected before any work starts.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import sys
from pathlib import Path

from .errors import IcupredError, TrainingError, ValidationError
from .ingestion import load_dataset, read_manifest
from .models import VARIANTS, ModelConfig
from .selfcheck import format_results, run_selfcheck
from .synthetic import SIGNAL_PLANS, SyntheticConfig, generate_synthetic
from .training import TrainConfig, evaluate_checkpoint, run_experiment, train
from .data import TASKS

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_SELFCHECK = 3


def _parse_int(v): return int(v)
def _parse_float(v): return float(v)
def _parse_str(v): return str(v)


def _parse_widths(v):
    return tuple(int(x) for x in str(v).replace(",", " ").split())


def _parse_seeds(v):
    return tuple(int(x) for x in str(v).replace(",", " ").split())


# (section, key) -> parser. The single source of truth for config keys.
CONFIG_KEYS = {
    ("model", "task"): _parse_str,
    ("model", "variant"): _parse_str,
    ("model", "lstm_hidden"): _parse_int,
    ("model", "conv_widths"): _parse_widths,
    ("model", "filters_per_width"): _parse_int,
    ("model", "decay_lambda"): _parse_float,
    ("model", "dropout"): _parse_float,
    ("model", "weight_decay"): _parse_float,
    ("training", "epochs"): _parse_int,
    ("training", "batch_size"): _parse_int,
    ("training", "learning_rate"): _parse_float,
    ("training", "seeds"): _parse_seeds,
    ("training", "grad_clip"): _parse_float,
    ("training", "selection_metric"): _parse_str,
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ValidationError(message)


def load_settings(config_path: str | None, set_overrides: list[str]) -> dict:
    """Merge config file and --set overrides into a typed settings dict."""
    settings: dict[tuple[str, str], object] = {}
    if config_path:
        parser = configparser.ConfigParser()
        read = parser.read(config_path)
        if not read:
            raise ValidationError(f"config file not found: {config_path}")
        for section in parser.sections():
            for key, value in parser.items(section):
                if (section, key) not in CONFIG_KEYS:
                    raise ValidationError(f"unknown config key [{section}] {key}")
                settings[(section, key)] = CONFIG_KEYS[(section, key)](value)
    for item in set_overrides or []:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ValidationError(f"--set expects section.key=value, got {item!r}")
        dotted, value = item.split("=", 1)
        section, key = dotted.split(".", 1)
        if (section, key) not in CONFIG_KEYS:
            raise ValidationError(f"unknown config key [{section}] {key}")
        settings[(section, key)] = CONFIG_KEYS[(section, key)](value)
    return settings


def build_model_config(task: str, variant: str, feature_dim: int, embedding_dim: int,
                       settings: dict) -> ModelConfig:
    overrides = {key: value for (section, key), value in settings.items()
                 if section == "model" and key not in ("task", "variant")}
    return ModelConfig.defaults(task, variant, feature_dim=feature_dim,
                                embedding_dim=embedding_dim, **overrides)


def build_train_config(settings: dict, args) -> TrainConfig:
    values = {key: value for (section, key), value in settings.items()
              if section == "training"}
    for flag, key in (("epochs", "epochs"), ("batch_size", "batch_size"),
                      ("learning_rate", "learning_rate")):
        flag_value = getattr(args, flag, None)
        if flag_value is not None:
            values[key] = flag_value
    seeds = values.pop("seeds", None)
    if getattr(args, "seeds", None):
        seeds = _parse_seeds(args.seeds)
    cfg = TrainConfig(seeds=seeds or (0, 1, 2, 3, 4), **values)
    cfg.validate()
    return cfg


def cmd_synth(args) -> int:
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise ValidationError(f"output dir {out} exists and is not empty (use --force)")
    cfg = SyntheticConfig(patients=args.patients, seed=args.seed,
                          signal_plan=args.signal, embedding_dim=args.embedding_dim)
    manifest = generate_synthetic(cfg, out)
    log.info("wrote %d episodes under %s", len(manifest.entries), out)
    print(json.dumps({"patients": len(manifest.entries), "root": str(out),
                      "signal_plan": cfg.signal_plan, "seed": cfg.seed}, sort_keys=True))
    return EXIT_OK


def cmd_train(args) -> int:
    settings = load_settings(args.config, args.set)
    task = args.task or settings.get(("model", "task"))
    variant = args.variant or settings.get(("model", "variant"))
    if not task or not variant:
        raise ValidationError("--task and --variant are required (flag or config)")
    data = load_dataset(args.data, task)
    model_cfg = build_model_config(task, variant, data.feature_dim, data.table.dim, settings)
    train_cfg = build_train_config(settings, args)
    record, _ = train(model_cfg, data, train_cfg, seed=args.seed, out_dir=args.out)
    print(json.dumps(record.to_json(), sort_keys=True))
    return EXIT_OK


def cmd_evaluate(args) -> int:
    data = load_dataset(args.data, args.task) if args.task else None
    if data is None:
        # Task comes from the checkpoint itself.
        from .models import load_checkpoint
        cfg, _ = load_checkpoint(args.checkpoint)
        data = load_dataset(args.data, cfg.task)
    metrics = evaluate_checkpoint(args.checkpoint, data, split=args.split, task=args.task)
    payload = {"task": data.task, "split": args.split}
    payload.update(metrics)
    print(json.dumps(payload, sort_keys=True))
    return EXIT_OK


def cmd_experiment(args) -> int:
    settings = load_settings(args.config, args.set)
    tasks = tuple(args.tasks.replace(",", " ").split())
    variants = tuple(args.variants.replace(",", " ").split())
    for task in tasks:
        if task not in TASKS:
            raise ValidationError(f"unknown task {task!r}")
    for variant in variants:
        if variant not in VARIANTS:
            raise ValidationError(f"unknown variant {variant!r}")
    train_cfg = build_train_config(settings, args)
    datasets = {task: load_dataset(args.data, task) for task in tasks}
    model_cfgs = {}
    for task in tasks:
        data = datasets[task]
        for variant in variants:
            model_cfgs[(task, variant)] = build_model_config(
                task, variant, data.feature_dim, data.table.dim, settings)
    result = run_experiment(datasets, variants, train_cfg, model_cfgs, out_dir=args.out)
    log.info("experiment table:\n%s", result.render_table())
    print(json.dumps(result.to_json(), sort_keys=True))
    return EXIT_OK


def cmd_selfcheck(args) -> int:
    results = run_selfcheck(quick=args.quick)
    print(format_results(results))
    return EXIT_OK if all(r.passed for r in results) else EXIT_SELFCHECK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="icupred",
                     description="Multimodal ICU outcome prediction from vitals and notes")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic benchmark-format dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--patients", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--signal", choices=SIGNAL_PLANS, default="mixed")
    p.add_argument("--embedding-dim", type=int, default=16)
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one model and write checkpoint + record")
    p.add_argument("--data", required=True)
    p.add_argument("--task", choices=TASKS)
    p.add_argument("--variant", choices=VARIANTS)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="print metrics JSON for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--task", choices=TASKS)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="train task x variant x seed grid and tabulate")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tasks", default="ihm,decomp,los")
    p.add_argument("--variants", default="baseline,text_only,multimodal_avgwe,multimodal_cnn")
    p.add_argument("--seeds")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--learning-rate", dest="learning_rate", type=float)
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE")
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("selfcheck", help="run gradient checks and metric oracles")
    p.add_argument("--quick", action="store_true", help="reduced sizes, under 10 seconds")
    p.set_defaults(func=cmd_selfcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(stream=sys.stderr,
                            level=logging.DEBUG if args.verbose else logging.INFO,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (IcupredError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
