"""Command-line interface.

Subcommands: gen-data, train, ood-eval, ablate, export-features.
Exit codes: 0 success, 2 config error, 3 training error, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from . import data as data_mod
from .config import RunConfig
from .errors import ConfigError, TrainingError
from .geometry import SAMPLERS
from .harness import build_datasets, evaluate_ood, load_model, run_experiment

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_TRAINING = 3
EXIT_IO = 4


def _load_config(args) -> RunConfig:
    config = RunConfig.from_json(args.config) if args.config else RunConfig()
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "disable_vos", False):
        overrides["disable_vos"] = True
    if getattr(args, "disable_cl", False):
        overrides["disable_cl"] = True
    if getattr(args, "sampler", None):
        overrides["sampler"] = args.sampler
    if getattr(args, "tau_rej", None) is not None:
        overrides["tau_rej"] = args.tau_rej
        overrides["tau_auto"] = False
    if getattr(args, "tau_auto", False):
        overrides["tau_auto"] = True
    return config.replace(**overrides) if overrides else config


def _cmd_gen_data(args) -> int:
    config = _load_config(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train, test, ood_far, ood_near = build_datasets(config)
    data_mod.write_dataset_csv(train, out / "train.csv")
    data_mod.write_dataset_csv(test, out / "test.csv")
    data_mod.write_features_csv(ood_far, out / "ood_far.csv")
    data_mod.write_features_csv(ood_near, out / "ood_near.csv")
    print(f"wrote train/test/ood_far/ood_near CSVs to {out}")
    return EXIT_OK


def _cmd_train(args) -> int:
    config = _load_config(args)
    report = run_experiment(config, out_dir=args.out_dir)
    summary = report.summary
    print(f"final accuracy {summary['final_test_accuracy']:.4f} "
          f"(best {summary['best_test_accuracy']:.4f}); "
          f"far-OOD auroc {summary['ood']['far']['auroc']:.4f}")
    if args.out_dir:
        print(f"report written to {Path(args.out_dir) / 'report.json'}")
    return EXIT_OK


def _cmd_ood_eval(args) -> int:
    run_dir = Path(args.run_dir)
    config = RunConfig.from_json(run_dir / "config.json")
    model_paths = sorted((run_dir / "models").glob("net*.npz"))
    if not model_paths:
        raise FileNotFoundError(f"no saved models under {run_dir / 'models'}")
    nets = [load_model(p) for p in model_paths]
    if args.id_csv:
        id_inputs = data_mod.read_dataset_csv(args.id_csv).features
    else:
        _, test_set, _, _ = build_datasets(config)
        id_inputs = test_set.features
    results = {}
    for ood_csv in args.ood_csv:
        ood_inputs = data_mod.read_features_csv(ood_csv)
        results[Path(ood_csv).stem] = evaluate_ood(nets, id_inputs, ood_inputs,
                                                   config.energy_temperature)
    text = json.dumps(results, indent=2, sort_keys=True)
    print(text)
    if args.out:
        Path(args.out).write_text(text + "\n")
    return EXIT_OK


def _ablate_variants(grid: str, config: RunConfig):
    if grid == "vos":
        return [("vos_on", config.replace(disable_vos=False)),
                ("vos_off", config.replace(disable_vos=True))]
    if grid == "sampler":
        return [(s, config.replace(sampler=s)) for s in SAMPLERS]
    if grid == "tau":
        return [(f"tau_{s:g}x", config.replace(tau_auto=True, tau_auto_scale=s))
                for s in (0.5, 1.0, 1.5)]
    raise ConfigError(f"unknown ablation grid {grid!r}")


def _cmd_ablate(args) -> int:
    config = _load_config(args)
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    if not seeds:
        raise ConfigError("need at least one seed")
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for name, variant in _ablate_variants(args.grid, config):
        for seed in seeds:
            run_cfg = variant.replace(seed=seed)
            run_dir = out / f"{name}_seed{seed}" if args.keep_runs else None
            report = run_experiment(run_cfg, out_dir=run_dir)
            s = report.summary
            rows.append([name, seed, s["final_test_accuracy"], s["best_test_accuracy"],
                         s["final_selection_f1"], s["ood"]["far"]["auroc"],
                         s["ood"]["far"]["fpr95"], s["ood"]["near"]["auroc"],
                         s["ood"]["near"]["fpr95"]])
            print(f"{name} seed {seed}: final acc {s['final_test_accuracy']:.4f}")
    with open(out / "ablation.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["variant", "seed", "final_accuracy", "best_accuracy",
                         "final_selection_f1", "far_auroc", "far_fpr95",
                         "near_auroc", "near_fpr95"])
        writer.writerows(rows)
    print(f"comparison written to {out / 'ablation.csv'}")
    return EXIT_OK


def _cmd_export_features(args) -> int:
    config = _load_config(args).replace(export_features=True)
    run_experiment(config, out_dir=args.out_dir)
    print(f"per-epoch feature CSVs under {Path(args.out_dir) / 'features'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="noisylab",
                                     description="Noisy-label training laboratory")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", help="JSON config file (defaults apply)")
        p.add_argument("--seed", type=int, help="override the config seed")
        if out_required:
            p.add_argument("--out-dir", required=True, help="output directory")
        else:
            p.add_argument("--out-dir", help="output directory")

    p = sub.add_parser("gen-data", help="write dataset CSVs")
    common(p)
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="run a full experiment")
    common(p, out_required=False)
    p.add_argument("--disable-vos", action="store_true",
                   help="drop the virtual-outlier energy term")
    p.add_argument("--disable-cl", action="store_true",
                   help="drop the contrastive term")
    p.add_argument("--sampler", choices=SAMPLERS, help="candidate sampling strategy")
    p.add_argument("--tau-rej", type=float, help="fixed rejection radius")
    p.add_argument("--tau-auto", action="store_true",
                   help="rescale the rejection radius from centroid distances")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("ood-eval", help="score a saved run against OOD files")
    p.add_argument("--run-dir", required=True, help="directory written by train")
    p.add_argument("--ood-csv", required=True, nargs="+", help="OOD feature CSVs")
    p.add_argument("--id-csv", help="ID dataset CSV (defaults to the run's test split)")
    p.add_argument("--out", help="write the metrics JSON here too")
    p.set_defaults(func=_cmd_ood_eval)

    p = sub.add_parser("ablate", help="run an ablation grid and emit a comparison CSV")
    common(p)
    p.add_argument("--grid", choices=("vos", "sampler", "tau"), required=True)
    p.add_argument("--seeds", default="1,2,3,4,5", help="comma-separated seeds")
    p.add_argument("--keep-runs", action="store_true",
                   help="keep every run's full output directory")
    p.set_defaults(func=_cmd_ablate)

    p = sub.add_parser("export-features", help="train while dumping per-epoch features")
    common(p)
    p.add_argument("--disable-vos", action="store_true")
    p.add_argument("--disable-cl", action="store_true")
    p.add_argument("--sampler", choices=SAMPLERS)
    p.set_defaults(func=_cmd_export_features)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingError as exc:
        context = ""
        if exc.epoch is not None:
            context = f" (epoch {exc.epoch}, batch {exc.batch})"
        print(f"training error: {exc}{context}", file=sys.stderr)
        return EXIT_TRAINING
    except (OSError, FileNotFoundError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
