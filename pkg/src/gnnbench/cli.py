"""Command line entry points: generate corpora, train models, build reports.

Every command is driven by one JSON config file (see ``gnnbench.config``) and
is deterministic given that file.  Exit codes: 0 success (a diverged run is a
result, not a failure), 1 usage or configuration error, 2 data error, 3
internal numeric error.
"""

import argparse
import dataclasses
import json
import sys
from pathlib import Path

from .config import config_hash, load_config, resolve_data_path
from .datasets import GENERATORS, load_graphs, manifest_dict, save_bundle
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DimensionError,
    ValidationError,
)
from .models import ModelSpec, solve_budget
from .report import write_report
from .spectral import PESpec
from .training import RunConfig, feature_info, fit, task_for


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # raise instead of exiting so main() owns the exit code (1, not 2)
    def error(self, message):
        raise _UsageError(f"{self.prog}: {message}")


def _build_parser():
    parser = _Parser(prog="gnnbench",
                     description="Benchmark graph networks on synthetic tasks.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="write a graph corpus to disk")
    gen.add_argument("--config", required=True, help="JSON config file")
    gen.add_argument("--out", required=True, help="output directory")
    gen.add_argument("--force", action="store_true",
                     help="overwrite a non-empty output directory")
    gen.set_defaults(fn=cmd_generate)

    train = sub.add_parser("train", help="train one model over several seeds")
    train.add_argument("--config", required=True, help="JSON config file")
    train.add_argument("--out", required=True, help="run output directory")
    train.add_argument("--seeds", type=int, default=None,
                       help="override the number of seeds (uses seeds 0..N-1)")
    train.add_argument("--jobs", type=int, default=1,
                       help="parallel seed runs (default 1)")
    train.add_argument("--resume", action="store_true",
                       help="continue from per-seed checkpoints in --out")
    train.set_defaults(fn=cmd_train)

    rep = sub.add_parser("report", help="aggregate finished runs into a table")
    rep.add_argument("--runs", nargs="+", required=True,
                     help="run directories written by train")
    rep.add_argument("--format", choices=("csv", "markdown"), default="csv")
    rep.add_argument("--out", default=".", help="directory for table + figures")
    rep.add_argument("--mixed", action="store_true",
                     help="allow runs whose dataset hashes disagree")
    rep.add_argument("--no-figures", action="store_true",
                     help="skip rendering figures")
    rep.set_defaults(fn=cmd_report)
    return parser


def _generator_config(cfg):
    """Instantiate the generator's config dataclass from dataset.params."""
    name = cfg.dataset["generator"]
    cfg_cls, gen = GENERATORS[name]
    valid = [f.name for f in dataclasses.fields(cfg_cls)]
    params = {}
    for key, value in cfg.dataset["params"].items():
        if key not in valid:
            raise ConfigError(
                f"dataset.params.{key}: unknown parameter for generator "
                f"{name!r} (valid: {', '.join(valid)})")
        params[key] = tuple(value) if isinstance(value, list) else value
    return gen, cfg_cls(**params)


def _obtain_bundle(cfg):
    if cfg.dataset["generator"] is not None:
        gen, gen_cfg = _generator_config(cfg)
        return gen(gen_cfg, seed=cfg.dataset["seed"])
    return load_graphs(resolve_data_path(cfg.dataset["path"]))


def dataset_hash(bundle):
    """Fingerprint of the corpus identity (same for generated and reloaded)."""
    return config_hash(manifest_dict(bundle))


def _stamp(path, extra):
    """Add fields to an existing JSON file, keeping the canonical layout."""
    path = Path(path)
    doc = json.loads(path.read_text())
    doc.update(extra)
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def cmd_generate(args):
    cfg = load_config(args.config, check_paths=False)
    if cfg.dataset["generator"] is None:
        raise ConfigError(
            f"{args.config}: dataset.generator is required to generate "
            f"(got dataset.path)")
    bundle = _obtain_bundle(cfg)
    save_bundle(bundle, args.out, force=args.force)
    _stamp(Path(args.out) / "manifest.json", {"config_hash": cfg.hash})
    print(f"wrote {len(bundle)} graphs, {len(bundle.splits)} folds to {args.out}")
    return 0


def _model_spec(cfg, task, features):
    model = cfg.model
    pe_doc = model["pe"]
    spec = ModelSpec(
        kind=model["kind"],
        task=task,
        d=model["d"],
        n_layers=model["n_layers"],
        variant=model["variant"],
        heads=model["heads"],
        kernels=model["kernels"],
        aggregator=model["aggregator"],
        use_bn=model["use_bn"],
        use_residual=model["use_residual"],
        use_graphnorm=model["use_graphnorm"],
        pe_dim=pe_doc["k"] if pe_doc else 0,
    )
    if model["param_budget"] is not None:
        spec = spec.with_width(solve_budget(spec, features, model["param_budget"]))
    pe = None
    if pe_doc:
        pe = PESpec(kind=pe_doc["kind"], k=pe_doc["k"],
                    sign_mode=pe_doc["sign_mode"], order_mode=pe_doc["order_mode"])
    return spec, pe


def cmd_train(args):
    cfg = load_config(args.config)
    bundle = _obtain_bundle(cfg)
    task = task_for(bundle, readout=cfg.model["readout"])
    features = feature_info(bundle)
    spec, pe = _model_spec(cfg, task, features)

    seeds = cfg.train["seeds"]
    if args.seeds is not None:
        if args.seeds < 1:
            raise _UsageError("--seeds must be >= 1")
        seeds = tuple(range(args.seeds))
    train = cfg.train
    run = RunConfig(
        model=spec,
        seeds=seeds,
        lr=train["lr"],
        lr_factor=train["lr_factor"],
        patience=train["patience"],
        min_lr=train["min_lr"],
        max_epochs=train["max_epochs"],
        batch_size=train["batch_size"],
        virtual_batch=train["virtual_batch"],
        loss=train["loss"],
        pe=pe,
        max_wallclock=train["max_wallclock"],
    )

    result = fit(bundle, run, fold=train["fold"], out_dir=args.out,
                 jobs=args.jobs, resume=args.resume)
    summary = result.summary

    out = Path(args.out)
    run_doc = {
        "name": cfg.name,
        "config_hash": cfg.hash,
        "config": {"name": cfg.name, "dataset": cfg.dataset,
                   "model": cfg.model, "train": cfg.train},
        "dataset": {"name": bundle.name, "task": bundle.task,
                    "n_graphs": len(bundle), "hash": dataset_hash(bundle)},
        "model": {"kind": spec.kind, "d": spec.d, "n_layers": spec.n_layers,
                  "variant": spec.variant},
        "n_params": summary["n_params"],
    }
    with open(out / "run.json", "w") as fh:
        json.dump(run_doc, fh, sort_keys=True, indent=2)
        fh.write("\n")
    _stamp(out / "summary.json", {"config_hash": cfg.hash})

    status = "Diverged" if summary["status"] == "diverged" else "ok"
    print(f"run {cfg.name}: status {status} "
          f"({summary['n_seeds']} seeds, {summary['n_params']} params)")
    for metric, block in summary.get("test", {}).items():
        print(f"  test {metric}: {block['mean']:.4f}±{block['std']:.4f}")
    return 0


def cmd_report(args):
    result = write_report(args.runs, args.out, fmt=args.format,
                          mixed=args.mixed, figures=not args.no_figures)
    for warning in result["warnings"]:
        print(f"warning: {warning}", file=sys.stderr)
    sys.stdout.write(result["text"])
    print(f"wrote {result['table']}"
          + (f" and {len(result['figures'])} figures" if result["figures"] else ""),
          file=sys.stderr)
    return 0


def main(argv=None):
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except SystemExit as exc:  # argparse --help
        return int(exc.code or 0)
    except (_UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (DataError, ValidationError, DimensionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ContractError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
