"""Command-line entry point: generate, train, eval, report.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import evaluate as ev
from .plots import scatter_instance
from .scm import CORPUS_PRESETS, CorpusConfig, generate_corpus
from .storage import FormatError, file_sha256, read_corpus, split_path, write_corpus
from .train import TRAIN_PRESETS, TrainConfig, TrainingDiverged, desk_scale, load_checkpoint, save_checkpoint, train

log = logging.getLogger("intervene")

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

CORPUS_FILE = "corpus.ivc"
MANIFEST_FILE = "manifest.json"


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


def _load_json(path: str | None) -> dict:
    if not path:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None


def _out_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    return out


def write_manifest(out: Path, args: argparse.Namespace, seed: int | None, inputs: dict, outputs: list[Path]) -> Path:
    manifest = {
        "command": args.command,
        "config": getattr(args, "config", None),
        "seed": seed,
        "inputs": {name: {"path": str(p), "sha256": file_sha256(p)} for name, p in inputs.items()},
        "outputs": {p.name: file_sha256(p) for p in sorted(outputs)},
    }
    path = out / MANIFEST_FILE
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return path


def cmd_generate(args) -> int:
    if args.preset:
        if args.preset not in CORPUS_PRESETS:
            raise ConfigError(f"unknown corpus preset {args.preset!r}; choose from {sorted(CORPUS_PRESETS)}")
        base = CORPUS_PRESETS[args.preset].__dict__.copy()
    else:
        base = {}
    base.update(_load_json(args.config))
    if args.count is not None:
        base["count"] = args.count
        if base.get("n_train") is not None and base["n_train"] > args.count:
            base["n_train"] = None
    if "intervention_values" in base:
        base["intervention_values"] = tuple(base["intervention_values"])
    try:
        cfg = CorpusConfig(**base)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid corpus config: {exc}") from None
    if cfg.count == 0:
        raise ConfigError("refusing to write an empty corpus (count=0)")
    out = _out_dir(args.out)
    corpus = generate_corpus(cfg, args.seed)
    path = write_corpus(corpus, out / CORPUS_FILE)
    write_manifest(out, args, args.seed, {}, [path, split_path(path)])
    print(f"wrote {len(corpus.instances)} instances ({len(corpus.train_ids)} train / {len(corpus.test_ids)} test) to {path}")
    return 0


def _read_corpus(path: str):
    try:
        return read_corpus(path)
    except FileNotFoundError:
        raise DataError(f"corpus not found: {path}") from None
    except FormatError as exc:
        raise DataError(str(exc)) from None


def cmd_train(args) -> int:
    corpus = _read_corpus(args.corpus)
    d = corpus.config.d
    if args.preset:
        if args.preset not in TRAIN_PRESETS:
            raise ConfigError(f"unknown train preset {args.preset!r}; choose from {sorted(TRAIN_PRESETS)}")
        cfg, preset_d = TRAIN_PRESETS[args.preset]
        if preset_d != d:
            raise DataError(f"preset {args.preset} expects d={preset_d}, corpus has d={d}")
    else:
        cfg = TrainConfig()
    try:
        cfg = replace(cfg, **_load_json(args.config))
        if args.desk_scale:
            cfg = desk_scale(cfg, d)
        overrides = {
            "seed": args.seed,
            "learning_rate": args.lr,
            "epochs": args.epochs,
            "batch_size": args.batch_size,
        }
        cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid train config: {exc}") from None
    instances = corpus.split("train")
    if not instances:
        raise DataError("training split is empty")
    out = _out_dir(args.out)
    log_path = out / "train_log.csv"
    (out / "train_config.json").write_text(json.dumps(cfg.to_dict(), indent=1, sort_keys=True) + "\n")

    def progress(row):
        if row["epoch"] == 1 or row["epoch"] % max(1, cfg.epochs // 20) == 0:
            log.info("epoch %d total %.4f rec %.4f kl %.4f", row["epoch"], row["total"], row["reconstruction"], row["kl"])

    try:
        result = train(
            instances,
            cfg,
            num_values=len(corpus.config.intervention_values),
            log_path=log_path,
            checkpoint_dir=out,
            on_epoch=progress,
        )
    except TrainingDiverged as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    final = save_checkpoint(
        out / "final.ivckpt",
        result.model,
        {"train_config": cfg.to_dict(), "seed": cfg.seed, "epoch": cfg.epochs, "intervention_values": list(corpus.config.intervention_values)},
    )
    outputs = [log_path, final, out / "train_config.json", *result.checkpoints]
    write_manifest(out, args, cfg.seed, {"corpus": Path(args.corpus)}, outputs)
    print(f"trained {cfg.epochs} epochs on {len(instances)} instances; checkpoint {final}")
    return 0


def cmd_eval(args) -> int:
    corpus = _read_corpus(args.corpus)
    try:
        model, _ = load_checkpoint(args.checkpoint)
    except FileNotFoundError:
        raise DataError(f"checkpoint not found: {args.checkpoint}") from None
    except (FormatError, KeyError, ValueError) as exc:
        raise DataError(f"bad checkpoint {args.checkpoint}: {exc}") from None
    if model.cfg.d != corpus.config.d or model.cfg.num_values != len(corpus.config.intervention_values):
        raise DataError(
            f"checkpoint expects d={model.cfg.d}, |I|={model.cfg.num_values}; "
            f"corpus has d={corpus.config.d}, |I|={len(corpus.config.intervention_values)}"
        )
    instances = corpus.split(args.split)
    if args.limit is not None:
        instances = instances[: args.limit]
    if not instances:
        raise DataError(f"no instances in split {args.split!r}; refusing to aggregate nothing")
    out = _out_dir(args.out)
    result = ev.evaluate(model, instances, corpus.config.intervention_values, n_perm=args.perm, seed=args.seed, keep_samples=True)
    csv_path, json_path = ev.write_rows(result.rows, out)
    agg = result.aggregate()
    (out / "aggregate.json").write_text(json.dumps(agg, indent=1, sort_keys=True) + "\n")
    table = ev.markdown_table(agg, f"{len(instances)} instances, d={corpus.config.d}, {corpus.config.family} noise")
    (out / "aggregate.md").write_text(table)
    samples = ev.save_samples(result.samples, out / "samples.npz")
    outputs = [csv_path, json_path, out / "aggregate.json", out / "aggregate.md", samples]
    write_manifest(out, args, args.seed, {"corpus": Path(args.corpus), "checkpoint": Path(args.checkpoint)}, outputs)
    print(table)
    return 0


def cmd_report(args) -> int:
    src = Path(args.eval)
    needed = [src / "metrics.json", src / "samples.npz"]
    missing = [str(p) for p in needed if not p.exists()]
    if missing:
        raise DataError(f"missing eval artifacts in {src}: {', '.join(missing)}")
    out = _out_dir(args.out)
    rows = ev.read_rows(src / "metrics.json")
    samples = ev.load_samples(src / "samples.npz")
    outputs = []
    for sid in sorted(samples)[: args.instances]:
        outputs += scatter_instance(samples[sid], sid, out / f"scatter-{sid}")
    lines = ["# Evaluation report", "", ev.markdown_table(ev.aggregate(rows), "Mean over all (instance, intervention) pairs")]
    lines += ["", "### Per instance", "", "| instance | intervention | method | MMD | WSD | ERG | P |", "|---|---|---|---|---|---|---|"]
    for r in rows:
        lines.append(
            f"| {r['instance']} | {r['intervention']} | {r['method']} | {r['mmd']:.3f} | {r['wsd']:.3f} | {r['erg']:.3f} | {r['p']:.3f} |"
        )
    tables = out / "tables.md"
    tables.write_text("\n".join(lines) + "\n")
    outputs.append(tables)
    write_manifest(out, args, None, {"metrics": src / "metrics.json", "samples": src / "samples.npz"}, outputs)
    print(f"wrote {len(outputs)} files to {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="intervene", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate a corpus of linear SCM instances")
    g.add_argument("--preset", choices=sorted(CORPUS_PRESETS))
    g.add_argument("--config", help="JSON file with corpus config fields")
    g.add_argument("--count", type=int)
    g.add_argument("--seed", type=int, default=42)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train the model on a corpus's training split")
    t.add_argument("--corpus", required=True)
    t.add_argument("--preset", choices=sorted(TRAIN_PRESETS))
    t.add_argument("--config", help="JSON file with train config fields")
    t.add_argument("--desk-scale", action="store_true")
    t.add_argument("--seed", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score model and baseline on held-out instances")
    e.add_argument("--corpus", required=True)
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split", default="test", choices=("train", "test"))
    e.add_argument("--limit", type=int)
    e.add_argument("--perm", type=int, default=100)
    e.add_argument("--seed", type=int, default=0)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("report", help="scatter plots and markdown tables from an eval directory")
    r.add_argument("--eval", required=True)
    r.add_argument("--instances", type=int, default=6, help="number of instances to plot")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
