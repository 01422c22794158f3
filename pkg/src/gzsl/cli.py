"""Command line: ``gzsl {train,eval,ausuc,synth,gradcheck}``.

Exit codes: 0 success, 1 usage or configuration error, 2 data or integrity
error, 3 numeric failure (divergence, failed gradient check).
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
import typing
from pathlib import Path

import jsonschema
import numpy as np

from .autodiff import CheckpointError, NonFiniteError
from .cada import CadaConfig, TrainingDivergence
from .checks import run_checks
from .cycle import CycleConfig
from .data import Dataset, DatasetError, SynthSpec, load_dataset, save_dataset, synth_benchmark
from .evaluation import default_grid, full_report
from .gate import GateConfig
from .pipeline import HeadConfig, ManifestError, load_pipeline, pipeline_scores, save_pipeline, train_pipeline

log = logging.getLogger("gzsl")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
LOG_LEVELS = {"error": logging.ERROR, "warning": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
FAMILIES = {"cada": CadaConfig, "cycle": CycleConfig}
EFFECTIVE_CONFIG = "effective_config.json"


class UsageError(Exception):
    pass


# ------------------------------------------------------------------ schema

_JSON_TYPES = {int: "integer", float: "number", bool: "boolean", str: "string"}


def _field_schema(tp) -> dict:
    if dataclasses.is_dataclass(tp):
        return dataclass_schema(tp)
    args = typing.get_args(tp)
    if args and type(None) in args:
        inner = [a for a in args if a is not type(None)]
        return {"anyOf": [_field_schema(inner[0]), {"type": "null"}]}
    return {"type": _JSON_TYPES[tp]}


def dataclass_schema(cls) -> dict:
    """Strict object schema for a flat config dataclass: known keys, JSON types, no extras."""
    hints = typing.get_type_hints(cls)
    return {
        "type": "object",
        "properties": {f.name: _field_schema(hints[f.name]) for f in dataclasses.fields(cls)},
        "additionalProperties": False,
    }


def run_config_schema(family: str | None = None) -> dict:
    latent = dataclass_schema(FAMILIES[family]) if family else {"type": "object"}
    return {
        "type": "object",
        "properties": {
            "family": {"enum": list(FAMILIES)},
            "seed": {"type": "integer", "minimum": 0},
            "mode": {"enum": ["gzsl_with_dc", "gzsl_plain", "zsl"]},
            "dataset": {"type": "string"},
            "synth": dataclass_schema(SynthSpec),
            "latent": latent,
            "head": dataclass_schema(HeadConfig),
            "gate": dataclass_schema(GateConfig),
        },
        "required": ["family", "seed"],
        "oneOf": [{"required": ["dataset"]}, {"required": ["synth"]}],
        "additionalProperties": False,
    }


def _check(instance, schema, what: str) -> None:
    try:
        jsonschema.validate(instance, schema)
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "<root>"
        if exc.validator == "oneOf" and not exc.absolute_path:
            raise UsageError(f"{what}: give exactly one of 'dataset' or 'synth'") from None
        raise UsageError(f"{what}: field '{where}': {exc.message}") from None


def _build(cls, d: dict, what: str):
    try:
        return cls.from_dict(d) if hasattr(cls, "from_dict") else cls(**d)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{what}: {exc}") from None


def _read_json(path: str, what: str) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read {what} {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{what} {path} is not valid JSON: {exc}") from None


def resolve_run_config(raw: dict, seed: int | None = None) -> dict:
    """Validate a run config and fill every default; ``seed`` overrides the file's seed.

    The run seed is also written into each component config that does not set
    its own seed, so one number pins the whole run.
    """
    if seed is not None:
        raw = {**raw, "seed": seed}
    _check(raw, run_config_schema(), "config")
    family = raw["family"]
    _check(raw, run_config_schema(family), "config")
    s = raw["seed"]
    out = {"family": family, "seed": s, "mode": raw.get("mode", "gzsl_with_dc")}
    if "dataset" in raw:
        out["dataset"] = raw["dataset"]
    else:
        out["synth"] = dataclasses.asdict(_build(SynthSpec, raw["synth"], "config.synth"))
    for key, cls in (("latent", FAMILIES[family]), ("head", HeadConfig), ("gate", GateConfig)):
        d = dict(raw.get(key, {}))
        if seed is not None or "seed" not in d:
            d["seed"] = s
        out[key] = _build(cls, d, f"config.{key}").to_dict()
    return out


def load_run_dataset(cfg: dict, base: Path | None = None) -> Dataset:
    if "dataset" in cfg:
        path = Path(cfg["dataset"])
        if base is not None and not path.is_absolute():
            path = base / path
        return load_dataset(path)
    return synth_benchmark(SynthSpec(**cfg["synth"]))


# ---------------------------------------------------------------- commands

def _mode(args, default: str) -> str:
    if getattr(args, "mode", None) == "zsl":
        return "zsl"
    if getattr(args, "no_dc", False):
        return "gzsl_plain"
    if getattr(args, "mode", None) == "gzsl":
        return "gzsl_with_dc"
    return default


def cmd_train(args) -> int:
    if not args.config:
        raise UsageError("train needs --config")
    cfg = resolve_run_config(_read_json(args.config, "config"), args.seed)
    cfg["mode"] = _mode(args, cfg["mode"])
    out = Path(args.out or "run")
    if "dataset" in cfg:
        cfg["dataset"] = str((Path(args.config).parent / cfg["dataset"]).resolve())
    ds = load_run_dataset(cfg)
    family = cfg["family"]
    latent_cfg = FAMILIES[family].from_dict(cfg["latent"])
    head_cfg, gate_cfg = HeadConfig(**cfg["head"]), GateConfig(**cfg["gate"])
    log.info("training %s pipeline (mode %s, seed %d)", family, cfg["mode"], cfg["seed"])
    trained = train_pipeline(ds, family, latent_cfg, head_cfg, gate_cfg, cfg["mode"], cfg["seed"])
    manifest = save_pipeline(trained.pipeline, out, latent_cfg, head_cfg, gate_cfg)
    (out / EFFECTIVE_CONFIG).write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    _write_history(out / "history.csv", trained.latent_history)
    if trained.calibration:
        (out / "calibration.json").write_text(json.dumps(trained.calibration, indent=2) + "\n")
    print(f"wrote {manifest}")
    return EXIT_OK


def _write_history(path: Path, history: list[dict]) -> None:
    keys = ["epoch"] + [k for k in (history[0] if history else {}) if k != "epoch"]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for row in history:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})


def _eval_dataset(args, manifest: Path) -> Dataset:
    if args.data:
        return load_dataset(args.data)
    eff = manifest.parent / EFFECTIVE_CONFIG
    if args.config:
        return load_run_dataset(resolve_run_config(_read_json(args.config, "config")), Path(args.config).parent)
    if eff.is_file():
        return load_run_dataset(json.loads(eff.read_text()))
    raise UsageError("eval needs --data or --config (no effective config beside the manifest)")


def cmd_eval(args) -> int:
    manifest = Path(args.manifest)
    ds = _eval_dataset(args, manifest)
    pipeline = load_pipeline(manifest, ds.semantic)
    if pipeline.head.n_classes != ds.n_classes or pipeline.class_domains != ds.class_domains():
        raise ManifestError(f"{manifest}: classes or domains do not match the dataset")
    mode = _mode(args, pipeline.mode)
    if mode == "gzsl_with_dc" and pipeline.dc is None:
        log.warning("pipeline has no domain classifier; evaluating gzsl_plain")
        mode = "gzsl_plain"
    modes = [mode] + (["gzsl_plain"] if mode == "gzsl_with_dc" else [])
    out = Path(args.out) if args.out else manifest.parent
    out.mkdir(parents=True, exist_ok=True)
    print(f"{'mode':<14s} {'acc_seen':>9s} {'acc_unseen':>10s} {'h_mean':>8s} {'ausuc':>8s}")
    for i, m in enumerate(modes):
        grid = None
        if args.grid:
            scores = pipeline_scores(pipeline, ds.visual[np.concatenate([ds.test_seen_idx, ds.test_unseen_idx])], "gzsl_plain" if m == "zsl" else m)
            grid = default_grid(scores, args.grid)
        report = full_report(pipeline, ds, grid, m)
        if i == 0:
            report.write(out / "report.json", out / "curve.csv")
        print(f"{m:<14s} {report.acc_seen:9.4f} {report.acc_unseen:10.4f} {report.h_mean:8.4f} {report.ausuc:8.4f}")
    return EXIT_OK


def cmd_synth(args) -> int:
    spec = {}
    if args.config:
        spec = _read_json(args.config, "synth spec")
        _check(spec, dataclass_schema(SynthSpec), "synth spec")
    if args.seed is not None:
        spec["seed"] = args.seed
    spec = _build(SynthSpec, spec, "synth spec")
    out = Path(args.out or "synth")
    if out.exists() and any(out.iterdir()) and not args.force:
        raise UsageError(f"{out} exists and is not empty; pass --force to overwrite")
    save_dataset(synth_benchmark(spec), out)
    (out / "synth_spec.json").write_text(json.dumps(dataclasses.asdict(spec), indent=2, sort_keys=True) + "\n")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_checks(seed=args.seed or 0)
    for r in results:
        print(r.line())
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} passed")
    return EXIT_NUMERIC if failed else EXIT_OK


# ------------------------------------------------------------------ parser

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="gzsl", description="Generalised zero-shot learning with a seen/unseen domain gate.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="train latent model, class head and domain classifier")
    t.add_argument("--config", help="run config (JSON)")
    t.add_argument("--seed", type=int, help="overrides the config seed")
    t.add_argument("--out", help="output directory (default: ./run)")
    t.add_argument("--no-dc", action="store_true", help="skip the domain classifier")
    t.add_argument("--mode", choices=("gzsl", "zsl"))
    t.set_defaults(func=cmd_train)

    for name, help_ in (("eval", "evaluate a trained pipeline"), ("ausuc", "eval with a custom lambda grid")):
        e = sub.add_parser(name, help=help_)
        e.add_argument("manifest", help="manifest.json written by train")
        e.add_argument("--data", help="dataset directory (default: the run's own dataset)")
        e.add_argument("--config", help="run config naming the dataset")
        e.add_argument("--out", help="report directory (default: beside the manifest)")
        e.add_argument("--no-dc", action="store_true", help="evaluate without the domain gate")
        e.add_argument("--mode", choices=("gzsl", "zsl"))
        e.add_argument("--grid", type=int, default=201 if name == "ausuc" else None,
                       help="number of lambda grid points")
        e.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", help="write a synthetic benchmark dataset")
    s.add_argument("--config", help="synthetic spec (JSON)")
    s.add_argument("--seed", type=int)
    s.add_argument("--out", help="output directory (default: ./synth)")
    s.add_argument("--force", action="store_true", help="overwrite a non-empty directory")
    s.set_defaults(func=cmd_synth)

    g = sub.add_parser("gradcheck", help="finite-difference check of every loss")
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gradcheck)
    return p


def _setup_logging() -> None:
    name = os.environ.get("GZSL_LOG", "warning").lower()
    if name not in LOG_LEVELS:
        raise UsageError(f"GZSL_LOG must be one of {sorted(LOG_LEVELS)}, got {name!r}")
    logging.basicConfig(level=LOG_LEVELS[name], format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _setup_logging()
        if getattr(args, "grid", None) is not None and args.grid < 1:
            raise UsageError("--grid must be >= 1")
        return args.func(args)
    except UsageError as exc:
        print(f"gzsl: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DatasetError, CheckpointError, ManifestError, FileNotFoundError) as exc:
        print(f"gzsl: integrity error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingDivergence, NonFiniteError) as exc:
        print(f"gzsl: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
