"""Command-line entry point: generate, train, predict, evaluate, gradcheck, dump-memory."""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import logging
import os
import sys
from dataclasses import asdict, fields
from pathlib import Path

from . import autodiff as ad
from . import checkpoint
from .data import GenConfig, build_samples, denormalize, generate_synthetic, load_jsonl, sample_arrays, split, write_jsonl
from .errors import ConfigError, ContractError, DataIOError, SMNError
from .gradcheck import gradcheck
from .model import VARIANTS, Batch, ModelConfig, SMNModel, config_hash, parameter_count
from .read import GateStats
from .train import evaluate, train

log = logging.getLogger("smn")

MODEL_KEYS = {f.name for f in fields(ModelConfig)}
GEN_KEYS = {f.name for f in fields(GenConfig)}
RUN_DEFAULTS = {"data": None, "out": None, "checkpoint": None, "split": [0.7, 0.25, 0.05], "batch_size": 32}

STREAM_FILES = {"I": "stream_I.jsonl", "R": "stream_R.jsonl"}


# ---------------------------------------------------------------------------
# configuration


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text.strip()


def read_config_file(path) -> dict:
    """Flat ``key = value`` pairs; ``[section]`` headers are optional and ignored."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=", ":"))
    parser.optionxform = str
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise DataIOError(f"cannot read config {path}: {e}") from e
    try:
        parser.read_string("[__top__]\n" + text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config {path}: {e}") from e
    out = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            out[key] = _parse_value(value)
    return out


class RunConfig:
    """Model, generator and run settings; later sources override earlier ones."""

    def __init__(self, values: dict | None = None):
        self.model: dict = {}
        self.gen: dict = {}
        self.run: dict = dict(RUN_DEFAULTS)
        for k, v in (values or {}).items():
            self.set(k, v)

    def set(self, key: str, value) -> None:
        if key == "map":
            self.model["width"] = self.model["height"] = int(value)
        elif key == "seed":
            self.model["seed"] = int(value)
        elif key in MODEL_KEYS:
            self.model[key] = value
        elif key in GEN_KEYS:
            self.gen[key] = value
        elif key in RUN_DEFAULTS:
            self.run[key] = value
        else:
            raise ConfigError(f"unknown config key {key!r}")

    @property
    def seed(self) -> int:
        return int(self.model.get("seed", 0))

    def model_config(self) -> ModelConfig:
        try:
            return ModelConfig(**self.model)
        except TypeError as e:
            raise ConfigError(str(e)) from e

    def gen_config(self) -> GenConfig:
        try:
            cfg = GenConfig(**self.gen)
        except TypeError as e:
            raise ConfigError(str(e)) from e
        cfg.validate()
        return cfg

    def effective(self) -> dict:
        return {"model": self.model_config().to_dict(), "generator": asdict(self.gen_config()), "run": dict(self.run)}


def build_run_config(args) -> RunConfig:
    rc = RunConfig(read_config_file(args.config) if args.config else {})
    for key in ("variant", "map", "hidden", "obs", "pred", "seed", "epochs", "lr", "accum", "data", "out", "checkpoint", "scenes"):
        value = getattr(args, key, None)
        if value is not None:
            rc.set(key, value)
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        rc.set(k.strip(), _parse_value(v))
    return rc


def _out_dir(rc: RunConfig) -> Path:
    out = rc.run.get("out")
    if not out:
        raise ConfigError("--out is required")
    p = Path(out)
    try:
        p.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataIOError(f"cannot create output directory {p}: {e}") from e
    if not os.access(p, os.W_OK):
        raise DataIOError(f"output directory {p} is not writable")
    return p


def _write_text(path: Path, text: str) -> None:
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as e:
        raise DataIOError(f"cannot write {path}: {e}") from e


def _echo_config(rc: RunConfig, out: Path | None) -> dict:
    eff = rc.effective()
    text = json.dumps(eff, indent=2, sort_keys=True)
    log.info("effective config: %s", json.dumps(eff, sort_keys=True))
    if out is not None:
        _write_text(out / "effective_config.json", text + "\n")
    return eff


# ---------------------------------------------------------------------------
# data


def load_dataset(path) -> list:
    """Scenes from a generated directory (manifest extent/rates honoured) or a single JSONL file."""
    if not path:
        raise ConfigError("--data is required")
    p = Path(path)
    if p.is_dir():
        extent, fps = None, None
        man = p / "manifest.json"
        if man.exists():
            try:
                doc = json.loads(man.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as e:
                raise DataIOError(f"cannot read manifest {man}: {e}") from e
            gen = doc.get("config", {})
            if "extent" in gen:
                extent = tuple(gen["extent"])
            if "i_rate" in gen and "r_rate" in gen:
                fps = {"I": float(gen["i_rate"]), "R": float(gen["r_rate"])}
        files = [p / f for f in STREAM_FILES.values() if (p / f).exists()]
        if not files:
            raise DataIOError(f"{p} holds no stream_I.jsonl / stream_R.jsonl")
        return load_jsonl(files, extent=extent, fps=fps)
    if not p.exists():
        raise DataIOError(f"data path {p} does not exist")
    return load_jsonl(p)


def _samples(scenes, mcfg: ModelConfig) -> list:
    with_r = "R" in mcfg.streams
    if with_r and scenes and not any(s.stream == "R" for s in scenes):
        raise ConfigError(f"variant {mcfg.variant} needs stream R data but the dataset has stream I only")
    min_len = mcfg.min_track_len or None
    return [sample_arrays(s, with_r=with_r) for s in build_samples(scenes, mcfg.obs, mcfg.pred, min_len)]


def _splits(rc: RunConfig, mcfg: ModelConfig):
    scenes = load_dataset(rc.run.get("data"))
    if not scenes:
        raise ContractError("dataset is empty")
    if "R" in mcfg.streams and not any(s.stream == "R" for s in scenes):
        raise ConfigError(f"variant {mcfg.variant} needs stream R data but the dataset has stream I only")
    tr, te, va = split(scenes, rc.run.get("split"), mcfg.seed)
    return _samples(tr, mcfg), _samples(te, mcfg), _samples(va, mcfg)


# ---------------------------------------------------------------------------
# commands


def cmd_generate(rc: RunConfig) -> int:
    out = _out_dir(rc)
    gcfg = rc.gen_config()
    _echo_config(rc, out)
    scenes = generate_synthetic(gcfg, rc.seed)
    hashes = {}
    for stream, name in STREAM_FILES.items():
        path = out / name
        try:
            write_jsonl([s for s in scenes if s.stream == stream], path)
        except OSError as e:
            raise DataIOError(f"cannot write {path}: {e}") from e
        hashes[name] = hashlib.sha256(path.read_bytes()).hexdigest()
    gen = asdict(gcfg)
    manifest = {"seed": rc.seed, "config": gen, "config_hash": config_hash(gen), "files": hashes,
                "scenes": gcfg.scenes}
    _write_text(out / "manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    log.info("wrote %d scenes to %s", gcfg.scenes, out)
    return 0


def cmd_train(rc: RunConfig) -> int:
    out = _out_dir(rc)
    mcfg = rc.model_config()
    _echo_config(rc, out)
    train_s, _, val_s = _splits(rc, mcfg)
    if not train_s:
        raise ContractError("training split has no samples")
    model = SMNModel(mcfg)
    log.info("variant %s: %d trainable parameters", mcfg.variant, parameter_count(mcfg))
    log.info("%d training / %d validation samples", len(train_s), len(val_s))
    ckpt = rc.run.get("checkpoint") or out / "checkpoint.json"
    res = train(model, train_s, val_s, log_path=out / "train_log.csv", checkpoint_path=ckpt)
    log.info("finished after %d epochs (%s); best epoch %d", len(res.log), res.stopped, res.best_epoch)
    return 0


def _load_model(rc: RunConfig) -> SMNModel:
    path = rc.run.get("checkpoint")
    if not path:
        raise ConfigError("--checkpoint is required")
    mcfg = rc.model_config() if rc.model else None
    if mcfg is not None:
        try:
            stored = checkpoint.load(path)
        except SMNError:
            stored = None
        if stored is not None:
            merged = stored.config.to_dict()
            merged.update(rc.model)
            mcfg = ModelConfig.from_dict(merged)
    return checkpoint.load(path, mcfg)


def cmd_predict(rc: RunConfig) -> int:
    out = _out_dir(rc)
    model = _load_model(rc)
    rc.model = model.config.to_dict()
    _echo_config(rc, out)
    _, test_s, _ = _splits(rc, model.config)
    if not test_s:
        raise ContractError("test split has no samples")
    preds = model.predict_many(test_s, int(rc.run.get("batch_size", 32)))
    path = out / "predictions.csv"
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["sample_id", "step", "x", "y", "x_true", "y_true"])
            for a, p in zip(test_s, preds):
                pw, tw = denormalize(p, a.extent), denormalize(a.gt_pred, a.extent)
                for k in range(len(pw)):
                    w.writerow([a.sample_id, a.obs + k + 1, repr(float(pw[k, 0])), repr(float(pw[k, 1])),
                                repr(float(tw[k, 0])), repr(float(tw[k, 1]))])
    except OSError as e:
        raise DataIOError(f"cannot write {path}: {e}") from e
    log.info("wrote %d predictions to %s", len(preds), path)
    return 0


def cmd_evaluate(rc: RunConfig) -> int:
    out = _out_dir(rc)
    model = _load_model(rc)
    rc.model = model.config.to_dict()
    _echo_config(rc, out)
    _, test_s, _ = _splits(rc, model.config)
    if not test_s:
        raise ContractError("test split has no samples; nothing to evaluate")
    rep = evaluate(model, test_s, theta_factor=model.config.nl_theta, batch_size=int(rc.run.get("batch_size", 32)))
    _write_text(out / "metrics.csv", rep.aggregate_csv())
    _write_text(out / "per_sample.csv", rep.per_sample_csv())
    print(rep.table())
    return 0


def cmd_gradcheck(rc: RunConfig, variants) -> int:
    seed = int(rc.model.get("seed", 1))
    failed = []
    for v in variants:
        rep = gradcheck(v, seed)
        for line in rep.lines():
            print(_colour(line))
        if not rep.passed:
            failed.append(v)
    print(f"gradcheck: {'FAIL ' + ', '.join(failed) if failed else 'all modules within tolerance'}")
    return 4 if failed else 0


def cmd_dump_memory(rc: RunConfig, index: int) -> int:
    out = _out_dir(rc)
    model = _load_model(rc)
    rc.model = model.config.to_dict()
    _echo_config(rc, out)
    cfg = model.config
    if not cfg.uses_memory:
        raise ConfigError(f"variant {cfg.variant} has no memory to dump")
    _, test_s, _ = _splits(rc, cfg)
    if not test_s:
        raise ContractError("test split has no samples")
    if not 0 <= index < len(test_s):
        raise ConfigError(f"--sample {index} outside [0, {len(test_s)})")
    a = test_s[index]
    cell_rows, layer_rows = [], []

    def trace(stream, t, runner):
        norms = runner.memory_block(0).norms()
        for x in range(norms.shape[0]):
            for y in range(norms.shape[1]):
                cell_rows.append([stream, t, x, y, repr(float(norms[x, y]))])

    stats = GateStats()
    with ad.no_grad():
        model.forward_batch(Batch([a], cfg), stats=stats, trace=trace)
    streams = list(cfg.streams)
    for k, norms in enumerate(stats.layer_norms):
        stream = streams[k % len(streams)]
        frame = k // len(streams)
        for j, n in enumerate(norms):
            for pos, v in enumerate(n):
                layer_rows.append([stream, frame, j, pos, repr(float(v))])
    _write_csv(out / "memory_norms.csv", ["stream", "frame", "x", "y", "norm"], cell_rows)
    _write_csv(out / "layer_norms.csv", ["stream", "step", "layer", "position", "norm"], layer_rows)
    log.info("sample %s: %d cell rows, %d layer rows", a.sample_id, len(cell_rows), len(layer_rows))
    return 0


def _write_csv(path: Path, header, rows) -> None:
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as e:
        raise DataIOError(f"cannot write {path}: {e}") from e


# ---------------------------------------------------------------------------
# plumbing


def _use_colour() -> bool:
    return "NO_COLOR" not in os.environ and sys.stdout.isatty()


def _colour(line: str) -> str:
    if not _use_colour():
        return line
    if line.endswith("FAIL"):
        return line[:-4] + "\033[31mFAIL\033[0m"
    if line.endswith("ok"):
        return line[:-2] + "\033[32mok\033[0m"
    return line


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--variant", type=str.upper, choices=VARIANTS)
    common.add_argument("--map", type=int, help="memory grid size (sets W = H)")
    common.add_argument("--hidden", type=int)
    common.add_argument("--obs", type=int)
    common.add_argument("--pred", type=int)
    common.add_argument("--seed", type=int)
    common.add_argument("--epochs", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--accum", type=int)
    common.add_argument("--scenes", type=int)
    common.add_argument("--data")
    common.add_argument("--out")
    common.add_argument("--checkpoint")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="smn", description="Structured-memory pedestrian trajectory predictor.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write a synthetic paired I/R dataset")
    sub.add_parser("train", parents=[common], help="train a variant and write a checkpoint")
    sub.add_parser("predict", parents=[common], help="write test-split predictions")
    sub.add_parser("evaluate", parents=[common], help="ADE/FDE/n-ADE on the test split")
    sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient check")
    dm = sub.add_parser("dump-memory", parents=[common], help="per-frame memory and read-layer norms")
    dm.add_argument("--sample", type=int, default=0, help="test-split sample index")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        rc = build_run_config(args)
        if args.command == "generate":
            return cmd_generate(rc)
        if args.command == "train":
            return cmd_train(rc)
        if args.command == "predict":
            return cmd_predict(rc)
        if args.command == "evaluate":
            return cmd_evaluate(rc)
        if args.command == "gradcheck":
            variants = [rc.model["variant"]] if "variant" in rc.model else list(VARIANTS)
            return cmd_gradcheck(rc, variants)
        if args.command == "dump-memory":
            return cmd_dump_memory(rc, args.sample)
    except SMNError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
