"""Command-line harness.

Five subcommands: ``train`` (one model, full artifact set), ``eval``
(re-score a checkpoint), ``propcheck`` (exchangeability suite),
``gradcheck`` (finite-difference verification), and ``compare``
(variants x seeds sweep with ordering verdicts).

Every command resolves its effective configuration from defaults, an
optional ``--config`` JSON file, and explicit flags (in that order), then
echoes the result verbatim to ``<out>/config.json``. Re-running any
command from its echoed file reproduces the same outputs; unknown keys
anywhere in a config file are rejected.

Exit codes: 0 success, 1 property or threshold failure, 2 configuration
error, 3 numerical failure.

``metrics.jsonl`` rows carry ``wall_ms: null`` so that identical specs
produce byte-identical files; real per-epoch timings go to the
``timings.jsonl`` sidecar, which is explicitly not reproducible.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import backends, gradcheck, propcheck, serialize
from .compare import REID_CONDITIONS, execute_run, run_compare, task_defaults
from .errors import (
    ConfigurationError,
    NonFiniteLossError,
    OptimizerError,
    OracleError,
    PreconditionError,
    SetMatchError,
    ShapeError,
)
from .params import ModelConfig, ModelParams
from .synthdata import GenConfig, parse_noise_ratio
from .training import TrainConfig

COMMANDS = ("train", "eval", "propcheck", "gradcheck", "compare")

_BASE_KEYS = {
    "command", "task", "variant", "seed", "out",
    "noise_x", "noise_y", "mix", "units", "model", "train", "gen",
    "backend",
}
_COMMAND_KEYS = {
    "train": set(),
    "eval": {"checkpoint"},
    "propcheck": {"trials", "mutation"},
    "gradcheck": {"loss_kind"},
    "compare": {"seeds", "conditions"},
}

_MODEL_KEYS = {"d", "d_in", "h", "d_g", "d_w", "L", "ffn_hidden", "pool"}
_TRAIN_KEYS = {
    "lr0", "momentum", "weight_decay", "decay_factor", "decay_every",
    "k", "epochs", "loss_kind", "symmetric_loss", "clip_norm",
}
_GEN_KEYS = {
    "d_in", "n_categories", "outfit_min", "outfit_max", "item_noise_std",
    "style_std", "reid_obs_per_person", "reid_persons_min",
    "reid_persons_max", "reid_identity_noise_std",
}
_UNIT_KEYS = {"train", "val"}


def _reject_unknown(given: dict, allowed: set, where: str) -> None:
    unknown = set(given) - allowed
    if unknown:
        raise ConfigurationError(
            f"unknown {where} key(s): {', '.join(sorted(unknown))}"
        )


def _load_config_file(path: str, command: str) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise ConfigurationError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError("config file must hold a JSON object")
    allowed = _BASE_KEYS | _COMMAND_KEYS[command]
    _reject_unknown(raw, allowed, "config")
    source = raw.get("command", command)
    # eval reuses a train run's echoed config to rebuild the same pools
    if source != command and not (command == "eval" and source == "train"):
        raise ConfigurationError(
            f"config file is for {source!r}, invoked as {command!r}"
        )
    raw.pop("command", None)
    for section, keys in (
        ("model", _MODEL_KEYS),
        ("train", _TRAIN_KEYS),
        ("gen", _GEN_KEYS),
        ("units", _UNIT_KEYS),
    ):
        if section in raw:
            if not isinstance(raw[section], dict):
                raise ConfigurationError(f"{section!r} must be an object")
            _reject_unknown(raw[section], keys, section)
    return raw


def resolve_spec(args: argparse.Namespace) -> dict:
    """Defaults, then config file, then explicit flags."""
    command = args.command
    spec: dict = {
        "command": command,
        "task": "subset",
        "variant": "attention",
        "seed": 0,
        "out": None,
        "noise_x": "0/3",
        "noise_y": "0/3",
        "mix": 2,
        "units": {"train": 2048, "val": 512},
        "model": {},
        "train": {},
        "gen": {},
        "backend": "auto",
    }
    if command == "propcheck":
        spec.update({"trials": 120, "mutation": "none"})
    if command == "gradcheck":
        spec.update({"loss_kind": "kpair"})
        spec["model"] = {"d": 8, "d_in": 4, "h": 2, "L": 2}
        spec["train"] = {"k": 3}
    if command == "compare":
        spec.update({"seeds": [0, 1, 2], "conditions": None})
    if command == "eval":
        spec.update({"checkpoint": None})

    if getattr(args, "config", None):
        file_spec = _load_config_file(args.config, command)
        for key, value in file_spec.items():
            if key in ("model", "train", "gen", "units"):
                spec[key] = {**spec[key], **value}
            else:
                spec[key] = value

    flag_map = {
        "task": "task",
        "variant": "variant",
        "seed": "seed",
        "out": "out",
        "noise_x": "noise_x",
        "noise_y": "noise_y",
        "trials": "trials",
        "mutation": "mutation",
        "checkpoint": "checkpoint",
    }
    for attr, key in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None:
            spec[key] = value
    if getattr(args, "epochs", None) is not None:
        spec["train"]["epochs"] = args.epochs
    if getattr(args, "k", None) is not None:
        spec["train"]["k"] = args.k
    if getattr(args, "d", None) is not None:
        spec["model"]["d"] = args.d
    if getattr(args, "heads", None) is not None:
        spec["model"]["h"] = args.heads

    if spec["task"] not in ("subset", "superset", "reid"):
        raise ConfigurationError(f"unknown task {spec['task']!r}")
    if spec["variant"] not in ("attention", "affinity", "baseline"):
        raise ConfigurationError(f"unknown variant {spec['variant']!r}")

    # per-task candidate count and loss kind unless given explicitly
    defaults = task_defaults(spec["task"])
    spec["train"].setdefault("k", defaults["k"])
    spec["train"].setdefault("loss_kind", defaults["loss_kind"])
    # the raw item width flows from the generator into the model
    spec["model"].setdefault("d_in", spec["gen"].get("d_in", 16))
    parse_noise_ratio(spec["noise_x"])
    parse_noise_ratio(spec["noise_y"])
    return spec


def build_configs(spec: dict):
    model_cfg = ModelConfig(variant=spec["variant"], **spec["model"])
    train_cfg = TrainConfig(seed=spec["seed"], **spec["train"])
    gen_cfg = GenConfig(seed=spec["seed"], **spec["gen"])
    return model_cfg, train_cfg, gen_cfg


def _echo_config(spec: dict, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    echo = dict(spec)
    # echo the fully resolved nested sections so a re-run needs no defaults
    model_cfg, train_cfg, gen_cfg = build_configs(spec)
    model = model_cfg.to_dict()
    model.pop("variant")
    train = train_cfg.to_dict()
    train.pop("seed")
    gen = gen_cfg.to_dict()
    gen.pop("seed")
    echo.update({"model": model, "train": train, "gen": gen})
    (out / "config.json").write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n")


def _require_out(spec: dict) -> Path:
    if not spec["out"]:
        raise ConfigurationError("this command needs --out <directory>")
    return Path(spec["out"])


def _apply_backend(spec: dict) -> None:
    backends.active = backends.get_backend(
        None if spec["backend"] == "auto" else spec["backend"]
    )


def _metric_row(em) -> str:
    row = {
        "epoch": em.epoch,
        "loss": em.mean_loss,
        "lr": em.lr,
        "train_acc": em.train_acc,
        "val_acc": em.val_acc,
        "wall_ms": None,
    }
    return json.dumps(row, sort_keys=True)


def _write_run_artifacts(out: Path, result, train_cfg) -> None:
    with (out / "metrics.jsonl").open("w") as fh:
        for em in result.metrics:
            fh.write(_metric_row(em) + "\n")
    with (out / "timings.jsonl").open("w") as fh:
        for em in result.metrics:
            fh.write(
                json.dumps(
                    {"epoch": em.epoch, "wall_ms": em.wall_ms}, sort_keys=True
                )
                + "\n"
            )
    losses = [em.mean_loss for em in result.metrics]
    with (out / "learning_curve.csv").open("w") as fh:
        fh.write("epoch,loss_smoothed\n")
        for i in range(len(losses)):
            window = losses[max(0, i - 29) : i + 1]
            fh.write(f"{i},{float(np.mean(window)):.6f}\n")
    serialize.save_params(result.model, out / "checkpoint.bin")


def cmd_train(spec: dict) -> int:
    out = _require_out(spec)
    _apply_backend(spec)
    model_cfg, train_cfg, gen_cfg = build_configs(spec)
    _echo_config(spec, out)

    ckpt_path = out / "checkpoint.bin"

    # rolling checkpoint at every learning-rate decay boundary; the final
    # save in _write_run_artifacts overwrites it with the terminal state
    def on_epoch(em, model):
        if (em.epoch + 1) % train_cfg.decay_every == 0:
            serialize.save_params(model, ckpt_path)

    result = execute_run(
        spec["task"], spec["variant"], spec["seed"],
        model_cfg, train_cfg, gen_cfg,
        mix=spec["mix"], noise_x=spec["noise_x"], noise_y=spec["noise_y"],
        train_units=spec["units"]["train"], val_units=spec["units"]["val"],
        on_epoch=on_epoch,
    )
    _write_run_artifacts(out, result, train_cfg)
    print(
        f"train: task={spec['task']} variant={spec['variant']} "
        f"seed={spec['seed']} epochs={train_cfg.epochs} "
        f"final val_acc={result.final_val_acc:.4f} "
        f"({result.wall_seconds:.1f}s) -> {out}"
    )
    return 0


def cmd_eval(spec: dict) -> int:
    out = _require_out(spec)
    _apply_backend(spec)
    ckpt = spec.get("checkpoint") or str(out / "checkpoint.bin")
    try:
        model = serialize.load_params(ckpt)
    except FileNotFoundError as exc:
        raise ConfigurationError(f"checkpoint not found: {ckpt}") from exc
    _, train_cfg, gen_cfg = build_configs(spec)
    from .compare import build_pools
    from .training import evaluate_accuracy

    _, val_pool = build_pools(
        spec["task"], gen_cfg, train_cfg.k,
        spec["units"]["train"], spec["units"]["val"], spec["seed"],
        mix=spec["mix"], noise_x=spec["noise_x"], noise_y=spec["noise_y"],
    )
    acc = evaluate_accuracy(model, val_pool)
    _echo_config(spec, out)
    report = {
        "command": "eval",
        "checkpoint": str(ckpt),
        "task": spec["task"],
        "val_acc": acc,
    }
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(f"eval: val_acc={acc:.4f} on {spec['task']} ({ckpt})")
    return 0


def cmd_propcheck(spec: dict) -> int:
    mutation = spec["mutation"]
    report = propcheck.run_suite(
        trials=spec["trials"],
        base_seed=spec["seed"],
        mutation=None if mutation == "none" else mutation,
    )
    print(propcheck.format_report(report))
    if spec["out"]:
        out = _require_out(spec)
        _echo_config(spec, out)
        (out / "report.json").write_text(
            json.dumps(report, indent=2, sort_keys=True) + "\n"
        )
    return 0 if report["pass"] else 1


def cmd_gradcheck(spec: dict) -> int:
    model = spec["model"]
    report = gradcheck.run_gradcheck(
        d=model.get("d", 8),
        d_in=model.get("d_in", 4),
        h=model.get("h", 2),
        L=model.get("L", 2),
        k=spec["train"].get("k", 3),
        variant=spec["variant"],
        pool=model.get("pool", "attention"),
        loss_kind=spec["loss_kind"],
        seed=spec["seed"],
    )
    print(gradcheck.format_report(report))
    if spec["out"]:
        out = _require_out(spec)
        _echo_config(spec, out)
        (out / "report.json").write_text(
            json.dumps(report, indent=2, sort_keys=True) + "\n"
        )
    return 0 if report["pass"] else 1


def cmd_compare(spec: dict) -> int:
    out = _require_out(spec)
    _apply_backend(spec)
    model_cfg, train_cfg, gen_cfg = build_configs(spec)
    _echo_config(spec, out)
    conditions = spec["conditions"]
    if conditions is not None:
        conditions = [tuple(c) for c in conditions]
    report, runs = run_compare(
        spec["task"], model_cfg, train_cfg, gen_cfg,
        seeds=tuple(spec["seeds"]),
        conditions=conditions,
        mix=spec["mix"],
        train_units=spec["units"]["train"],
        val_units=spec["units"]["val"],
        progress=print,
    )
    # reid repeats each variant-seed pair across noise conditions, so the
    # run directories carry a sequential index to stay unique
    for idx, result in enumerate(runs):
        run_dir = out / "runs" / f"{idx:02d}-{result.variant}-seed{result.seed}"
        run_dir.mkdir(parents=True, exist_ok=True)
        with (run_dir / "metrics.jsonl").open("w") as fh:
            for em in result.metrics:
                fh.write(_metric_row(em) + "\n")
    (out / "report.json").write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    print(json.dumps(report["verdicts"], indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="setmatch",
        description="set-to-set matching: training, evaluation, and property suites",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--task", choices=("subset", "superset", "reid"))
        p.add_argument("--variant", choices=("attention", "affinity", "baseline"))
        p.add_argument("--config", help="JSON config file (flags override it)")
        p.add_argument("--out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--k", type=int, help="candidates per batch")
        p.add_argument("--d", type=int, help="model width")
        p.add_argument("--heads", type=int, help="attention head count")
        p.add_argument("--noise-x", dest="noise_x", help="reid ratio a/b for side X")
        p.add_argument("--noise-y", dest="noise_y", help="reid ratio a/b for side Y")
        if name == "propcheck":
            p.add_argument("--trials", type=int)
            p.add_argument(
                "--mutation",
                choices=("none", "unshared-cross"),
                help="run against a deliberately broken build (suite self-test)",
            )
        if name == "eval":
            p.add_argument("--checkpoint", help="model file to evaluate")
    return parser


_DISPATCH = {
    "train": cmd_train,
    "eval": cmd_eval,
    "propcheck": cmd_propcheck,
    "gradcheck": cmd_gradcheck,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        spec = resolve_spec(args)
        return _DISPATCH[args.command](spec)
    except (ConfigurationError, PreconditionError, ShapeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (NonFiniteLossError, OracleError, OptimizerError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except SetMatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
