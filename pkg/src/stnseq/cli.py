"""Command-line surface: dataset generation, training, evaluation, gradient
checking, and attention-crop rendering.

Settings resolve in order: built-in defaults, then a flat-key JSON config file
(--config), then explicit flags, then the STNSEQ_SEED environment variable for
the seed. The fully resolved configuration is echoed as config.json into every
output directory. Exit codes: 0 success, 1 check failure, 2 usage or
configuration error, 3 data or format error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import config as precision_config
from . import dataset as ds
from . import gradcheck as gc
from .checkpoint import load_model, save_model
from .mnist import load_mnist, split_train_pools
from .models import ModelConfig, build
from .pgm import write_pgm
from .stn import transform_grid
from .tensor import FormatError
from .training import TrainSettings, TrainingDiverged, evaluate, train

SEED_ENV_VAR = "STNSEQ_SEED"


class ConfigError(Exception):
    """Bad usage or configuration; maps to exit code 2."""


class CheckFailure(Exception):
    """A verification failed; maps to exit code 1."""


_DEFAULTS = {
    "dataset": {
        "mnist_dir": None,
        "out_dir": None,
        "seed": 0,
        "counts": "60000,10000,10000",
        "val_digits": 10000,
    },
    "train": {
        "variant": "rnn-spn",
        "d": 2.0,
        "dropout": None,
        "scale": 1,
        "lr": 1e-3,
        "rho": 0.9,
        "epsilon": 1e-6,
        "clip_norm": 10.0,
        "batch_size": 256,
        "epochs": 100,
        "patience": 10,
        "dtype": "float32",
        "seed": 0,
        "data_dir": None,
        "out_dir": None,
    },
    "eval": {
        "checkpoint": None,
        "data": None,
        "report": None,
        "batch_size": 256,
        "dtype": "float32",
        "seed": 0,
    },
    "gradcheck": {
        "scope": "full",
        "tol": 1e-4,
        "eps": 1e-5,
        "seed": 0,
        "seeds": 1,
        "negative_control": False,
    },
    "render": {
        "checkpoint": None,
        "data": None,
        "n": 4,
        "out_dir": None,
        "dtype": "float32",
        "seed": 0,
    },
}


def _resolve(command: str, args: argparse.Namespace) -> dict:
    cfg = dict(_DEFAULTS[command])
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            with open(config_path) as f:
                file_cfg = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {config_path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"config file {config_path} is not valid JSON: {e}")
        unknown = set(file_cfg) - set(cfg)
        if unknown:
            raise ConfigError(
                f"config keys {sorted(unknown)} are not settings of '{command}'"
            )
        cfg.update(file_cfg)
    for key in cfg:
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = flag
    env_seed = os.environ.get(SEED_ENV_VAR)
    if env_seed is not None:
        try:
            cfg["seed"] = int(env_seed)
        except ValueError:
            raise ConfigError(f"{SEED_ENV_VAR} must be an integer, got {env_seed!r}")
        cfg["seed_from_env"] = True
    return cfg


def _echo_config(out_dir: Path, command: str, cfg: dict) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "config.json", "w") as f:
        json.dump({"command": command, **cfg}, f, indent=2, sort_keys=True)
        f.write("\n")


def _require(cfg, key, hint):
    if cfg.get(key) in (None, ""):
        raise ConfigError(f"missing required setting '{key}' ({hint})")
    return cfg[key]


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _find_idx(mnist_dir: Path, stem: str) -> Path:
    for name in (stem, stem + ".gz"):
        p = mnist_dir / name
        if p.exists():
            return p
    raise ConfigError(f"no {stem}[.gz] under {mnist_dir}")


def cmd_dataset(args) -> int:
    cfg = _resolve("dataset", args)
    mnist_dir = Path(_require(cfg, "mnist_dir", "--mnist-dir"))
    out_dir = Path(_require(cfg, "out_dir", "--out-dir"))
    if not mnist_dir.is_dir():
        raise ConfigError(f"mnist dir does not exist: {mnist_dir}")
    try:
        counts = tuple(int(c) for c in str(cfg["counts"]).split(","))
    except ValueError:
        raise ConfigError(f"counts must be three comma-separated integers, got {cfg['counts']!r}")
    if len(counts) != 3 or any(c <= 0 for c in counts):
        raise ConfigError(f"counts must be three positive integers, got {cfg['counts']!r}")

    train_pool_full = load_mnist(
        _find_idx(mnist_dir, "train-images-idx3-ubyte"),
        _find_idx(mnist_dir, "train-labels-idx1-ubyte"),
    )
    test_pool = load_mnist(
        _find_idx(mnist_dir, "t10k-images-idx3-ubyte"),
        _find_idx(mnist_dir, "t10k-labels-idx1-ubyte"),
    )
    val_digits = int(cfg["val_digits"])
    if val_digits >= len(train_pool_full):
        val_digits = max(1, len(train_pool_full) // 6)
        print(
            f"warning: val_digits exceeds the training corpus, using {val_digits}",
            file=sys.stderr,
        )
    train_pool, val_pool = split_train_pools(train_pool_full, val_digits)

    _echo_config(out_dir, "dataset", cfg)
    seed = int(cfg["seed"])
    manifest = {"seed": seed, "counts": list(counts), "files": {}}
    jobs = (
        ("train.cmsq", train_pool, counts[0], seed),
        ("val.cmsq", val_pool, counts[1], seed + 1),
        ("test.cmsq", test_pool, counts[2], seed + 2),
    )
    for name, pool, count, file_seed in jobs:
        path = out_dir / name
        ds.generate_dataset_file(path, pool, count, file_seed)
        manifest["files"][name] = {"count": count, "sha256": _sha256(path)}
        print(f"wrote {path} ({count} examples)")
    with open(out_dir / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return 0


def _load_split(data_dir: Path, name: str) -> ds.SequenceDataset:
    path = data_dir / name
    if not path.exists():
        raise ConfigError(f"dataset file not found: {path}")
    return ds.read_dataset(path)


def cmd_train(args) -> int:
    cfg = _resolve("train", args)
    data_dir = Path(_require(cfg, "data_dir", "--data-dir"))
    out_dir = Path(_require(cfg, "out_dir", "--out-dir"))
    if not data_dir.is_dir():
        raise ConfigError(f"data dir does not exist: {data_dir}")
    if cfg["variant"] == "conv-baseline" and args.d is not None:
        print("warning: --d is ignored for the conv-baseline variant", file=sys.stderr)

    train_data = _load_split(data_dir, "train.cmsq")
    val_data = _load_split(data_dir, "val.cmsq")
    _echo_config(out_dir, "train", cfg)

    with precision_config.precision(cfg["dtype"]):
        try:
            model_cfg = ModelConfig(
                variant=cfg["variant"],
                downsample=float(cfg["d"]),
                dropout=cfg["dropout"],
                scale=int(cfg["scale"]),
                seed=int(cfg["seed"]),
            )
        except ValueError as e:
            raise ConfigError(str(e))
        model = build(model_cfg)
        settings = TrainSettings(
            lr=float(cfg["lr"]),
            rho=float(cfg["rho"]),
            eps=float(cfg["epsilon"]),
            clip_norm=None if cfg["clip_norm"] in (None, 0, "none") else float(cfg["clip_norm"]),
            batch_size=int(cfg["batch_size"]),
            max_epochs=int(cfg["epochs"]),
            patience=int(cfg["patience"]),
            shuffle_seed=int(cfg["seed"]),
        )
        checkpoint_path = out_dir / "best.ckpt"
        report = train(
            model,
            train_data,
            val_data,
            settings,
            checkpoint_path=checkpoint_path,
            log=print,
        )
    report.write_csv(out_dir / "report.csv")
    with open(out_dir / "model_config.json", "w") as f:
        json.dump(model_cfg.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")
    print(
        f"best epoch {report.best_epoch} with validation per-digit error "
        f"{report.best_val_error:.4f}; checkpoint at {checkpoint_path}"
    )
    return 0


def cmd_eval(args) -> int:
    cfg = _resolve("eval", args)
    ckpt_path = Path(_require(cfg, "checkpoint", "--checkpoint"))
    data_path = Path(_require(cfg, "data", "--data"))
    report_dir = Path(_require(cfg, "report", "--report"))
    if not ckpt_path.exists():
        raise ConfigError(f"checkpoint not found: {ckpt_path}")
    if not data_path.exists():
        raise ConfigError(f"dataset file not found: {data_path}")
    with precision_config.precision(cfg["dtype"]):
        model = load_model(ckpt_path)
        data = ds.read_dataset(data_path)
        error, confusions = evaluate(model, data, int(cfg["batch_size"]))
    _echo_config(report_dir, "eval", cfg)
    for t in range(confusions.shape[0]):
        with open(report_dir / f"confusion_pos{t}.csv", "w") as f:
            f.write("label\\pred," + ",".join(str(c) for c in range(10)) + "\n")
            for row in range(10):
                f.write(str(row) + "," + ",".join(str(v) for v in confusions[t][row]) + "\n")
    with open(report_dir / "metrics.json", "w") as f:
        json.dump({"per_digit_error": error, "examples": len(data)}, f, indent=2, sort_keys=True)
        f.write("\n")
    print(f"per-digit error: {error:.4f} over {len(data)} examples")
    return 0


def cmd_gradcheck(args) -> int:
    cfg = _resolve("gradcheck", args)
    scope = cfg["scope"]
    if scope not in gc.SCOPES:
        raise ConfigError(f"unknown scope {scope!r}; choose from {gc.SCOPES}")
    failed = False
    with precision_config.precision("float64"):
        for s in range(int(cfg["seeds"])):
            seed = int(cfg["seed"]) + s
            reports = gc.run_scope(
                scope,
                seed=seed,
                eps=float(cfg["eps"]),
                tol=float(cfg["tol"]),
                corrupt=bool(cfg["negative_control"]),
            )
            for rep in reports:
                for line in rep.lines():
                    print(f"seed {seed}  {line}")
                failed = failed or not rep.passed
    if failed:
        raise CheckFailure(f"gradient check failed for scope '{scope}'")
    print(f"gradient check passed for scope '{scope}'")
    return 0


def _overlay_outlines(canvas01: np.ndarray, sampler_grid: np.ndarray, transforms: np.ndarray) -> np.ndarray:
    """Mark the transformed border of each step's sampling grid by inverting pixels."""
    img = canvas01.copy()
    h_img, w_img = img.shape
    gh, gw = sampler_grid.shape[:2]
    border = np.zeros((gh, gw), dtype=bool)
    border[0, :] = border[-1, :] = True
    border[:, 0] = border[:, -1] = True
    for theta in transforms:
        smap = transform_grid(theta, sampler_grid)
        pts = smap[border]
        py = np.round((pts[:, 0] + 1.0) * 0.5 * (h_img - 1)).astype(int)
        px = np.round((pts[:, 1] + 1.0) * 0.5 * (w_img - 1)).astype(int)
        keep = (py >= 0) & (py < h_img) & (px >= 0) & (px < w_img)
        img[py[keep], px[keep]] = 1.0 - img[py[keep], px[keep]]
    return img


def cmd_render(args) -> int:
    cfg = _resolve("render", args)
    ckpt_path = Path(_require(cfg, "checkpoint", "--checkpoint"))
    data_path = Path(_require(cfg, "data", "--data"))
    out_dir = Path(_require(cfg, "out_dir", "--out-dir"))
    n = int(cfg["n"])
    if not ckpt_path.exists():
        raise ConfigError(f"checkpoint not found: {ckpt_path}")
    if not data_path.exists():
        raise ConfigError(f"dataset file not found: {data_path}")
    _echo_config(out_dir, "render", cfg)
    if n == 0:
        return 0
    with precision_config.precision(cfg["dtype"]):
        model = load_model(ckpt_path)
        data = ds.read_dataset(data_path)
        n = min(n, len(data))
        x, _ = data.example_tensors(np.arange(n))
        out = model.forward(x, train=False)
    for i in range(n):
        canvas = x[i, 0]
        write_pgm(out_dir / f"ex{i}_input.pgm", canvas)
        if out.transforms is None:
            print("warning: this model has no attention transforms; wrote inputs only", file=sys.stderr)
            continue
        overlay = _overlay_outlines(canvas, model.sampler.grid, out.transforms[:, i])
        write_pgm(out_dir / f"ex{i}_overlay.pgm", overlay)
        for t in range(out.crops.shape[0]):
            write_pgm(out_dir / f"ex{i}_crop{t + 1}.pgm", out.crops[t, i, 0])
    print(f"wrote renderings for {n} examples to {out_dir}")
    return 0


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat-key JSON settings file")
    p.add_argument("--seed", type=int, help="global RNG seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stnseq",
        description="Cluttered digit-sequence models: data, training, checks, rendering.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataset", help="generate train/val/test canvas files")
    _add_common(p)
    p.add_argument("--mnist-dir", dest="mnist_dir", help="directory with the IDX digit files")
    p.add_argument("--out-dir", dest="out_dir", help="output directory")
    p.add_argument("--counts", help="train,val,test example counts")
    p.add_argument("--val-digits", dest="val_digits", type=int, help="digits held out for the validation pool")
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="train a model variant")
    _add_common(p)
    p.add_argument("--variant", choices=("rnn-spn", "ffn-spn", "conv-baseline"))
    p.add_argument("--d", type=float, help="down-sampling factor of the attention crop")
    p.add_argument("--dropout", type=float)
    p.add_argument("--scale", type=int, help="divide filter counts and hidden sizes")
    p.add_argument("--lr", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--clip-norm", dest="clip_norm", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--patience", type=int)
    p.add_argument("--dtype", choices=("float32", "float64"))
    p.add_argument("--data-dir", dest="data_dir")
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset file")
    _add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--report", help="directory for metrics and confusion matrices")
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--dtype", choices=("float32", "float64"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="verify analytic gradients against finite differences")
    _add_common(p)
    p.add_argument("--scope", choices=gc.SCOPES)
    p.add_argument("--tol", type=float)
    p.add_argument("--eps", type=float)
    p.add_argument("--seeds", type=int, help="number of consecutive seeds to run")
    p.add_argument(
        "--negative-control",
        dest="negative_control",
        action="store_true",
        default=None,
        help="corrupt one gradient on purpose; the check must fail",
    )
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("render", help="dump canvases, attention outlines, and crops as PGM")
    _add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--data")
    p.add_argument("--n", type=int, help="number of examples to render")
    p.add_argument("--out-dir", dest="out_dir")
    p.set_defaults(func=cmd_render)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except CheckFailure as e:
        print(f"check failed: {e}", file=sys.stderr)
        return 1
    except TrainingDiverged as e:
        print(f"training aborted: {e}", file=sys.stderr)
        return 1
    except FormatError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
