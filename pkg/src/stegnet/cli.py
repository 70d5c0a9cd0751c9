"""Command-line entry point.

Subcommands: embed, train, eval, infer, gradcheck, dump-features. Every
command is deterministic given its flags and seed. Exit codes: 0 success,
1 usage error, 2 data/format error, 3 numeric failure (training divergence
or a failed gradient check).

``--threads N`` (or the STEGNET_THREADS env var) caps the BLAS worker
threads; it must take effect before numpy is first imported, so this module
defers all heavy imports into the command bodies. N=1 gives the
bitwise-deterministic single-core mode.
"""
from __future__ import annotations

import argparse
import os
import sys

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3

_THREAD_ENV_VARS = (
    "OPENBLAS_NUM_THREADS",
    "OMP_NUM_THREADS",
    "MKL_NUM_THREADS",
    "NUMEXPR_NUM_THREADS",
    "VECLIB_MAXIMUM_THREADS",
)

TRAIN_CONFIG_KEYS = (
    "manifest",
    "out_dir",
    "lr0",
    "lr_decay_epochs",
    "lr_decay_factor",
    "momentum",
    "weight_decay",
    "batch_size",
    "max_epochs",
    "seed",
    "freeze_srm",
    "activation_mode",
    "patience",
    "augment",
)


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is exit 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _apply_thread_cap(threads: int | None) -> None:
    if threads is None:
        env = os.environ.get("STEGNET_THREADS")
        if env is None:
            return
        try:
            threads = int(env)
        except ValueError:
            raise _UsageError(f"STEGNET_THREADS must be an integer, got {env!r}")
    if threads < 1:
        raise _UsageError(f"--threads must be at least 1, got {threads}")
    if "numpy" in sys.modules:
        # too late to change BLAS pools reliably; honor only matching caps
        current = os.environ.get("OPENBLAS_NUM_THREADS")
        if current != str(threads):
            print(
                "warning: numpy already loaded; --threads may not take effect",
                file=sys.stderr,
            )
    for var in _THREAD_ENV_VARS:
        os.environ[var] = str(threads)


class _UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# config files: `key = value` lines, # comments, unknown keys rejected
# ---------------------------------------------------------------------------

def parse_config_text(text: str, allowed_keys=TRAIN_CONFIG_KEYS) -> dict[str, str]:
    from .errors import SpecError

    values: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise SpecError(f"config line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in allowed_keys:
            raise SpecError(f"config line {lineno}: unknown key {key!r}")
        if key in values:
            raise SpecError(f"config line {lineno}: duplicate key {key!r}")
        if not value:
            raise SpecError(f"config line {lineno}: empty value for {key!r}")
        values[key] = value
    return values


def _parse_bool(key: str, value: str) -> bool:
    from .errors import SpecError

    lowered = value.lower()
    if lowered in ("true", "1", "yes"):
        return True
    if lowered in ("false", "0", "no"):
        return False
    raise SpecError(f"config key {key!r} expects a boolean, got {value!r}")


def _parse_epoch_list(value: str) -> tuple[int, ...]:
    """Comma-separated epochs; the word 'none' spells the empty schedule."""
    if value.strip().lower() == "none":
        return ()
    return tuple(int(tok) for tok in value.split(",") if tok.strip())


def load_run_config(path):
    """Parse a training run config; returns (TrainConfig, manifest, out_dir,
    augment). Numeric fields fall back to the TrainConfig defaults."""
    from .errors import SpecError
    from .train import TrainConfig

    with open(path, "r", encoding="utf-8") as fh:
        raw = parse_config_text(fh.read())
    for required in ("manifest", "out_dir"):
        if required not in raw:
            raise SpecError(f"config is missing the required key {required!r}")

    defaults = TrainConfig()
    try:
        cfg = TrainConfig(
            lr0=float(raw.get("lr0", defaults.lr0)),
            lr_decay_epochs=_parse_epoch_list(raw["lr_decay_epochs"])
            if "lr_decay_epochs" in raw
            else defaults.lr_decay_epochs,
            lr_decay_factor=float(raw.get("lr_decay_factor", defaults.lr_decay_factor)),
            momentum=float(raw.get("momentum", defaults.momentum)),
            weight_decay=float(raw.get("weight_decay", defaults.weight_decay)),
            batch_size=int(raw.get("batch_size", defaults.batch_size)),
            max_epochs=int(raw.get("max_epochs", defaults.max_epochs)),
            seed=int(raw.get("seed", defaults.seed)),
            freeze_srm=_parse_bool("freeze_srm", raw["freeze_srm"])
            if "freeze_srm" in raw
            else defaults.freeze_srm,
            activation_mode=raw.get("activation_mode", defaults.activation_mode),
            patience=int(raw.get("patience", defaults.patience)),
        )
    except ValueError as exc:
        raise SpecError(f"bad config value: {exc}") from exc
    cfg.validate()
    augment = raw.get("augment", "none")
    if augment not in ("none", "dihedral8"):
        raise SpecError(f"config key 'augment' must be none or dihedral8, got {augment!r}")
    manifest = raw["manifest"]
    if not os.path.isabs(manifest):
        manifest = os.path.join(os.path.dirname(os.path.abspath(path)), manifest)
    return cfg, manifest, raw["out_dir"], augment


def _resolved_config_text(cfg, manifest: str, out_dir: str, augment: str) -> str:
    lines = [
        "# resolved run configuration",
        f"manifest = {manifest}",
        f"out_dir = {out_dir}",
        f"lr0 = {cfg.lr0:.10g}",
        "lr_decay_epochs = "
        + (",".join(str(e) for e in cfg.lr_decay_epochs) or "none"),
        f"lr_decay_factor = {cfg.lr_decay_factor:.10g}",
        f"momentum = {cfg.momentum:.10g}",
        f"weight_decay = {cfg.weight_decay:.10g}",
        f"batch_size = {cfg.batch_size}",
        f"max_epochs = {cfg.max_epochs}",
        f"seed = {cfg.seed}",
        f"freeze_srm = {str(cfg.freeze_srm).lower()}",
        f"activation_mode = {cfg.activation_mode}",
        f"patience = {cfg.patience}",
        f"augment = {augment}",
    ]
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_embed(args) -> int:
    import numpy as np

    from . import data
    from .errors import DataError, FormatError

    in_dir, out_dir = args.in_dir, args.out_dir
    if not os.path.isdir(in_dir):
        print(f"embed: input directory {in_dir!r} does not exist", file=sys.stderr)
        return EXIT_DATA
    names = sorted(n for n in os.listdir(in_dir) if n.lower().endswith(".pgm"))
    if not names:
        print(f"embed: no .pgm files in {in_dir!r}", file=sys.stderr)
        return EXIT_DATA
    if not (0.0 <= args.val_fraction and 0.0 <= args.test_fraction
            and args.val_fraction + args.test_fraction < 1.0):
        print("embed: --val-fraction/--test-fraction must be >= 0 and sum below 1",
              file=sys.stderr)
        return EXIT_USAGE
    os.makedirs(out_dir, exist_ok=True)

    # deterministic split assignment: shuffle indices once with the run seed
    rng = np.random.Generator(np.random.PCG64([args.seed, len(names)]))
    order = rng.permutation(len(names))
    n_test = int(args.test_fraction * len(names))
    n_val = int(args.val_fraction * len(names))
    split_of = {}
    for rank, idx in enumerate(order):
        if rank < n_test:
            split_of[int(idx)] = "test"
        elif rank < n_test + n_val:
            split_of[int(idx)] = "validation"
        else:
            split_of[int(idx)] = "train"

    entries = []
    failures = 0
    for idx, name in enumerate(names):
        cover_path = os.path.join(in_dir, name)
        stem = os.path.splitext(name)[0]
        stego_path = os.path.join(out_dir, f"{stem}_stego.pgm")
        try:
            cover = data.load_pgm(cover_path)
            seed = int(np.random.SeedSequence([args.seed, idx]).generate_state(1)[0])
            stego = data.embed_simulate(cover, args.payload, seed)
            data.save_pgm(stego_path, stego)
        except (FormatError, DataError, OSError) as exc:
            print(f"embed: {cover_path}: {exc}", file=sys.stderr)
            failures += 1
            continue
        entries.append((stem, os.path.abspath(cover_path), os.path.abspath(stego_path),
                        split_of[idx]))
    data.write_manifest(os.path.join(out_dir, "manifest.txt"), entries)
    print(f"embedded {len(entries)} of {len(names)} images at {args.payload} bpp")
    return EXIT_DATA if failures else EXIT_OK


def _load_split(manifest_path: str, split: str):
    from .data import load_manifest
    from .errors import DataError

    datasets = load_manifest(manifest_path)
    if split not in datasets:
        raise DataError(
            f"manifest {manifest_path!r} has no {split!r} split "
            f"(found: {', '.join(sorted(datasets)) or 'none'})"
        )
    return datasets[split]


def cmd_train(args) -> int:
    from . import zhunet
    from .data import apply_dihedral8, load_manifest
    from .errors import DataError
    from .train import train_loop

    cfg, manifest, out_dir, augment = load_run_config(args.config)
    datasets = load_manifest(manifest)
    for split in ("train", "validation"):
        if split not in datasets:
            raise DataError(f"manifest {manifest!r} has no {split!r} split")
    train_ds = datasets["train"]
    if augment == "dihedral8":
        train_ds = apply_dihedral8(train_ds)

    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "resolved.cfg"), "w", encoding="utf-8") as fh:
        fh.write(_resolved_config_text(cfg, manifest, out_dir, augment))
    metrics_path = os.path.join(out_dir, "metrics.csv")
    if os.path.exists(metrics_path):
        os.remove(metrics_path)  # fresh run, fresh history

    model = zhunet.build_model(
        zhunet.ModelConfig(
            activation_mode=cfg.activation_mode,
            srm_trainable=not cfg.freeze_srm,
            seed=cfg.seed,
        )
    )
    state = train_loop(model, train_ds, datasets["validation"], cfg,
                       metrics_path=metrics_path)
    ckpt_path = os.path.join(out_dir, "best.znet")
    with open(ckpt_path, "wb") as fh:
        fh.write(state.best_checkpoint)
    print(
        f"trained {state.epoch + 1} epochs; best_val_error={state.best_val_error:.6f}; "
        f"checkpoint {ckpt_path}"
    )
    return EXIT_OK


def cmd_eval(args) -> int:
    from .train import evaluate
    from .zhunet import load_checkpoint

    model = load_checkpoint(args.checkpoint)
    dataset = _load_split(args.manifest, args.split)
    error = evaluate(model, dataset)
    print(f"error_rate={error:.6f}")
    return EXIT_OK


def cmd_infer(args) -> int:
    import numpy as np

    from .data import load_pgm
    from .nnops import softmax
    from .tensor import Tensor
    from .zhunet import load_checkpoint

    model = load_checkpoint(args.checkpoint)
    img = load_pgm(args.image)
    batch = Tensor(img.as_array().astype(np.float32)[None, None, :, :])
    logits = model.forward(batch, mode="eval")
    probs = softmax(logits).array[0]
    label = "cover" if int(np.argmax(probs)) == 0 else "stego"
    print(f"{label} p_cover={probs[0]:.6f} p_stego={probs[1]:.6f}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_suite

    results = run_suite(scale=args.scale, seed=args.seed)
    for res in results:
        print(res.line())
    failed = [res.name for res in results if not res.ok]
    if failed:
        print(f"gradcheck failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_dump_features(args) -> int:
    import numpy as np

    from .data import GrayImage, load_pgm, save_pgm
    from .tensor import Tensor
    from .zhunet import load_checkpoint

    model = load_checkpoint(args.checkpoint)
    img = load_pgm(args.image)
    batch = Tensor(img.as_array().astype(np.float32)[None, None, :, :])
    maps = model.dump_feature_maps(batch, args.stage).array[0]  # [C, H, W]
    os.makedirs(args.out_dir, exist_ok=True)
    raw_path = os.path.join(args.out_dir, f"{args.stage}.f32")
    with open(raw_path, "wb") as fh:
        fh.write(np.ascontiguousarray(maps, dtype="<f4").tobytes())
    for ch in range(maps.shape[0]):
        plane = maps[ch]
        lo, hi = float(plane.min()), float(plane.max())
        if hi > lo:
            norm = (plane - lo) * (255.0 / (hi - lo))
        else:
            norm = np.zeros_like(plane)
        out = GrayImage.from_array(np.clip(np.rint(norm), 0, 255).astype(np.uint8))
        save_pgm(os.path.join(args.out_dir, f"{args.stage}_{ch}.pgm"), out)
    print(f"wrote {maps.shape[0]} channel maps and {raw_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser and dispatch
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="stegnet", description=__doc__.split("\n\n")[0])
    parser.add_argument("--threads", type=int, default=None,
                        help="cap BLAS worker threads (1 = deterministic mode); "
                             "env fallback: STEGNET_THREADS")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("embed", help="simulate embedding over a directory of cover PGMs")
    p.add_argument("--in", dest="in_dir", required=True, help="directory of cover .pgm files")
    p.add_argument("--out", dest="out_dir", required=True, help="output directory")
    p.add_argument("--payload", type=float, required=True, help="payload in bits per pixel")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--val-fraction", type=float, default=0.0,
                   help="fraction of pairs assigned to the validation split")
    p.add_argument("--test-fraction", type=float, default=0.0,
                   help="fraction of pairs assigned to the test split")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("train", help="train from a run config file")
    p.add_argument("--config", required=True, help="path to a key = value run config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="error rate of a checkpoint on a manifest split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=["train", "validation", "test"])
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="classify a single PGM image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("gradcheck", help="finite-difference verification of the backward passes")
    p.add_argument("--scale", choices=["ops", "model"], default="ops")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("dump-features", help="write per-channel feature maps of a stage")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--stage", required=True)
    p.add_argument("--out", dest="out_dir", required=True)
    p.set_defaults(func=cmd_dump_features)
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        _apply_thread_cap(args.threads)
    except _UsageError as exc:
        print(f"stegnet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    from .errors import DivergenceError, FormatError, StegnetError

    try:
        return args.func(args)
    except DivergenceError as exc:
        print(f"stegnet: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except FormatError as exc:
        print(f"stegnet: format error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except StegnetError as exc:
        print(f"stegnet: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"stegnet: i/o error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())
