"""Command-line front end: binarize, label, train, infer, eval, compare, synth."""
from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import io
from .classical import MLT_DEFAULTS, mlt, niblack, otsu, sauvola
from .config import ConfigError, RunConfig, default_threads, load_config_file, merge, threshold_params
from .errors import DimensionError
from .evaluation import EvalReport, evaluate_dataset, render_table, reports_to_json, score
from .ihegt import ihegt_binarize
from .labeling import (
    HdadPair,
    CwmfParams,
    Provenance,
    apply_corrections,
    label_pair,
    list_pair_ids,
    load_pair,
    save_pair,
    write_manifest,
)
from .nn import ModelFormatError, TrainConfig, infer, load_model, save_model, train
from .synth import synth_dataset

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_DIMENSION = 4
EXIT_MODEL = 5

CLASSICAL_METHODS = ("otsu", "niblack", "sauvola", "mlt", "ihegt")
ALL_METHODS = CLASSICAL_METHODS + ("cnn",)


def _bool(v) -> bool:
    if isinstance(v, bool):
        return v
    if str(v).lower() in ("1", "true", "yes", "on"):
        return True
    if str(v).lower() in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {v!r}")


# (flag, type, default, help); default None on the parser so an absent flag is distinguishable
Option = tuple[str, Callable, object, str]

COMMON: list[Option] = [("threads", int, None, "worker threads (default: $DRAWBIN_THREADS or 1)")]

THRESHOLD: list[Option] = [
    ("k", float, None, "threshold weight k (method default when omitted)"),
    ("w", int, None, "odd window side (default 17)"),
    ("r", float, None, "Sauvola dynamic range R (default 128)"),
    ("max-iters", int, 100, "IHEGT iteration cap"),
    ("mlt-block", _bool, False, "MLT: normalize the gradient by 256x256 block maxima"),
]

COMMANDS: dict[str, tuple[str, list[Option]]] = {
    "binarize": ("binarize an image or a directory of images", [
        ("in", str, None, "input image or directory"),
        ("out", str, None, "output image or directory"),
        ("method", str, None, "one of " + ", ".join(ALL_METHODS)),
        *THRESHOLD,
        ("model", str, None, "model file for --method cnn"),
    ]),
    "label": ("build a dataset of (source, truth) pairs with MLT + IHEGT + CWMF", [
        ("in", str, None, "directory of source images"),
        ("out", str, None, "dataset directory to create"),
        ("corrections", str, None, "directory of <id>.png correction layers (0 fg, 255 bg, 128 keep)"),
        ("test-fraction", float, 0.0, "share of pairs assigned to the test split"),
        ("seed", int, 0, "seed for the split assignment"),
        ("k", float, MLT_DEFAULTS.k, "MLT k"),
        ("w", int, MLT_DEFAULTS.w, "MLT window side"),
        ("max-iters", int, 100, "IHEGT iteration cap"),
        ("cwmf-window", int, CwmfParams().window, "CWMF window side"),
        ("cwmf-weight", int, CwmfParams().center_weight, "CWMF center weight"),
    ]),
    "train": ("train the CNN binarizer on a dataset directory", [
        ("pairs", str, None, "dataset directory"),
        ("out", str, None, "model file to write"),
        ("split", str, "train", "manifest split to train on ('all' ignores the manifest)"),
        ("epochs", int, 50, "training epochs"),
        ("batch-size", int, 16, "blocks per mini-batch"),
        ("lr", float, 1e-3, "Adam learning rate"),
        ("seed", int, 0, "initialization and shuffling seed"),
        ("in-channels", int, 1, "1 (gray) or 3 (RGB) input channels"),
    ]),
    "infer": ("binarize with a trained model", [
        ("model", str, None, "model file"),
        ("in", str, None, "input image or directory"),
        ("out", str, None, "output image or directory"),
    ]),
    "eval": ("score predicted maps against ground truth", [
        ("pred", str, None, "directory of <id>.png predictions"),
        ("truth", str, None, "dataset directory or directory of <id>.png truths"),
        ("split", str, None, "manifest split of the truth dataset"),
        ("mode", str, "macro", "macro or micro averaging"),
        ("json", str, None, "also write per-image records here"),
        ("per-image", _bool, False, "list every image in the table"),
        ("name", str, "prediction", "method name for the report"),
    ]),
    "compare": ("run several methods on a dataset and tabulate the scores", [
        ("pairs", str, None, "dataset directory"),
        ("methods", str, ",".join(ALL_METHODS), "comma-separated method list"),
        ("model", str, None, "model file, needed for cnn"),
        ("split", str, "test", "manifest split to score ('all' ignores the manifest)"),
        ("mode", str, "macro", "macro or micro averaging"),
        ("json", str, None, "also write per-image records here"),
        ("per-image", _bool, False, "list every image in the table"),
        ("max-iters", int, 100, "IHEGT iteration cap"),
    ]),
    "synth": ("generate a synthetic degraded-drawing dataset with exact masks", [
        ("out", str, None, "dataset directory to create"),
        ("train", int, 20, "number of training pairs"),
        ("test", int, 12, "number of testing pairs"),
        ("seed", int, 1, "seed of the training pairs; testing pairs use seed + 1"),
    ]),
}

REQUIRED = {
    "binarize": ("in", "out", "method"),
    "label": ("in", "out"),
    "train": ("pairs", "out"),
    "infer": ("model", "in", "out"),
    "eval": ("pred", "truth"),
    "compare": ("pairs",),
    "synth": ("out",),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="drawbin", description="Binarization of degraded drawing scans.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True
    for name, (help_text, options) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", help="flat JSON file of option values; flags win")
        for flag, typ, default, h in options + COMMON:
            dest = flag.replace("-", "_")
            if typ is _bool:
                p.add_argument(f"--{flag}", dest=dest, action="store_const", const=True, default=None,
                               help=f"{h} (default {default})")
            else:
                shown = "" if default is None else f" (default {default})"
                p.add_argument(f"--{flag}", dest=dest, type=typ, default=None, help=h + shown)
    return parser


def resolve(argv: Sequence[str]) -> tuple[str, dict]:
    """Parse ``argv`` and merge in ``--config``; returns the command and its option values."""
    ns = vars(build_parser().parse_args(list(argv)))
    command = ns.pop("command")
    config_path = ns.pop("config")
    options = COMMANDS[command][1] + COMMON
    defaults = {flag.replace("-", "_"): default for flag, _, default, _ in options}
    types = {flag.replace("-", "_"): typ for flag, typ, _, _ in options}
    file_values = load_config_file(config_path) if config_path else {}
    values = merge(ns, file_values, defaults)
    for key, typ in types.items():
        if values[key] is not None and not isinstance(values[key], bool if typ is _bool else typ):
            try:
                values[key] = typ(values[key])
            except (TypeError, ValueError) as e:
                raise ConfigError(f"option {key}: {e}") from e
    if values["threads"] is None:
        values["threads"] = default_threads()
    if values["threads"] < 1:
        raise ConfigError("--threads must be at least 1")
    missing = [f"--{k.replace('_', '-')}" for k in REQUIRED[command] if values[k.replace("-", "_")] is None]
    if missing:
        raise ConfigError(f"{command}: missing required option(s) {', '.join(missing)}")
    return command, values


def _map(fn: Callable, items: Sequence, threads: int) -> list:
    if threads <= 1 or len(items) <= 1:
        return [fn(i) for i in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _io_pairs(src: Path, dst: Path) -> list[tuple[Path, Path]]:
    """(input, output) paths for a file-to-file or directory-to-directory run."""
    if src.is_dir():
        if dst.exists() and not dst.is_dir():
            raise ConfigError(f"--out {dst} must be a directory when --in is one")
        return [(p, dst / (p.stem + ".png")) for p in io.list_images(src)]
    return [(src, dst)]


def _check_method(method: str) -> None:
    if method not in ALL_METHODS:
        raise ConfigError(f"unknown method {method!r}; choose from {', '.join(ALL_METHODS)}")


def make_binarizer(method: str, v: dict, threads: int = 1) -> tuple[Callable[[np.ndarray], np.ndarray], int | None]:
    """Binarizer for ``method`` and its trainable parameter count (None for rule-based methods)."""
    _check_method(method)
    if method == "otsu":
        return otsu, None
    if method == "ihegt":
        iters = v.get("max_iters", 100)
        if iters < 1:
            raise ConfigError("--max-iters must be at least 1")
        return (lambda img: ihegt_binarize(img, iters)), None
    if method == "cnn":
        if not v.get("model"):
            raise ConfigError("method cnn needs --model")
        model = load_model(v["model"])
        return (lambda img: infer(model, img, threads)), model.parameter_count()
    p = threshold_params(method, v.get("k"), v.get("w"), v.get("r"))
    if method == "niblack":
        return (lambda img: niblack(img, p)), None
    if method == "sauvola":
        return (lambda img: sauvola(img, p)), None
    block = bool(v.get("mlt_block"))
    return (lambda img: mlt(img, p, block)), None


def cmd_binarize(v: dict) -> RunConfig:
    src, dst = Path(v["in"]), Path(v["out"])
    run = RunConfig("binarize", {"in": src}, {"out": dst}, method=v["method"], threads=v["threads"])
    _check_method(v["method"])
    run.validate_paths()
    jobs = _io_pairs(src, dst)
    # The CNN parallelizes over blocks; the others over images.
    inner = v["threads"] if v["method"] == "cnn" else 1
    fn, _ = make_binarizer(v["method"], v, inner)
    images = [io.read_image(a) for a, _ in jobs]
    maps = _map(fn, images, 1 if v["method"] == "cnn" else v["threads"])
    for (_, b), m in zip(jobs, maps):
        io.write_binary(b, m)
    return run


def cmd_infer(v: dict) -> RunConfig:
    return cmd_binarize({**v, "method": "cnn"})


def _choose_test(ids: list[str], fraction: float, seed: int) -> set[str]:
    if not 0.0 <= fraction <= 1.0:
        raise ConfigError("--test-fraction must lie in [0, 1]")
    n = int(round(fraction * len(ids)))
    rng = np.random.default_rng(seed)
    return {ids[i] for i in rng.choice(len(ids), size=n, replace=False)}


def cmd_label(v: dict) -> RunConfig:
    src, dst = Path(v["in"]), Path(v["out"])
    inputs = {"in": src}
    if v["corrections"]:
        inputs["corrections"] = Path(v["corrections"])
    try:
        cwmf = CwmfParams(v["cwmf_window"], v["cwmf_weight"])
    except ValueError as e:
        raise ConfigError(str(e)) from e
    run = RunConfig("label", inputs, {"out": dst}, threads=v["threads"], seed=v["seed"], cwmf=cwmf)
    run.validate_paths()
    if not src.is_dir():
        raise ConfigError(f"--in {src} must be a directory of images")
    files = io.list_images(src)
    if not files:
        raise FileNotFoundError(f"--in {src} holds no images")
    ids = [p.stem for p in files]
    if len(set(ids)) != len(ids):
        raise ConfigError(f"--in {src}: two images share a file stem")
    layers = {}
    if v["corrections"]:
        for i in ids:
            c = Path(v["corrections"]) / f"{i}.png"
            if c.exists():
                layer = io.read_image(c)
                layers[i] = layer[..., 0] if layer.ndim == 3 else layer
    p = threshold_params("mlt", v["k"], v["w"])
    test = _choose_test(ids, v["test_fraction"], v["seed"])

    def work(item):
        path, pair_id = item
        pair = label_pair(io.read_image(path), pair_id, p, run.cwmf, v["max_iters"])
        if pair_id in layers:
            apply_corrections(pair.truth, layers[pair_id])  # validate before anything is written
        return pair

    pairs = _map(work, list(zip(files, ids)), v["threads"])
    for pair in pairs:
        d = save_pair(dst, pair)
        if pair.id in layers:
            io.write_image(d / "corrections.png", np.asarray(layers[pair.id], dtype=np.uint8))
    write_manifest(dst, {i: "test" if i in test else "train" for i in ids})
    return run


def _dataset(root: Path, split: str | None) -> list[HdadPair]:
    if split in (None, "all"):
        ids = list_pair_ids(root)
    else:
        ids = list_pair_ids(root, split)
    if not ids:
        raise FileNotFoundError(f"{root}: no pairs" + (f" in split {split!r}" if split not in (None, "all") else ""))
    return [load_pair(root, i) for i in ids]


def cmd_train(v: dict) -> RunConfig:
    root, out = Path(v["pairs"]), Path(v["out"])
    try:
        cfg = TrainConfig(v["epochs"], v["batch_size"], v["lr"], v["seed"], v["in_channels"], v["threads"])
    except ValueError as e:
        raise ConfigError(str(e)) from e
    run = RunConfig("train", {"pairs": root}, {"out": out}, training=cfg, seed=v["seed"], threads=v["threads"])
    run.validate_paths()
    pairs = _dataset(root, v["split"])

    def progress(epoch, value):
        print(f"epoch {epoch + 1}/{cfg.epochs} loss {value:.5f}", file=sys.stderr)

    result = train(pairs, cfg, on_epoch=progress)
    save_model(result.model, out)
    return run


def _check_mode(mode: str) -> None:
    if mode not in ("macro", "micro"):
        raise ConfigError(f"--mode must be macro or micro, got {mode!r}")


def _emit(reports: list[EvalReport], v: dict) -> None:
    sys.stdout.write(render_table(reports, v["per_image"]))
    if v["json"]:
        Path(v["json"]).parent.mkdir(parents=True, exist_ok=True)
        Path(v["json"]).write_text(reports_to_json(reports))


def cmd_eval(v: dict) -> RunConfig:
    pred_dir, truth_dir = Path(v["pred"]), Path(v["truth"])
    outputs = {"json": Path(v["json"])} if v["json"] else {}
    run = RunConfig("eval", {"pred": pred_dir, "truth": truth_dir}, outputs, threads=v["threads"])
    run.validate_paths()
    _check_mode(v["mode"])
    if (truth_dir / "pairs").is_dir():
        truths = {p.id: p.truth for p in _dataset(truth_dir, v["split"])}
    else:
        truths = {p.stem: io.read_binary(p) for p in io.list_images(truth_dir)}
    if not truths:
        raise FileNotFoundError(f"--truth {truth_dir}: no ground-truth maps")
    rows = []
    for i in sorted(truths):
        f = pred_dir / f"{i}.png"
        if not f.exists():
            raise FileNotFoundError(f"--pred {pred_dir}: missing prediction {f.name}")
        rows.append(score(i, io.read_binary(f), truths[i]))
    _emit([EvalReport(v["name"], rows, mode=v["mode"])], v)
    return run


def cmd_compare(v: dict) -> RunConfig:
    root = Path(v["pairs"])
    methods = [m.strip() for m in v["methods"].split(",") if m.strip()]
    if not methods:
        raise ConfigError("--methods is empty")
    for m in methods:
        _check_method(m)
    inputs = {"pairs": root}
    if v["model"]:
        inputs["model"] = Path(v["model"])
    outputs = {"json": Path(v["json"])} if v["json"] else {}
    run = RunConfig("compare", inputs, outputs, threads=v["threads"])
    run.validate_paths()
    _check_mode(v["mode"])
    split = v["split"]
    if split not in ("all", None) and not (root / "manifest.json").exists():
        split = "all"
    pairs = _dataset(root, split)
    reports = []
    for m in methods:
        fn, params = make_binarizer(m, v, v["threads"])
        reports.append(evaluate_dataset(fn, pairs, m, params, v["mode"]))
    _emit(reports, v)
    return run


def cmd_synth(v: dict) -> RunConfig:
    out = Path(v["out"])
    if v["train"] < 0 or v["test"] < 0 or v["train"] + v["test"] == 0:
        raise ConfigError("--train and --test must be non-negative and not both zero")
    run = RunConfig("synth", {}, {"out": out}, seed=v["seed"])
    manifest = {}
    for split, count, seed in (("train", v["train"], v["seed"]), ("test", v["test"], v["seed"] + 1)):
        for pair_id, img, mask in synth_dataset(count, seed):
            save_pair(out, HdadPair(pair_id, img, mask, Provenance.CORRECTED))
            manifest[pair_id] = split
    write_manifest(out, manifest)
    return run


HANDLERS = {
    "binarize": cmd_binarize,
    "label": cmd_label,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "compare": cmd_compare,
    "synth": cmd_synth,
}


def main(argv: Sequence[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        command, values = resolve(argv)
        HANDLERS[command](values)
    except SystemExit as e:  # --help
        return int(e.code or 0)
    except ConfigError as e:
        print(f"drawbin: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except DimensionError as e:
        print(f"drawbin: dimension mismatch: {e}", file=sys.stderr)
        return EXIT_DIMENSION
    except ModelFormatError as e:
        print(f"drawbin: bad model file: {e}", file=sys.stderr)
        return EXIT_MODEL
    except OSError as e:
        print(f"drawbin: cannot read input: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (ValueError, TypeError) as e:
        print(f"drawbin: error: {e}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
