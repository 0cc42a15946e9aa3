"""Command-line front end for the two-stage pipeline.

Subcommands chain through directories of PNG images and ``.prle`` tensor
files::

    prle synth      --out data/                    # planted-shortcut images + labels.csv
    prle zoo-train  --images data/ --out zoo/
    prle cam        --zoo zoo/ --images data/ --out cams/
    prle fuse       --cams cams/ --out fused/
    prle mask       --fused fused/ --alpha 0.5 --out masks/
    prle augment    --images data/ --fused fused/ --out aug/
    prle train-demo --prle on --seed 7 --out stats.csv
    prle stats      --masks masks/

Exit status: 0 on success, 1 on a usage error, 2 on an I/O or file-format error.
Usage errors are detected before anything is written.
"""

import argparse
import csv
import io
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, PipelineConfig
from .data import Dataset, generate_synthetic_dataset
from .exploitation import dynamic_augment, occlusion_mask
from .fusion import fuse, format_ratio, primary_region_ratio, to_binary_mask
from .tensor_io import (
    ImageFormatError,
    TensorFormatError,
    load_params,
    read_image_png,
    read_mask_png,
    read_tensor,
    save_params,
    write_image_png,
    write_mask_png,
    write_tensor,
)
from .trainer import TrainConfig, fit, sample_augmentation, stats_to_csv
from .zoo import attention_maps, static_localization, train_zoo

EXIT_OK, EXIT_USAGE, EXIT_IO = 0, 1, 2
LABELS_FILE = "labels.csv"
ZOO_MANIFEST = "zoo.json"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 by default; usage problems are status 1 here
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------- helpers


def _pick(flag, cfg, name):
    return getattr(cfg, name) if flag is None else flag


def _int_list(text):
    try:
        return tuple(int(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _unit_interval(text):
    v = float(text)
    if not 0.0 < v <= 1.0:
        raise argparse.ArgumentTypeError(f"alpha must lie in (0, 1], got {v}")
    return v


def _existing_dir(path, what):
    p = Path(path)
    if not p.is_dir():
        raise FileNotFoundError(f"{what} directory not found: {path}")
    return p


def _png_files(directory):
    files = sorted(p for p in Path(directory).iterdir() if p.suffix.lower() == ".png")
    if not files:
        raise FileNotFoundError(f"no PNG images in {directory}")
    return files


def _tensor_files(directory):
    files = sorted(p for p in Path(directory).glob("*.prle"))
    if not files:
        raise FileNotFoundError(f"no .prle tensors in {directory}")
    return files


def _gray(image):
    """Detector input: RGB images are reduced to their channel mean."""
    return image.mean(axis=2) if image.ndim == 3 else image


def _read_images(directory):
    files = _png_files(_existing_dir(directory, "image"))
    return files, [read_image_png(f) for f in files]


def _read_labels(directory, files):
    path = Path(directory) / LABELS_FILE
    if not path.is_file():
        raise FileNotFoundError(f"{path} is required for training")
    with open(path, newline="") as fh:
        rows = {r["file"]: int(r["label"]) for r in csv.DictReader(fh)}
    missing = [f.name for f in files if f.name not in rows]
    if missing:
        raise ImageFormatError(f"{LABELS_FILE} lacks labels for {missing[:3]}")
    return np.array([rows[f.name] for f in files], dtype=np.int64)


def _load_dataset(directory):
    files, images = _read_images(directory)
    shapes = {im.shape[:2] for im in images}
    if len(shapes) != 1:
        raise ImageFormatError("training images must share one size")
    stack = np.stack([_gray(im) for im in images])
    labels = _read_labels(directory, files)
    return files, Dataset(stack, labels, np.zeros(len(labels), dtype=bool))


def _fused_for(files, fused_dir):
    """Fused maps matched to image files by stem."""
    fused_dir = _existing_dir(fused_dir, "fused map")
    out = []
    for f in files:
        t = fused_dir / f"{f.stem}.prle"
        if not t.is_file():
            raise FileNotFoundError(f"no fused map for {f.name} in {fused_dir}")
        arr = read_tensor(t).astype(np.float64)
        if arr.ndim != 2:
            raise TensorFormatError(f"{t} must hold a 2-D fused map, got shape {arr.shape}")
        out.append(arr)
    return out


def _write_text(path, text):
    with open(path, "w", newline="") as fh:
        fh.write(text)


def _overlay(image, mask):
    """RGB preview: masked pixels tinted red."""
    base = np.repeat(_gray(image)[:, :, None], 3, axis=2)
    m = mask.astype(bool)
    base[m] = 0.5 * base[m] + 0.5 * np.array([1.0, 0.0, 0.0])
    return base


# ---------------------------------------------------------------- commands


def cmd_synth(args, cfg):
    dcfg = cfg.synthetic(
        n_examples=_pick(args.n, cfg, "n_examples"),
        side=_pick(args.side, cfg, "side"),
        rho=_pick(args.rho, cfg, "rho"),
        signal_strength=_pick(args.signal, cfg, "signal_strength"),
        noise_amplitude=_pick(args.noise, cfg, "noise_amplitude"),
        seed=_pick(args.seed, cfg, "seed"),
    )
    try:
        dcfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc))
    data = generate_synthetic_dataset(dcfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    width = max(5, len(str(len(data) - 1)))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["file", "label", "has_patch"])
    for i in range(len(data)):
        name = f"{i:0{width}d}.png"
        write_image_png(out / name, data.images[i])
        writer.writerow([name, int(data.labels[i]), int(data.has_patch[i])])
    _write_text(out / LABELS_FILE, buf.getvalue())
    return EXIT_OK


def cmd_zoo_train(args, cfg):
    zcfg = replace(
        cfg.zoo(),
        size=_pick(args.size, cfg, "zoo_size"),
        epochs=_pick(args.epochs, cfg, "zoo_epochs"),
        learning_rate=_pick(args.lr, cfg, "zoo_learning_rate"),
        batch_size=_pick(args.batch_size, cfg, "zoo_batch_size"),
        seed=_pick(args.seed, cfg, "seed"),
    )
    if args.channels is not None:
        zcfg = replace(zcfg, channels=args.channels)
    if args.seeds is not None:
        zcfg = replace(zcfg, seeds=args.seeds)
    if zcfg.size < 1 or (zcfg.seeds is not None and len(zcfg.seeds) != zcfg.size):
        raise UsageError("--size must be >= 1 and --seeds must list one seed per member")
    if not zcfg.channels or min(zcfg.channels) < 1:
        raise UsageError("--channels must list positive integers")
    try:
        TrainConfig(
            learning_rate=zcfg.learning_rate, epochs=zcfg.epochs, batch_size=zcfg.batch_size
        ).validate()
    except ValueError as exc:
        raise UsageError(str(exc))
    _, data = _load_dataset(args.images)
    members = train_zoo(data, zcfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for t, params in enumerate(members):
        name = f"member_{t:02d}"
        save_params(out / name, params)
        entries.append(
            {"dir": name, "seed": zcfg.member_seed(t), "channels": zcfg.member_channels(t)}
        )
    manifest = {"size": zcfg.size, "members": entries}
    _write_text(out / ZOO_MANIFEST, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def _load_zoo(directory):
    directory = _existing_dir(directory, "zoo")
    manifest = json.loads((directory / ZOO_MANIFEST).read_text())
    return [load_params(directory / m["dir"]) for m in manifest["members"]]


def cmd_cam(args, cfg):
    members = _load_zoo(args.zoo)
    files, images = _read_images(args.images)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for f, image in zip(files, images):
        maps = attention_maps(members, _gray(image)[None])[0]
        write_tensor(out / f"{f.stem}.prle", maps)
    return EXIT_OK


def cmd_fuse(args, cfg):
    fcfg = replace(
        cfg.fusion(),
        strategy=_pick(args.strategy, cfg, "strategy"),
        tau1=_pick(args.tau1, cfg, "tau1"),
        lam=_pick(args.lam, cfg, "lam"),
        neighborhood=_pick(args.neighborhood, cfg, "neighborhood"),
        include_center=cfg.include_center and not args.exclude_center,
    )
    try:
        fcfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc))
    files = _tensor_files(_existing_dir(args.cams, "attention map"))
    zoos = []
    for f in files:
        arr = read_tensor(f).astype(np.float64)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3:
            raise TensorFormatError(f"{f} must hold a T x H x W map stack, got shape {arr.shape}")
        zoos.append(arr)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for f, zoo in zip(files, zoos):
        write_tensor(out / f.name, fuse(zoo, fcfg))
    return EXIT_OK


def cmd_mask(args, cfg):
    files = _tensor_files(_existing_dir(args.fused, "fused map"))
    fused = []
    for f in files:
        arr = read_tensor(f).astype(np.float64)
        if arr.ndim != 2:
            raise TensorFormatError(f"{f} must hold a 2-D fused map, got shape {arr.shape}")
        fused.append(arr)
    images = None
    if args.images is not None:
        img_dir = _existing_dir(args.images, "image")
        images = []
        for f in files:
            p = img_dir / f"{f.stem}.png"
            if not p.is_file():
                raise FileNotFoundError(f"no image {p.name} in {img_dir}")
            image = read_image_png(p)
            if image.shape[:2] != fused[len(images)].shape:
                raise ImageFormatError(f"{p.name}: image and fused map differ in size")
            images.append(image)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, (f, fm) in enumerate(zip(files, fused)):
        m = occlusion_mask(fm, args.alpha)
        write_mask_png(out / f"{f.stem}.png", m)
        write_tensor(out / f"{f.stem}.prle", m)
        if images is not None:
            write_image_png(out / f"{f.stem}_overlay.png", _overlay(images[i], m))
    return EXIT_OK


def cmd_augment(args, cfg):
    p = _pick(args.p, cfg, "p")
    lo = _pick(args.alpha_lo, cfg, "alpha_lo")
    hi = _pick(args.alpha_hi, cfg, "alpha_hi")
    if not 0.0 <= p <= 1.0 or not 0.0 <= lo < hi <= 1.0:
        raise UsageError("need 0 <= p <= 1 and 0 <= alpha-lo < alpha-hi <= 1")
    files, images = _read_images(args.images)
    fused = _fused_for(files, args.fused)
    rng = np.random.default_rng(_pick(args.seed, cfg, "seed"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["file", "masked", "alpha"])
    for f, image, fm in zip(files, images, fused):
        d = sample_augmentation(rng, p, (lo, hi))
        result = dynamic_augment(image, fm, d.alpha) if d.masked else image
        write_image_png(out / f.name, result)
        writer.writerow([f.name, int(d.masked), "" if d.alpha is None else repr(d.alpha)])
    _write_text(out / "decisions.csv", buf.getvalue())
    return EXIT_OK


def cmd_train_demo(args, cfg):
    seed = _pick(args.seed, cfg, "seed")
    cfg = replace(
        cfg,
        seed=seed,
        epochs=_pick(args.epochs, cfg, "epochs"),
        learning_rate=_pick(args.lr, cfg, "learning_rate"),
        batch_size=_pick(args.batch_size, cfg, "batch_size"),
        p=_pick(args.p, cfg, "p"),
        gamma=_pick(args.gamma, cfg, "gamma"),
        n_examples=_pick(args.n, cfg, "n_examples"),
        zoo_epochs=_pick(args.zoo_epochs, cfg, "zoo_epochs"),
    )
    try:
        cfg.validate()
    except ConfigError as exc:
        raise UsageError(str(exc))
    enabled = args.prle == "on"
    tcfg = cfg.train(prle_enabled=enabled)
    if args.fused is not None and args.images is None:
        raise UsageError("--fused needs --images")

    eval_sets = {}
    if args.images is not None:
        files, train = _load_dataset(args.images)
        fused = None
        if enabled and tcfg.p > 0:
            if args.fused is None:
                raise UsageError("--prle on with --images needs --fused")
            fused = np.stack(_fused_for(files, args.fused))
        if args.test_images is not None:
            _, eval_sets["test"] = _load_dataset(args.test_images)
    else:
        train = generate_synthetic_dataset(cfg.synthetic(rho=1.0))
        eval_sets["test"] = generate_synthetic_dataset(cfg.synthetic(rho=0.5, seed=seed + 100))
        fused = None
        if enabled and tcfg.p > 0:
            fused, _ = static_localization(train, cfg.zoo(), cfg.fusion())

    params, history = fit(tcfg, train, eval_sets=eval_sets, fused_maps=fused)
    text = stats_to_csv(history)
    if args.out is None:
        sys.stdout.write(text)
    else:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        _write_text(args.out, text)
    if args.save_params is not None:
        save_params(args.save_params, params)
    return EXIT_OK


def cmd_stats(args, cfg):
    if (args.masks is None) == (args.fused is None):
        raise UsageError("give exactly one of --masks or --fused")
    rows = []
    if args.masks is not None:
        for f in _png_files(_existing_dir(args.masks, "mask")):
            if f.stem.endswith("_overlay"):
                continue
            rows.append((f.name, primary_region_ratio(read_mask_png(f))))
    else:
        for f in _tensor_files(_existing_dir(args.fused, "fused map")):
            arr = read_tensor(f)
            if arr.ndim != 2:
                raise TensorFormatError(f"{f} must hold a 2-D fused map, got shape {arr.shape}")
            rows.append((f.name, primary_region_ratio(to_binary_mask(arr))))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["file", "primary_pct", "complement_pct"])
    for name, r in rows:
        writer.writerow([name, format_ratio(r), format_ratio(100.0 - r)])
    mean = float(np.mean([r for _, r in rows]))
    writer.writerow(["mean", format_ratio(mean), format_ratio(100.0 - mean)])
    text = buf.getvalue()
    if args.out is None:
        sys.stdout.write(text)
    else:
        _write_text(args.out, text)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser():
    parser = _Parser(prog="prle", description="Primary-region localization and exploitation pipeline.")
    parser.add_argument("--config", help="JSON file with pipeline settings (all keys optional)")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--seed", type=int, default=None, help="seed for all randomness")
        p.set_defaults(func=func)
        return p

    p = add("synth", cmd_synth, "write a planted-shortcut image set with labels.csv")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int)
    p.add_argument("--side", type=int)
    p.add_argument("--rho", type=float, help="patch/label correlation in [0, 1]")
    p.add_argument("--signal", type=float, help="ramp strength")
    p.add_argument("--noise", type=float, help="noise amplitude")

    p = add("zoo-train", cmd_zoo_train, "train the detector zoo on labelled images")
    p.add_argument("--images", required=True, help="directory of PNGs plus labels.csv")
    p.add_argument("--out", required=True)
    p.add_argument("--size", type=int, help="number of detectors (default 3)")
    p.add_argument("--channels", type=_int_list, help="comma-separated channel counts, cycled over members")
    p.add_argument("--seeds", type=_int_list, help="comma-separated per-member seeds")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)

    p = add("cam", cmd_cam, "write a T x H x W attention tensor per image")
    p.add_argument("--zoo", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)

    p = add("fuse", cmd_fuse, "fuse attention tensors into one map per image")
    p.add_argument("--cams", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--strategy", choices=("average", "neighboring"))
    p.add_argument("--tau1", type=float)
    p.add_argument("--lambda", dest="lam", type=float)
    p.add_argument("--neighborhood", type=int, choices=(4, 8))
    p.add_argument("--exclude-center", action="store_true", help="leave the centre out of the value max")

    p = add("mask", cmd_mask, "top-alpha occlusion masks (PNG and tensor) from fused maps")
    p.add_argument("--fused", required=True)
    p.add_argument("--alpha", type=_unit_interval, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--images", help="also write <name>_overlay.png previews")

    p = add("augment", cmd_augment, "one stochastic masking pass over an image set")
    p.add_argument("--images", required=True)
    p.add_argument("--fused", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--p", type=float, help="masking probability")
    p.add_argument("--alpha-lo", type=float)
    p.add_argument("--alpha-hi", type=float)

    p = add("train-demo", cmd_train_demo, "train a detector with or without masking, CSV stats per epoch")
    p.add_argument("--prle", choices=("on", "off"), required=True)
    p.add_argument("--out", help="CSV path (stdout when omitted)")
    p.add_argument("--images", help="labelled training images; synthetic data when omitted")
    p.add_argument("--fused", help="fused maps matching --images")
    p.add_argument("--test-images", help="labelled evaluation images")
    p.add_argument("--save-params", help="directory for the trained parameters")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--p", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--n", type=int, help="synthetic training set size")
    p.add_argument("--zoo-epochs", type=int)

    p = add("stats", cmd_stats, "primary-region percentages, two decimals")
    p.add_argument("--masks", help="directory of mask PNGs")
    p.add_argument("--fused", help="directory of fused map tensors")
    p.add_argument("--out", help="CSV path (stdout when omitted)")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
        return args.func(args, cfg)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"prle: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, KeyError) as exc:
        # missing files, unreadable images, malformed tensors or manifests
        print(f"prle: {exc}", file=sys.stderr)
        return EXIT_IO
    except SystemExit as exc:  # --help
        return exc.code or EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
