"""Command-line entry point: ``msfcn <command> [options]``.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys

import numpy as np

from . import config as cfgio
from . import data, verify
from .errors import ConfigError, DataError, MsfcnError
from .metrics import compute_report
from .net import PRESETS, REFERENCE, NetworkConfig, build_msfcn, count_flops, count_params, load_checkpoint
from .tensor import IGNORE_INDEX, load_tensor, save_tensor
from .train import TrainRunConfig, evaluate, predict, train

log = logging.getLogger("msfcn")

TRAIN_KEYS = {
    "train.batch_size": ("batch_size", cfgio.to_int),
    "train.max_epochs": ("max_epochs", cfgio.to_int),
    "train.patience": ("patience", cfgio.to_int),
    "train.lr": ("lr", cfgio.to_float),
    "train.train_split": ("train_split", lambda k, v: v),
    "train.val_split": ("val_split", lambda k, v: v),
    "train.eval_batch_size": ("eval_batch_size", cfgio.to_int),
}
AUG_KEYS = {
    "aug.transforms": "transforms",
    "aug.prob": "prob",
    "aug.blur_sigma": "blur_sigma",
    "aug.noise_std": "noise_std",
    "aug.gain": "gain",
}
OTHER_KEYS = {"seed", "data.manifest", "run.dir"}


@dataclasses.dataclass
class RunConfig:
    """Everything a training run needs, parsed from flat ``key = value`` text."""

    net: dict
    train: TrainRunConfig
    augment: data.AugmentSpec | None
    manifest: str | None
    run_dir: str | None
    seed: int

    @classmethod
    def from_dict(cls, values: dict) -> "RunConfig":
        net, train_kw, aug_kw = {}, {}, {}
        for key, raw in values.items():
            if key.startswith("net."):
                if key == "net.seed":
                    raise ConfigError("net.seed is not configurable; use seed")
                net[key] = raw
            elif key in TRAIN_KEYS:
                name, conv = TRAIN_KEYS[key]
                train_kw[name] = conv(key, raw)
            elif key in AUG_KEYS:
                name = AUG_KEYS[key]
                if name == "transforms":
                    aug_kw[name] = tuple(p.strip() for p in raw.split(",") if p.strip() and p.strip() != "none")
                elif name == "prob":
                    aug_kw[name] = cfgio.to_float(key, raw)
                else:
                    aug_kw[name] = cfgio.to_float_list(key, raw)
            elif key not in OTHER_KEYS:
                raise ConfigError(f"unknown config key {key!r}")
        seed = cfgio.to_int("seed", values.get("seed", "0"))
        # validate network keys eagerly; manifest-derived fields are filled later
        probe = {"net.in_channels": "1", "net.time_steps": "1", "net.num_classes": "2", **net}
        NetworkConfig.from_dict(probe)
        try:
            augment = data.AugmentSpec(seed=seed, **aug_kw) if aug_kw.get("transforms") else None
            trn = TrainRunConfig(seed=seed, augment=augment, **train_kw)
        except (ValueError, TypeError) as exc:
            raise ConfigError(str(exc)) from None
        return cls(net, trn, augment, values.get("data.manifest"), values.get("run.dir"), seed)

    def network_config(self, manifest: data.DatasetManifest | None = None) -> NetworkConfig:
        values = dict(self.net)
        if manifest is not None:
            values.setdefault("net.in_channels", str(manifest.channels))
            values.setdefault("net.time_steps", str(manifest.time_steps))
            values.setdefault("net.num_classes", str(manifest.num_classes))
        values["net.seed"] = str(self.seed)
        return NetworkConfig.from_dict(values)

    def echo(self, net_cfg: NetworkConfig) -> dict:
        out = {"seed": self.seed, "data.manifest": self.manifest, "run.dir": self.run_dir}
        out.update({k: v for k, v in net_cfg.to_dict().items() if k != "net.seed"})
        for key, (name, _) in TRAIN_KEYS.items():
            out[key] = getattr(self.train, name)
        if self.augment is not None:
            for key, name in AUG_KEYS.items():
                out[key] = getattr(self.augment, name)
        return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _floats(text):
    return tuple(float(v) for v in text.split(","))


def _shape(text):
    try:
        return tuple(int(v) for v in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"bad extents {text!r}; expected e.g. 3x1x256x256") from None


# -- commands ------------------------------------------------------------------

def cmd_synth(args):
    if args.kind == "shapes":
        m = data.synth_shapes(args.out, args.n, args.size, args.classes, args.seed, channels=args.channels)
    else:
        m = data.synth_temporal(args.out, args.n, args.size, args.t, args.seed, channels=args.channels)
    print(f"wrote {len(m.entries)} image/label pairs and manifest.csv to {args.out}")


def cmd_tile(args):
    image = load_tensor(args.image)
    label = load_tensor(args.label)
    if image.ndim == 2:
        image = image[None, None]
    elif image.ndim == 3:
        image = image[:, None]
    if args.mask:
        label = data.apply_region_mask(label, data.read_rects(args.mask), keep=args.mask_keep)
    patches = data.tile_patches(image, label, args.patch)
    os.makedirs(args.out, exist_ok=True)
    stem = os.path.splitext(os.path.basename(args.image))[0]
    entries = []
    for img, lbl, (r, c) in patches:
        img_name, lbl_name = f"{stem}_r{r:03d}_c{c:03d}.tns", f"{stem}_r{r:03d}_c{c:03d}_lbl.tns"
        save_tensor(np.ascontiguousarray(img), os.path.join(args.out, img_name))
        save_tensor(np.ascontiguousarray(lbl), os.path.join(args.out, lbl_name))
        entries.append(data.Entry(img_name, lbl_name, args.split))
    valid = label[label != IGNORE_INDEX]
    k = args.num_classes or (int(valid.max()) + 1 if valid.size else 2)
    manifest = data.DatasetManifest(os.path.abspath(args.out), entries, k, image.shape[0], image.shape[1],
                                    patch_size=args.patch, granularity="patch")
    manifest.save(os.path.join(args.out, "manifest.csv"))
    rows = max(r for _, _, (r, _) in patches) + 1
    cols = len(patches) // rows
    print(f"{len(patches)} patches ({rows} rows x {cols} cols) written to {args.out}")


def cmd_split(args):
    manifest = data.DatasetManifest.load(args.manifest)
    out = data.split_dataset(manifest, _floats(args.frac), args.seed, args.granularity)
    out.save(args.out or args.manifest)
    counts = {s: len(out.split(s)) for s in data.SPLITS}
    print(" ".join(f"{k}={v}" for k, v in counts.items()))


def _load_run_config(args) -> dict:
    values = cfgio.read_config(args.config) if args.config else {}
    for item in args.set or ():
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = (s.strip() for s in item.split("=", 1))
        values[k] = v
    if args.seed is not None:
        values["seed"] = str(args.seed)
    if args.manifest:
        values["data.manifest"] = args.manifest
    if args.out:
        values["run.dir"] = args.out
    return values


def cmd_train(args):
    run = RunConfig.from_dict(_load_run_config(args))
    if not run.manifest:
        raise ConfigError("data.manifest is required")
    if not run.run_dir:
        raise ConfigError("run.dir is required (or pass --out)")
    manifest = data.DatasetManifest.load(run.manifest)
    net_cfg = run.network_config(manifest)
    if (net_cfg.in_channels, net_cfg.time_steps) != (manifest.channels, manifest.time_steps):
        raise ConfigError("network (in_channels, time_steps) disagree with the manifest")
    os.makedirs(run.run_dir, exist_ok=True)
    cfgio.write_config(run.echo(net_cfg), os.path.join(run.run_dir, "config.txt"))
    run.train.checkpoint_dir = os.path.join(run.run_dir, "best")
    net = build_msfcn(net_cfg)
    log_path = os.path.join(run.run_dir, "train.log")
    with open(log_path, "w") as fh:
        def on_epoch(_, line):
            fh.write(line + "\n")
            fh.flush()
            print(line)
        result = train(net, manifest, run.train, on_epoch=on_epoch)
    print(f"best val_oa={result.best_score:.6f} at epoch {result.best_epoch}; checkpoint in {run.train.checkpoint_dir}")


def cmd_eval(args):
    net = load_checkpoint(args.checkpoint)
    manifest = data.DatasetManifest.load(args.manifest)
    images, labels = manifest.load_split(args.split)
    cm = evaluate(net, images, labels)
    if cm.total == 0:
        raise DataError(f"split {args.split!r} has no labeled pixels")
    report = compute_report(cm)
    os.makedirs(args.out, exist_ok=True)
    report.to_csv(os.path.join(args.out, "report.csv"))
    cm.to_csv(os.path.join(args.out, "confusion.csv"))
    cfgio.write_config({k: f"{v:.10g}" for k, v in report.summary().items()},
                       os.path.join(args.out, "summary.txt"))
    print("  ".join(f"{k}={100 * v:.3f}" for k, v in report.summary().items()))


def cmd_predict(args):
    net = load_checkpoint(args.checkpoint)
    image = load_tensor(args.image)
    if image.ndim == 3:
        image = image[:, None]
    labels = predict(net, image)
    save_tensor(labels, args.out)
    print(f"wrote {labels.shape[0]}x{labels.shape[1]} label map to {args.out}")


def cmd_gradcheck(args):
    seeds = tuple(args.seed + i for i in range(args.seeds))
    names = args.ops.split(",") if args.ops else None
    if names:
        unknown = [n for n in names if n not in verify.CHECKS]
        if unknown:
            raise ConfigError(f"unknown op {unknown[0]!r}; choose from {', '.join(verify.CHECKS)}")
    results = verify.run_suite(seeds, names)
    print(verify.format_table(results))
    ok = all(err <= verify.TOLERANCE for err in results.values())
    print(f"overall: {'PASS' if ok else 'FAIL'} (tolerance {verify.TOLERANCE:g}, seeds {seeds})")
    return 0 if ok else 3


def summary_lines(cfg: NetworkConfig, input_shape, reference=None):
    net = build_msfcn(cfg)
    n = count_params(net)
    flops = count_flops(net, input_shape)
    lines = [f"input: {'x'.join(map(str, input_shape))}",
             f"parameters: {n} ({n / 1e6:.3f} M)"]
    if reference:
        gap = n / 1e6 / reference["params_m"] - 1
        lines.append(f"reference parameters: {reference['params_m']} M (gap {100 * gap:+.1f}%)")
    lines.append(f"conv MACs: {flops['conv_macs_g']:.3f} G")
    lines.append(f"total (MACs + element ops): {flops['total_g']:.3f} G")
    if reference and reference.get("complexity_g"):
        lines.append(f"reference complexity: {reference['complexity_g']} G (convention not stated)")
    lines.append(f"convention: {flops['convention']}")
    return lines


def cmd_summary(args):
    reference = None
    if args.config in PRESETS:
        cfg = NetworkConfig(**PRESETS[args.config], seed=args.seed)
        reference = REFERENCE[args.config]
        default_input = reference["input"]
    else:
        run = RunConfig.from_dict(cfgio.read_config(args.config))
        cfg = run.network_config()
        default_input = None
    input_shape = _shape(args.input) if args.input else default_input
    if input_shape is None:
        raise ConfigError("--input is required for custom configs")
    if len(input_shape) != 4:
        raise ConfigError("--input takes c x t x h x w")
    for line in summary_lines(cfg, input_shape, reference):
        print(line)


# -- parser --------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="msfcn", description="Multi-scale FCN for land cover segmentation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--kind", choices=("shapes", "temporal"), default="shapes")
    s.add_argument("--n", type=int, default=8)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--classes", type=int, default=4)
    s.add_argument("--t", type=int, default=4)
    s.add_argument("--channels", type=int, default=None)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("tile", help="pad and cut an image/label pair into patches")
    s.add_argument("--image", required=True)
    s.add_argument("--label", required=True)
    s.add_argument("--patch", type=int, default=256)
    s.add_argument("--out", required=True)
    s.add_argument("--mask", help="CSV of x0,y0,x1,y1 rectangles")
    s.add_argument("--mask-keep", choices=("inside", "outside"), default="inside")
    s.add_argument("--num-classes", type=int, default=None)
    s.add_argument("--split", choices=data.SPLITS, default="train")
    s.set_defaults(func=cmd_tile)

    s = sub.add_parser("split", help="assign train/val/test splits")
    s.add_argument("--manifest", required=True)
    s.add_argument("--frac", default="0.6,0.2,0.2")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--granularity", choices=("image", "patch"), default=None)
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_split)

    s = sub.add_parser("train", help="train a network")
    s.add_argument("--config")
    s.add_argument("--manifest")
    s.add_argument("--out", help="run directory")
    s.add_argument("--seed", type=int)
    s.add_argument("--set", action="append", metavar="KEY=VALUE")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="score a checkpoint on a manifest split")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--manifest", required=True)
    s.add_argument("--split", default="test")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("predict", help="label one image")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--image", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--seeds", type=int, default=3)
    s.add_argument("--ops", help="comma-separated subset")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("summary", help="parameter and MAC counts")
    s.add_argument("--config", default="2d_default", help="preset name or config file")
    s.add_argument("--input", help="c x t x h x w, e.g. 3x1x256x256")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_summary)
    return p


def _thread_limit():
    raw = os.environ.get("MSFCN_THREADS")
    if not raw:
        return None
    try:
        from threadpoolctl import threadpool_limits
        return threadpool_limits(int(raw))
    except ValueError:
        raise ConfigError(f"MSFCN_THREADS must be an integer, got {raw!r}") from None


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if getattr(args, "channels", 0) is None:
        args.channels = 3 if args.kind == "shapes" else 4
    try:
        _thread_limit()
        code = args.func(args)
    except MsfcnError as exc:
        print(f"msfcn {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, KeyError) as exc:
        print(f"msfcn {args.command}: {exc}", file=sys.stderr)
        return 2
    return code or 0


if __name__ == "__main__":
    sys.exit(main())
