"""Command-line entry point: ``scalefuse <subcommand> --config <path> ...``.

Exit codes: 0 success, 1 usage error, 2 data/config error, 3 numerical abort.
"""

import argparse
import csv
import io
import logging
import sys
from pathlib import Path

import numpy as np

from . import config, evaluation, fusion, heatmap, synth, tensor, training

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("scalefuse")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_config(args) -> config.Config:
    cfg = config.load(args.config)
    if getattr(args, "out", None):
        cfg = cfg.with_overrides(out_dir=str(Path(args.out)))
    return cfg


def _splits(cfg):
    try:
        return (synth.load_all(synth.read_manifest(cfg.data_root, "train")),
                synth.load_all(synth.read_manifest(cfg.data_root, "val")))
    except (OSError, ValueError) as e:
        raise DataError(f"{e} (run gen-data first?)") from e


def _load_ckpt(path) -> training.TrainState:
    try:
        return training.load_checkpoint(path)
    except (OSError, tensor.FormatError, KeyError, ValueError) as e:
        raise DataError(f"cannot load checkpoint {path}: {e}") from e


def _write_loss_log(history, path: Path):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", "cls", "mac", "total"])
    for it, cls, mac, tot in history:
        w.writerow([it, repr(float(cls)), repr(float(mac)), repr(float(tot))])
    path.write_text(buf.getvalue(), encoding="utf-8")


# -- subcommands -----------------------------------------------------------------


def cmd_gen_data(args, cfg):
    synth.generate(cfg.data_root, cfg.seed, cfg.n_train, cfg.n_val)
    print(f"wrote {cfg.n_train} train / {cfg.n_val} val samples to {cfg.data_root}")


def cmd_pretrain(args, cfg):
    train, _ = _splits(cfg)
    state = training.pretrain_state(train, cfg.hyperparams("pretrain"))
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    training.save_checkpoint(state, out / "pretrained.ckpt")
    _write_loss_log(state.history, out / "pretrain_loss.csv")
    print(f"wrote {out / 'pretrained.ckpt'}")


def cmd_selftrain(args, cfg):
    train, _ = _splits(cfg)
    src = _load_ckpt(args.from_ckpt)
    hp = cfg.hyperparams("selftrain")
    if src.teacher is not None:
        raise DataError(f"{args.from_ckpt} is already a self-training checkpoint")
    state = training.self_train(src.student, train, hp)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    training.save_checkpoint(state, out / "selftrained.ckpt")
    _write_loss_log(state.history, out / "selftrain_loss.csv")
    print(f"wrote {out / 'selftrained.ckpt'}")


def cmd_eval(args, cfg):
    _, val = _splits(cfg)
    params = _load_ckpt(args.ckpt).student
    miou, cm = evaluation.evaluate(params, val, "threshold", cfg.thr)
    out = Path(cfg.out_dir) / "eval" / Path(args.ckpt).stem
    maps = out / "heatmaps"
    maps.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["class", "iou"])
    for name, v in zip(synth.CLASS_NAMES, evaluation.iou_per_class(cm)):
        w.writerow([name, "" if np.isnan(v) else f"{100 * v:.4f}"])
    w.writerow(["mean", f"{miou:.4f}"])
    (out / "miou.csv").write_text(buf.getvalue(), encoding="utf-8")
    attn = evaluation.student_attention(params, np.stack([s.image for s in val]))
    for i, (a, s) in enumerate(zip(attn, val)):
        heatmap.write_image(s.image, maps / f"{i}.image.ppm")
        for k in np.flatnonzero(s.labels) + 1:
            heatmap.write_heatmap(a[k], maps / f"{i}.{synth.CLASS_NAMES[k]}.ppm")
    print(f"mIoU {miou:.2f}  ({out / 'miou.csv'})")


def _fuse_labels(args, image_path: Path):
    if args.labels is not None:
        try:
            y = np.array([int(v) for v in args.labels.split(",")], dtype=np.int64)
        except ValueError:
            raise UsageError(f"--labels expects comma-separated 0/1 flags, got {args.labels!r}") from None
        if y.size != synth.NUM_CLASSES or not np.isin(y, (0, 1)).all():
            raise UsageError(f"--labels needs {synth.NUM_CLASSES} flags of 0 or 1, got {args.labels!r}")
        return y
    name = image_path.name
    if not name.endswith(".img.smt1"):
        raise UsageError("--labels is required unless --image is a dataset image with a sibling mask")
    mask_path = image_path.with_name(name[: -len(".img.smt1")] + ".msk.smt1")
    try:
        return synth.labels_from_mask(tensor.load(mask_path)[0].astype(np.int64))
    except (OSError, tensor.FormatError) as e:
        raise DataError(f"cannot derive labels from {mask_path}: {e}") from e


def cmd_fuse(args, cfg):
    image_path = Path(args.image)
    labels = _fuse_labels(args, image_path)
    try:
        image = tensor.load(image_path)
    except (OSError, tensor.FormatError) as e:
        raise DataError(f"cannot load image {image_path}: {e}") from e
    if image.shape[0] != 3:
        raise DataError(f"{image_path}: expected a 3-channel image, got shape {image.shape}")
    teacher = _load_ckpt(args.ckpt).student
    maps = fusion.scale_maps(teacher, image, cfg.scales)
    fused = fusion.fuse_scales(maps, image.shape[1:])
    denoised = fusion.denoise(fused, labels)
    stages = {"fused": fused, "denoised": denoised, "reactivated": fusion.reactivate(denoised, cfg.thr)}
    stem = image_path.name.split(".")[0]
    out = Path(cfg.out_dir) / "fuse" / stem
    out.mkdir(parents=True, exist_ok=True)
    heatmap.write_image(image, out / "image.ppm")
    for stage, m in stages.items():
        tensor.save(m, out / f"{stage}.smt1")
        for k, name in enumerate(synth.CLASS_NAMES[: m.shape[0]]):
            heatmap.write_heatmap(m[k], out / f"{stage}.{name}.ppm")
    print(f"wrote fusion stages to {out}")


def cmd_ablate(args, cfg):
    try:
        seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    except ValueError:
        raise UsageError(f"--seeds expects comma-separated integers, got {args.seeds!r}") from None
    if len(seeds) < 3:
        raise UsageError("--seeds needs at least 3 seeds")
    train, val = _splits(cfg)
    report = evaluation.run_ablation_suite(train, val, cfg, seeds, workers=cfg.workers)
    out = Path(cfg.out_dir) / "ablation"
    report.write(out)
    sys.stdout.write(report.summary())


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="scalefuse", description="Multi-scale attention fusion self-training on synthetic shapes.")
    p.add_argument("-v", "--verbose", action="store_true", help="log training progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)
    sub.required = True

    def add(name, fn, help):
        sp = sub.add_parser(name, help=help, description=help)
        sp.add_argument("--config", required=True, help="key = value configuration file")
        sp.add_argument("--out", help="output directory (overrides out_dir)")
        sp.set_defaults(fn=fn)
        return sp

    add("gen-data", cmd_gen_data, "generate the synthetic dataset under data_root")
    add("pretrain", cmd_pretrain, "classification-only pretraining; writes pretrained.ckpt")
    sp = add("selftrain", cmd_selftrain, "frozen-teacher self-training; writes selftrained.ckpt and a loss log")
    sp.add_argument("--from", dest="from_ckpt", required=True, help="pretrained checkpoint")
    sp = add("eval", cmd_eval, "pseudo-label mIoU on the val split plus attention heatmaps")
    sp.add_argument("--ckpt", required=True)
    sp = add("fuse", cmd_fuse, "write fused, denoised and reactivated teacher maps for one image")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--image", required=True, help="SMT1 image (3 x H x W)")
    sp.add_argument("--labels", help="image-level labels, e.g. 1,0,1 (default: from the sibling mask)")
    sp = add("ablate", cmd_ablate, "run the scale / fusion / reactivation ablations")
    sp.add_argument("--seeds", default="1,2,3", help="comma-separated seeds (at least 3)")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = _load_config(args)
        args.fn(args, cfg)
    except UsageError as e:
        print(f"scalefuse {args.command}: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (config.ConfigError, DataError, tensor.FormatError, tensor.ShapeError) as e:
        print(f"scalefuse {args.command}: {e}", file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        print(f"scalefuse {args.command}: {e}", file=sys.stderr)
        return EXIT_DATA
    except training.NumericalAbort as e:
        print(f"scalefuse {args.command}: numerical abort: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
