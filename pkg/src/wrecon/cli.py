"""Command-line surface: phantom/mask generation, training, reconstruction,
evaluation. Progress goes to stderr; machine-readable results go to files
only, written atomically. Every command is deterministic given its flags
and inputs (seeds are explicit)."""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import checkpoint as ckpt
from . import data, figures, kspace, metrics
from .autodiff import no_grad
from .ioutil import atomic_write_text
from .model import CascadeConfig, WCNNConfig, build_wcnn, cascade_forward
from .training import TrainSettings, train

__all__ = ["main"]


class CliError(Exception):
    def __init__(self, message, code=2):
        super().__init__(message)
        self.code = code


def _log(msg):
    print(msg, file=sys.stderr)


def _fmt(v):
    return "" if (isinstance(v, float) and math.isnan(v)) else f"{v:.10g}"


# ---------------------------------------------------------------------------
# shared loading helpers


def _load_mask(path):
    if not os.path.exists(path):
        raise CliError(f"mask file not found: {path}")
    try:
        return kspace.load_mask(path)
    except ValueError as exc:
        raise CliError(str(exc)) from exc


def _load_manifest_images(path):
    if not os.path.exists(path):
        raise CliError(f"dataset manifest not found: {path}")
    try:
        manifest = data.read_manifest(path)
    except (ValueError, json.JSONDecodeError) as exc:
        raise CliError(f"unreadable manifest {path}: {exc}") from exc
    root = os.path.dirname(os.path.abspath(path))
    images = []
    shape = None
    for item in manifest["items"]:
        img = data.load_image(os.path.join(root, item["path"]))
        if shape is None:
            shape = img.shape
        elif img.shape != shape:
            raise CliError(
                f"image {item['id']} is {img.shape}, expected {shape}; "
                "mixed sizes are rejected (no resampling)")
        images.append((item["id"], img))
    if not images:
        raise CliError(f"manifest {path} lists no images")
    return images, manifest


def _check_geometry(shape, mask, levels):
    h, w = shape
    if h != mask.height:
        raise CliError(f"image height {h} does not match mask height {mask.height}")
    div = 1 << levels
    if h % div or w % div:
        raise CliError(f"image dims {h}x{w} must be divisible by 2^levels = {div}")


def _load_checkpoint(path):
    if not os.path.exists(path):
        raise CliError(f"checkpoint not found: {path}")
    try:
        return ckpt.load_checkpoint(path)
    except ckpt.CheckpointError as exc:
        raise CliError(str(exc)) from exc


# ---------------------------------------------------------------------------
# gen-phantoms


def _cmd_gen_phantoms(args):
    if args.size % 2:
        raise CliError(f"--size must be even, got {args.size}")
    os.makedirs(args.out, exist_ok=True)
    phantoms = data.gen_phantoms(args.count, args.size, args.size, args.seed,
                                 fine_detail_density=args.detail_density)
    items = []
    for i, ph in enumerate(phantoms):
        name = f"phantom_{i:04d}"
        data.save_image_f32(ph.image, os.path.join(args.out, f"{name}.imgf"))
        items.append({"id": name, "path": f"{name}.imgf"})
    manifest = {
        "count": args.count,
        "height": args.size,
        "width": args.size,
        "seed": args.seed,
        "fine_detail_density": args.detail_density,
        "items": items,
    }
    data.write_manifest(os.path.join(args.out, "manifest.json"), manifest)
    _log(f"wrote {len(items)} phantoms ({args.size}x{args.size}, seed {args.seed}) "
         f"to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# gen-mask


def _cmd_gen_mask(args):
    try:
        mask = kspace.generate_mask(args.height, args.accel, args.center_lines,
                                    sigma_frac=args.sigma_frac, seed=args.seed)
    except ValueError as exc:
        raise CliError(str(exc)) from exc
    kspace.save_mask(mask, args.out)
    _log(f"wrote mask: {mask.n_kept}/{mask.height} rows kept "
         f"(accel {args.accel}, {args.center_lines} center lines, seed {args.seed}) "
         f"to {args.out}")
    return 0


# ---------------------------------------------------------------------------
# train


_CONFIG_DEFAULTS = {
    "mode": "standalone",
    "wcnn": {"levels": 3, "block_depth": 4, "base_channels": 16, "input_channels": 1},
    "cascade": {"n_cascades": 2, "lambda": "inf", "share_weights": False},
    "training": {"epochs": 50, "batch_size": 4, "lr": 1e-3, "seed": 0},
    "data": {"split_ratio": 0.8, "split_seed": 0},
    "paths": {"manifest": None, "mask": None, "checkpoint": None, "report_dir": None},
    "init_from": None,
}


def _merge_config(path, args):
    if not os.path.exists(path):
        raise CliError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            user = json.load(fh)
        except json.JSONDecodeError as exc:
            raise CliError(f"config {path} is not valid JSON: {exc}") from exc
    cfg = json.loads(json.dumps(_CONFIG_DEFAULTS))
    for section, value in user.items():
        if section not in cfg:
            raise CliError(f"config {path}: unknown key {section!r}")
        if isinstance(cfg[section], dict):
            if not isinstance(value, dict):
                raise CliError(f"config {path}: {section!r} must be an object")
            for k, v in value.items():
                if k not in cfg[section]:
                    raise CliError(f"config {path}: unknown key {section}.{k}")
                cfg[section][k] = v
        else:
            cfg[section] = value

    overrides = [
        ("mode", args.mode, ("mode",)),
        ("levels", args.levels, ("wcnn", "levels")),
        ("block-depth", args.block_depth, ("wcnn", "block_depth")),
        ("base-channels", args.base_channels, ("wcnn", "base_channels")),
        ("n-cascades", args.n_cascades, ("cascade", "n_cascades")),
        ("lambda", args.fidelity_lambda, ("cascade", "lambda")),
        ("share-weights", args.share_weights, ("cascade", "share_weights")),
        ("epochs", args.epochs, ("training", "epochs")),
        ("batch-size", args.batch_size, ("training", "batch_size")),
        ("lr", args.lr, ("training", "lr")),
        ("seed", args.seed, ("training", "seed")),
        ("split-ratio", args.split_ratio, ("data", "split_ratio")),
        ("split-seed", args.split_seed, ("data", "split_seed")),
        ("manifest", args.manifest, ("paths", "manifest")),
        ("mask", args.mask, ("paths", "mask")),
        ("checkpoint", args.checkpoint, ("paths", "checkpoint")),
        ("report-dir", args.report_dir, ("paths", "report_dir")),
        ("init-from", args.init_from, ("init_from",)),
    ]
    for _flag, value, keypath in overrides:
        if value is None:
            continue
        node = cfg
        for k in keypath[:-1]:
            node = node[k]
        node[keypath[-1]] = value
    return cfg


def _parse_lambda(value):
    if value in ("inf", "INF", "INFINITE", math.inf):
        return math.inf
    try:
        lam = float(value)
    except (TypeError, ValueError):
        raise CliError(f"lambda must be a number or 'inf', got {value!r}")
    if lam < 0:
        raise CliError(f"lambda must be >= 0, got {lam}")
    return lam


def _validated_run(cfg):
    if cfg["mode"] not in ("standalone", "cascade"):
        raise CliError(f"mode must be standalone or cascade, got {cfg['mode']!r}")
    try:
        wcnn = WCNNConfig.from_dict(cfg["wcnn"])
        settings = TrainSettings(**cfg["training"])
    except (TypeError, ValueError) as exc:
        raise CliError(f"invalid config: {exc}") from exc
    ratio = cfg["data"]["split_ratio"]
    if not 0 < ratio < 1:
        raise CliError(f"split_ratio must lie in (0, 1), got {ratio}")
    lam = _parse_lambda(cfg["cascade"]["lambda"])
    for key in ("manifest", "mask", "checkpoint"):
        if not cfg["paths"][key]:
            raise CliError(f"config paths.{key} is required")
    return wcnn, settings, lam


def _cmd_train(args):
    cfg = _merge_config(args.config, args)
    wcnn_cfg, settings, lam = _validated_run(cfg)
    mode = cfg["mode"]
    n_casc = int(cfg["cascade"]["n_cascades"])
    share = bool(cfg["cascade"]["share_weights"])

    images, _ = _load_manifest_images(cfg["paths"]["manifest"])
    mask = _load_mask(cfg["paths"]["mask"])
    _check_geometry(images[0][1].shape, mask, wcnn_cfg.levels)
    train_set, val_set = data.build_dataset(images, mask, cfg["data"]["split_ratio"],
                                            cfg["data"]["split_seed"])
    _log(f"dataset: {len(train_set)} train / {len(val_set)} val images, "
         f"mask keeps {mask.n_kept}/{mask.height} rows")

    if mode == "standalone":
        models = [build_wcnn(wcnn_cfg, settings.seed)]
        share = False
    else:
        init_from = cfg["init_from"]
        if init_from:
            base = _load_checkpoint(init_from)
            if base.wcnn != wcnn_cfg:
                raise CliError(
                    f"checkpoint {init_from} was built for {base.wcnn.to_dict()}, "
                    f"config asks for {wcnn_cfg.to_dict()}")
            try:
                models = ckpt.init_cascade_from_standalone(base, n_casc)
            except ckpt.CheckpointError as exc:
                raise CliError(str(exc)) from exc
        else:
            models = [build_wcnn(wcnn_cfg, settings.seed + i) for i in range(n_casc)]
        if share:
            models = [models[0]] * n_casc

    def printer(row, best_epoch):
        loss = "--" if math.isnan(row.train_loss) else f"{row.train_loss:.5g}"
        _log(f"epoch {row.epoch:3d}/{settings.epochs}  loss {loss:>10}  "
             f"val PSNR {row.val_psnr:6.2f} dB  NMSE {row.val_nmse:.4g}  "
             f"(best @ {best_epoch})")

    ck_path = cfg["paths"]["checkpoint"]
    os.makedirs(os.path.dirname(os.path.abspath(ck_path)), exist_ok=True)
    history, _best, best_epoch = train(
        models, train_set, val_set, mode=mode, fidelity_lam=lam,
        settings=settings, checkpoint_path=ck_path, share_weights=share,
        log=printer)

    report_dir = cfg["paths"]["report_dir"]
    if report_dir:
        os.makedirs(report_dir, exist_ok=True)
        rows = ["epoch,train_loss,val_psnr,val_nmse"]
        rows += [f"{h.epoch},{_fmt(h.train_loss)},{_fmt(h.val_psnr)},{_fmt(h.val_nmse)}"
                 for h in history]
        atomic_write_text(os.path.join(report_dir, "loss_curve.csv"),
                          "\n".join(rows) + "\n")
        figures.save_loss_figure(history, os.path.join(report_dir, "loss_curve.png"))
    _log(f"best epoch {best_epoch}; checkpoint written to {ck_path}")
    return 0


# ---------------------------------------------------------------------------
# shared reconstruction forward


def _reconstruct_batch(ck, models, xu, y, mask, apply_final_df):
    """Eval-mode model output for a batch; optionally project the result
    onto the measurements (used by the reconstruct command)."""
    from .autodiff import Tensor
    from .model import data_fidelity_layer

    with no_grad():
        if ck.mode == "standalone":
            pred = models[0].forward(Tensor(xu), training=False)
            if apply_final_df:
                pred = data_fidelity_layer(pred, y, mask, ck.fidelity_lam)
        else:
            pred = cascade_forward(models, Tensor(xu), y, mask, ck.fidelity_lam,
                                   training=False)
        return pred.data


def _cmd_reconstruct(args):
    ck = _load_checkpoint(args.checkpoint)
    models = ckpt.restore_models(ck)
    mask = _load_mask(args.mask)
    targets = args.target or []
    if targets and len(targets) != len(args.input):
        raise CliError(f"got {len(args.input)} inputs but {len(targets)} targets")
    os.makedirs(args.out_dir, exist_ok=True)
    lo, hi = args.window
    if not lo < hi:
        raise CliError(f"--window lo must be < hi, got {lo} {hi}")

    for idx, in_path in enumerate(args.input):
        try:
            img = data.load_image(in_path)
        except (ValueError, OSError) as exc:
            raise CliError(f"cannot read {in_path}: {exc}") from exc
        _check_geometry(img.shape, mask, ck.wcnn.levels)
        y = kspace.undersample(img, mask)
        xu = kspace.zero_filled(y, mask).real.astype(np.float32)
        recon = _reconstruct_batch(ck, models, xu[None, None], y[None], mask,
                                   apply_final_df=True)[0, 0]
        stem = os.path.splitext(os.path.basename(in_path))[0]
        out = lambda suffix: os.path.join(args.out_dir, f"{stem}_{suffix}")
        data.save_image_f32(recon, out("recon.imgf"))
        data.export_png(recon, out("recon.png"), window=(lo, hi))
        data.export_png(xu, out("zero_filled.png"), window=(lo, hi))
        panels = [("zero-filled", xu), ("reconstruction", recon)]
        if targets:
            tgt = data.load_image(targets[idx])
            if tgt.shape != img.shape:
                raise CliError(f"target {targets[idx]} is {tgt.shape}, "
                               f"input is {img.shape}")
            err = np.abs(tgt - recon)
            data.export_png(err, out("error.png"),
                            window=(0.0, max(float(err.max()), 1e-6)))
            panels = [("target", tgt)] + panels + [("abs error", err)]
        figures.save_recon_figure(panels, out("panel.png"), window=(lo, hi))
        _log(f"reconstructed {in_path} -> {out('recon.imgf')}")
    return 0


# ---------------------------------------------------------------------------
# evaluate


def _metric_row(pred, target):
    rng = float(target.max())
    return {
        "nmse": metrics.nmse(pred, target),
        "psnr": metrics.psnr(pred, target, data_range=rng),
        "ssim": metrics.ssim(pred, target, data_range=rng),
        "hfen": metrics.hfen(pred, target),
    }


def _cmd_evaluate(args):
    ck = _load_checkpoint(args.checkpoint)
    models = ckpt.restore_models(ck)
    mask = _load_mask(args.mask)
    images, _ = _load_manifest_images(args.manifest)
    _check_geometry(images[0][1].shape, mask, ck.wcnn.levels)
    train_set, val_set = data.build_dataset(images, mask, args.split_ratio,
                                            args.split_seed)
    subset = {"train": train_set.items, "val": val_set.items,
              "all": train_set.items + val_set.items}[args.split]
    if not subset:
        raise CliError(f"split {args.split!r} selected no images")

    model_rows = []
    baseline_rows = []
    bs = 8
    for lo in range(0, len(subset), bs):
        chunk = subset[lo : lo + bs]
        xu = np.stack([it.zero_filled for it in chunk])[:, None]
        y = np.stack([kspace.undersample(it.target, mask) for it in chunk])
        pred = _reconstruct_batch(ck, models, xu, y, mask, apply_final_df=False)
        for it, p in zip(chunk, pred[:, 0]):
            model_rows.append((it.id, _metric_row(p, it.target)))
            baseline_rows.append((it.id, _metric_row(it.zero_filled, it.target)))

    report = metrics.MetricReport(rows=model_rows)
    baseline = metrics.MetricReport(rows=baseline_rows)
    metrics.write_report_csv(args.out, report,
                             extra_aggregates=[("zero_filled", baseline.aggregate())])
    figures.save_metric_figure(model_rows, baseline_rows,
                               os.path.splitext(args.out)[0] + ".png")
    agg = report.aggregate()
    _log("  ".join(f"{m} {agg[m][0]:.4g}+/-{agg[m][1]:.3g}" for m in metrics.METRIC_NAMES))

    if args.compare:
        other_rows, _ = metrics.read_report_csv(args.compare)
        # pair the written report against the other report so both sides
        # carry identical CSV rounding (a self-comparison is exactly zero)
        written_rows, _ = metrics.read_report_csv(args.out)
        mine = dict(written_rows)
        theirs = dict(other_rows)
        if set(mine) != set(theirs):
            raise CliError("paired comparison needs identical image sets "
                           f"({len(mine)} vs {len(theirs)} ids)")
        ids = sorted(mine)
        lines = ["metric,statistic,p_value,significant"]
        for m in metrics.METRIC_NAMES:
            res = metrics.wilcoxon_signed_rank(
                [mine[i][m] for i in ids], [theirs[i][m] for i in ids],
                alpha=args.alpha)
            lines.append(f"{m},{res.statistic:.10g},{res.p_value:.10g},"
                         f"{int(res.significant)}")
        wpath = os.path.splitext(args.out)[0] + "_wilcoxon.csv"
        atomic_write_text(wpath, "\n".join(lines) + "\n")
        _log(f"wilcoxon comparison written to {wpath}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="wrecon",
        description="Wavelet-CNN reconstruction of undersampled MR-style images.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-phantoms", help="generate synthetic phantoms + manifest")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--size", type=int, required=True, help="image side length (even)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--detail-density", type=float, default=1.0)
    p.set_defaults(func=_cmd_gen_phantoms)

    p = sub.add_parser("gen-mask", help="generate a Cartesian sampling mask file")
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--accel", type=float, required=True)
    p.add_argument("--center-lines", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--sigma-frac", type=float, default=0.15)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_mask)

    p = sub.add_parser("train", help="train from a JSON config (flags override)")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=["standalone", "cascade"])
    p.add_argument("--levels", type=int)
    p.add_argument("--block-depth", type=int)
    p.add_argument("--base-channels", type=int)
    p.add_argument("--n-cascades", type=int)
    p.add_argument("--lambda", dest="fidelity_lambda")
    p.add_argument("--share-weights", type=lambda s: s.lower() == "true")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--split-ratio", type=float)
    p.add_argument("--split-seed", type=int)
    p.add_argument("--manifest")
    p.add_argument("--mask")
    p.add_argument("--checkpoint")
    p.add_argument("--report-dir")
    p.add_argument("--init-from")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("reconstruct", help="reconstruct images through a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--input", nargs="+", required=True)
    p.add_argument("--target", nargs="*")
    p.add_argument("--out-dir", default=".")
    p.add_argument("--window", type=float, nargs=2, default=(0.0, 1.0),
                   metavar=("LO", "HI"))
    p.set_defaults(func=_cmd_reconstruct)

    p = sub.add_parser("evaluate", help="per-image metric report for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True, help="report CSV path")
    p.add_argument("--split", choices=["train", "val", "all"], default="val")
    p.add_argument("--split-ratio", type=float, default=0.8)
    p.add_argument("--split-seed", type=int, default=0)
    p.add_argument("--compare", help="second report CSV for a paired Wilcoxon test")
    p.add_argument("--alpha", type=float, default=0.05)
    p.set_defaults(func=_cmd_evaluate)
    return parser


def _thread_limit():
    raw = os.environ.get("WRECON_THREADS")
    if not raw:
        return None
    try:
        n = max(1, int(raw))
    except ValueError:
        return None
    try:
        import threadpoolctl
    except ImportError:
        return None
    return threadpoolctl.threadpool_limits(limits=n)


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    limit = _thread_limit()
    try:
        return args.func(args)
    except CliError as exc:
        _log(f"error: {exc}")
        return exc.code
    except (ValueError, OSError) as exc:
        _log(f"error: {exc}")
        return 1
    finally:
        if limit is not None:
            limit.unregister()


if __name__ == "__main__":
    sys.exit(main())
