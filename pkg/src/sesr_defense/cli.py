"""Command line front end.

Exit codes: 0 success, 1 validation error, 2 I/O or file format error.
``SESR_NUM_THREADS`` caps BLAS threads. ``--config file.ini`` supplies
defaults from the section named after the subcommand; flags win.
"""
from __future__ import annotations

import os
import sys

_THREADS = os.environ.get("SESR_NUM_THREADS")
if _THREADS:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[_var] = _THREADS

import argparse  # noqa: E402
import configparser  # noqa: E402
import logging  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import attacks as A  # noqa: E402
from . import costmodel as C  # noqa: E402
from .collapse import collapse_network, verify_collapse  # noqa: E402
from .data import load_image_dir, load_labeled_dir, write_labeled_dir  # noqa: E402
from .defense import DefenseConfig, defend  # noqa: E402
from .defense.pipeline import UPSCALERS  # noqa: E402
from .errors import FormatError, SesrError  # noqa: E402
from .experiment import ExperimentConfig, eval_robustness, load_classifier, save_classifier  # noqa: E402
from .io import load_weights, read_ppm, save_weights, write_ppm  # noqa: E402
from .models import build_net, init_sr_weights  # noqa: E402
from .report import emit_report, format_macs, read_report  # noqa: E402
from .training import TrainConfig, make_lr_hr_pairs, train_sr  # noqa: E402

log = logging.getLogger("sesr_defense")


class ValidationError(Exception):
    pass


def _size(text: str):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    if h <= 0 or w <= 0:
        raise argparse.ArgumentTypeError("sizes must be positive")
    return h, w


def _csv_list(text: str):
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _pairs(text: str) -> dict:
    out = {}
    for item in _csv_list(text):
        key, sep, value = item.partition("=")
        if not sep:
            raise argparse.ArgumentTypeError(f"expected name=path, got {item!r}")
        out[key.strip()] = value.strip()
    return out


# --- subcommands --------------------------------------------------------------


def cmd_train_sr(args) -> int:
    hr = load_image_dir(args.data)
    if len(hr) == 0:
        raise ValidationError(f"no .ppm images under {args.data}")
    ds = make_lr_hr_pairs(hr, args.patch, args.count, args.seed)
    if len(ds) == 0:
        raise ValidationError(f"every image is smaller than {2 * args.patch}x{2 * args.patch}")
    net = build_net(args.arch, "expanded", p=args.expansion, activation=args.activation)
    cfg = TrainConfig(epochs=args.epochs, batch_size=args.batch_size, learning_rate=args.lr,
                      loss=args.loss, seed=args.seed, patch_size=args.patch)
    result = train_sr(net, ds, cfg, weights=init_sr_weights(net, args.seed),
                      on_epoch=lambda e, loss: print(f"epoch {e + 1} loss {loss:.6f}", flush=True))
    n = save_weights(args.out, net, result.weights)
    print(f"wrote {args.out} ({n} bytes)")
    if args.collapsed_out:
        cnet, cw = collapse_network(net, result.weights)
        n = save_weights(args.collapsed_out, cnet, cw)
        print(f"wrote {args.collapsed_out} ({n} bytes)")
    return 0


def cmd_train_classifier(args) -> int:
    images, labels, classes, _ = load_labeled_dir(args.data)
    if len(images) == 0:
        raise ValidationError(f"no labelled .ppm images under {args.data}")
    model = A.train_toy_classifier(images, labels, epochs=args.epochs, lr=args.lr, seed=args.seed,
                                   num_classes=len(classes), batch_size=args.batch_size)
    pred, _ = A.classify(model, images)
    print(f"classes: {', '.join(classes)}")
    print(f"training accuracy {100 * np.mean(pred == labels):.2f}%")
    save_classifier(args.out, model)
    print(f"wrote {args.out}")
    return 0


def cmd_make_shapes(args) -> int:
    from .data import SHAPES, shapes_dataset

    images, labels = shapes_dataset(args.per_class, args.size, args.seed, args.classes)
    write_labeled_dir(args.out, images, labels, list(SHAPES[:args.classes]))
    print(f"wrote {len(images)} images under {args.out}")
    return 0


def cmd_collapse(args) -> int:
    net, weights = load_weights(args.input)
    cnet, cw = collapse_network(net, weights)
    n = save_weights(args.out, cnet, cw)
    print(f"wrote {args.out} ({n} bytes)")
    return 0


def cmd_verify_collapse(args) -> int:
    pair_e = load_weights(args.expanded)
    pair_c = load_weights(args.collapsed)
    rep = verify_collapse(pair_e, pair_c, trials=args.trials, tol=args.tol, shape=(1, 3, args.size, args.size),
                          seed=args.seed)
    print(f"max |expanded - collapsed| = {rep.max_abs_diff:.3e} over {rep.trials} inputs (tol {rep.tol:g}): "
          + ("PASS" if rep.passed else "FAIL"))
    return 0 if rep.passed else 1


def cmd_attack(args) -> int:
    model = load_classifier(args.classifier)
    images, labels, classes, names = load_labeled_dir(args.data)
    if len(images) == 0:
        raise ValidationError(f"no labelled .ppm images under {args.data}")
    cfg = A.AttackConfig(kind=args.kind, epsilon=args.epsilon, steps=args.steps, alpha=args.alpha, seed=args.seed)
    seeds = [A.image_seed(args.seed, i) for i in range(len(images))]
    adv = A.run_attack(images, labels, model, cfg, seeds=seeds)
    out = Path(args.out)
    for img, name in zip(adv, names):
        (out / name).parent.mkdir(parents=True, exist_ok=True)
        write_ppm(out / name, img)
    clean = 100 * np.mean(A.classify(model, images)[0] == labels)
    robust = 100 * np.mean(A.classify(model, adv)[0] == labels)
    print(f"{args.kind}: clean {clean:.2f}% -> adversarial {robust:.2f}% ({len(adv)} images in {out})")
    return 0


def _defense_config(args) -> DefenseConfig:
    return DefenseConfig(
        jpeg_enabled=not args.no_jpeg,
        jpeg_quality=args.quality,
        wavelet_enabled=not args.no_wavelet,
        wavelet=args.wavelet,
        levels=args.levels,
        upscaler=args.upscaler,
        weight_path=args.weights,
    )


def cmd_defend(args) -> int:
    cfg = _defense_config(args)
    src, dst = Path(args.input), Path(args.out)
    files = sorted(src.rglob("*.ppm")) if src.is_dir() else [src]
    if not files:
        raise ValidationError(f"no .ppm images under {src}")
    for f in files:
        target = dst / f.relative_to(src) if src.is_dir() else dst
        target.parent.mkdir(parents=True, exist_ok=True)
        write_ppm(target, defend(read_ppm(f), cfg))
    print(f"defended {len(files)} image(s) -> {dst}")
    return 0


def cmd_evaluate(args) -> int:
    attack = A.AttackConfig(epsilon=args.epsilon, steps=args.steps, alpha=args.alpha, seed=args.seed)
    cfg = ExperimentConfig(
        classifier_path=args.classifier,
        dataset_dir=args.data,
        output_dir=args.workdir,
        attack=attack,
        attacks=args.attacks,
        defense=_defense_config(args),
        upscalers=args.upscalers,
        sr_weights=args.sr_weights,
        jpeg_ablation=args.jpeg_ablation,
        subset=args.subset,
        seed=args.seed,
    )
    report = eval_robustness(cfg)
    text = emit_report(report, args.format, args.out)
    print(text, end="")
    return 0


def cmd_cost(args) -> int:
    h, w = args.input
    device = C.DeviceProfile(C.parse_device(args.device), args.utilization)
    net = Path(args.net).read_text() if Path(args.net).is_file() else args.net
    rep = C.stage_cost(net, h, w, device)
    if args.classification_ms is not None:
        rep = C.end_to_end(C.fixed_stage(args.classification_ms, "classification"), rep)
    if args.report == "csv":
        print("network,input,params,macs,latency_ms,fps")
        print(f"{args.net},{h}x{w},{rep.params},{rep.macs},{rep.latency_ms:.4f},{rep.fps:.4f}")
    else:
        print(f"| Network | Input | Parameters | MACs | Latency (ms) | FPS |\n|---|---|---|---|---|---|\n"
              f"| {args.net} | {h}x{w} | {rep.params} | {format_macs(rep.macs)} | {rep.latency_ms:.2f} | "
              f"{rep.fps:.2f} |")
    return 0


def cmd_report(args) -> int:
    text = emit_report(read_report(args.input), args.format, args.out)
    if args.out is None:
        print(text, end="")
    return 0


# --- parser -------------------------------------------------------------------


def _defense_flags(p) -> None:
    p.add_argument("--upscaler", choices=UPSCALERS, default="sesr_m2")
    p.add_argument("--weights", help="SR weight file for SR upscalers")
    p.add_argument("--no-jpeg", action="store_true")
    p.add_argument("--jpeg-quality", "--quality", dest="quality", type=int, default=75)
    p.add_argument("--no-wavelet", action="store_true")
    p.add_argument("--wavelet", default="db2")
    p.add_argument("--levels", type=int, default=2)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sesr-defense", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="INI file; section per subcommand")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-sr", help="train an SR network in expanded form")
    p.add_argument("--arch", default="sesr_m2", choices=("sesr_m2", "sesr_m3", "sesr_m5", "sesr_xl"))
    p.add_argument("--expansion", type=int, default=64)
    p.add_argument("--activation", choices=("relu", "prelu"), default="relu")
    p.add_argument("--data", required=True, help="directory of HR .ppm images")
    p.add_argument("--epochs", type=int, default=10)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--patch", type=int, default=32, help="LR patch size")
    p.add_argument("--count", type=int, default=256, help="number of training patches")
    p.add_argument("--loss", choices=("mae", "mse"), default="mae")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--collapsed-out")
    p.set_defaults(func=cmd_train_sr)

    p = sub.add_parser("train-classifier", help="train the toy classifier on a labelled directory")
    p.add_argument("--data", required=True)
    p.add_argument("--epochs", type=int, default=15)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train_classifier)

    p = sub.add_parser("make-shapes", help="write the synthetic labelled shapes dataset")
    p.add_argument("--per-class", type=int, default=300)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_make_shapes)

    p = sub.add_parser("collapse", help="collapse an expanded weight file")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_collapse)

    p = sub.add_parser("verify-collapse", help="compare expanded and collapsed outputs")
    p.add_argument("--expanded", required=True)
    p.add_argument("--collapsed", required=True)
    p.add_argument("--trials", type=int, default=10)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_verify_collapse)

    p = sub.add_parser("attack", help="write adversarial images for a labelled directory")
    p.add_argument("--classifier", "--model", dest="classifier", required=True)
    p.add_argument("--data", "--in", dest="data", required=True)
    p.add_argument("--kind", choices=A.KINDS, default="pgd")
    p.add_argument("--epsilon", "--eps", dest="epsilon", type=float, default=8 / 255)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--alpha", type=float, default=2 / 255)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("defend", help="run the preprocessing defense on an image or directory")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    _defense_flags(p)
    p.set_defaults(func=cmd_defend)

    p = sub.add_parser("evaluate", help="gray-box robustness table")
    p.add_argument("--classifier", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--attacks", type=_csv_list, default=A.KINDS)
    p.add_argument("--upscalers", type=_csv_list, default=("nearest", "sesr_m2"))
    p.add_argument("--sr-weights", type=_pairs, default={}, help="name=path[,name=path]")
    p.add_argument("--epsilon", type=float, default=8 / 255)
    p.add_argument("--steps", type=int, default=10)
    p.add_argument("--alpha", type=float, default=2 / 255)
    p.add_argument("--subset", type=int, default=500)
    p.add_argument("--jpeg-ablation", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workdir", help="where adversarial images are written")
    p.add_argument("--format", choices=("csv", "markdown"), default="csv")
    p.add_argument("--out")
    _defense_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("cost", help="parameters, MACs and modelled latency")
    p.add_argument("--net", required=True, help="preset name or layer description file")
    p.add_argument("--input", type=_size, default=(299, 299))
    p.add_argument("--device", default="0.5tops")
    p.add_argument("--utilization", type=float, default=1.0)
    p.add_argument("--classification-ms", type=float)
    p.add_argument("--report", choices=("csv", "markdown"), default="markdown")
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("report", help="re-render a CSV report")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--format", choices=("csv", "markdown"), default="markdown")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def _apply_config(parser: argparse.ArgumentParser, argv) -> None:
    """Turn the subcommand's INI section into parser defaults."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, rest = pre.parse_known_args(argv)
    if not known.config:
        return
    ini = configparser.ConfigParser()
    if not ini.read(known.config):
        raise FileNotFoundError(f"config file not found: {known.config}")
    command = next((a for a in rest if not a.startswith("-")), None)
    sub_action = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    if command not in sub_action.choices or not ini.has_section(command):
        return
    sp = sub_action.choices[command]
    by_dest = {a.dest: a for a in sp._actions}
    defaults = {}
    for key, raw in ini.items(command):
        dest = key.replace("-", "_")
        action = by_dest.get(dest)
        if action is None:
            raise ValidationError(f"{known.config}: unknown key {key!r} in [{command}]")
        if isinstance(action, argparse._StoreTrueAction):
            defaults[dest] = ini.getboolean(command, key)
        else:
            defaults[dest] = action.type(raw) if action.type else raw
        action.required = False
    sp.set_defaults(**defaults)


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    except (ValidationError, ValueError, configparser.Error) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValidationError, SesrError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
