"""``lkaunet`` command line.

Exit codes: 0 success, 1 usage error (bad flags or invalid values),
2 runtime error (I/O, corrupt files, failed checks).  Errors are a single
``error: <kind>: <message>`` line on stderr.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import complexity as cx
from . import tensor_core as tc
from .lkt import LktError, load_weights, read_tensor, save_weights, write_tensor

SCHEMA_VERSION = 1


class UsageError(Exception):
    pass


class CheckFailed(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --------------------------------------------------------------------------
# helpers

def _ints(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _triple(text: str) -> tuple:
    vals = _ints(text)
    if len(vals) == 1:
        vals = vals * 3
    if len(vals) != 3:
        raise argparse.ArgumentTypeError(f"expected one or three integers, got {text!r}")
    return tuple(vals)


def _emit_json(obj: dict, out) -> None:
    out.write(json.dumps({"schema_version": SCHEMA_VERSION, **obj}, indent=2) + "\n")


def _emit_csv(header: list[str], rows: list[list], out) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    out.write(buf.getvalue())


def _load_config(path):
    from .unet3d.model import UNetConfig

    if path is None:
        return UNetConfig(in_channels=1, out_classes=2, num_scales=3, base_width=8, attention="mid")
    return UNetConfig.from_json(Path(path).read_text())


def _assign_weights(net, named: dict) -> None:
    params = net.named_parameters()
    missing = sorted(set(params) - set(named))
    extra = sorted(set(named) - set(params))
    if missing or extra:
        raise LktError(f"weights do not match model: missing={missing[:3]} unexpected={extra[:3]}")
    for name, p in params.items():
        arr = named[name]
        if arr.shape != p.value.shape:
            raise LktError(f"weight {name}: shape {arr.shape}, model expects {p.value.shape}")
        p.value = arr.astype(p.value.dtype)


# --------------------------------------------------------------------------
# subcommands

def cmd_complexity(args, out):
    spatial = args.spatial or (1, 1, 1)
    reports = cx.table_report(args.channels, args.kernel, args.dilation, *spatial)
    if args.format == "json":
        rows = []
        for r in reports:
            d = r.as_dict()
            d["ratio_percent"] = round(float(r.ratio) * 100, 2)
            d["nprm_original_fmt"] = cx.format_count(r.nprm_original)
            d["nprm_decomposed_fmt"] = cx.format_count(r.nprm_decomposed)
            rows.append(d)
        _emit_json({"K": args.kernel, "d": args.dilation, "rows": rows}, out)
        return
    header = ["C", "K", "d", "nprm_original", "nprm_decomposed", "nprm_original_fmt", "nprm_decomposed_fmt",
              "ratio_percent", "beneficial", "flops_original", "flops_decomposed"]
    rows = [[r.C, r.K, r.d, r.nprm_original, r.nprm_decomposed, cx.format_count(r.nprm_original),
             cx.format_count(r.nprm_decomposed), f"{float(r.ratio) * 100:.2f}", str(r.beneficial).lower(),
             r.flops_original, r.flops_decomposed] for r in reports]
    _emit_csv(header, rows, out)


def cmd_solve_dilation(args, out):
    sol = cx.solve_optimal_dilation(args.kernel)
    if args.format == "json":
        _emit_json({"K": args.kernel, "continuous": sol.continuous, "integer": sol.integer,
                    "clamped": sol.clamped}, out)
    else:
        out.write(f"continuous={sol.continuous:.4f} integer={sol.integer}\n")


def cmd_plan(args, out):
    from .lk_attention import FULL_PLANS, plan_decomposition

    if args.full:
        plans = list(FULL_PLANS)
    else:
        if args.kernel is None or args.dilation is None:
            raise UsageError("plan needs --kernel and --dilation, or --full")
        plans = [plan_decomposition(args.kernel, args.dilation)]
    _emit_json({"plans": [p.as_dict() for p in plans]}, out)


def cmd_forward(args, out):
    from .unet3d.model import build_unet, unet_forward

    cfg = _load_config(args.model)
    net = build_unet(cfg, tc.Rng(args.seed))
    if args.weights:
        _assign_weights(net, load_weights(args.weights))
    x = read_tensor(args.input)
    if x.ndim == 3:
        x = x[None, None]
    elif x.ndim == 4:
        x = x[None]
    x = x.astype(tc.as_dtype(cfg.dtype))
    logits, attention = unet_forward(net, x, return_attention=True)
    dest = Path(args.out)
    write_tensor(dest, np.asarray(logits[0]))
    written = [str(dest)]
    for s, lg in zip(cfg.head_scales[1:], logits[1:]):
        p = dest.with_name(f"{dest.stem}_head{s}{dest.suffix}")
        write_tensor(p, np.asarray(lg))
        written.append(str(p))
    dumped = []
    if args.dump_attention:
        d = Path(args.dump_attention)
        d.mkdir(parents=True, exist_ok=True)
        for s in sorted(attention):
            p = d / f"attention_scale{s}.lkt"
            write_tensor(p, np.asarray(attention[s]))
            dumped.append(str(p))
    _emit_json({"outputs": written, "shapes": [list(np.shape(lg)) for lg in logits],
                "attention": dumped}, out)


def cmd_gradcheck(args, out):
    from .checks import TARGETS, TOLERANCE, run_gradcheck

    if args.target not in TARGETS:
        raise UsageError(f"unknown target {args.target!r}; choose from {', '.join(TARGETS)}")
    res = run_gradcheck(args.target, channels=args.channels, size=args.size, seed=args.seed, eps=args.eps)
    err = res.max_rel_err
    ok = err <= TOLERANCE
    out.write(f"target={args.target} max_rel_err={err:.3e} tol={TOLERANCE:.0e} "
              f"checked={res.checked} skipped={res.skipped} {'PASS' if ok else 'FAIL'}\n")
    if not ok:
        raise CheckFailed(f"max relative error {err:.3e} exceeds {TOLERANCE:.0e}")


def cmd_train_toy(args, out):
    from .unet3d.model import build_unet
    from .unet3d.train import TrainOptions, make_sphere_volume, train_toy

    cfg = _load_config(args.config)
    if cfg.in_channels != 1:
        raise UsageError("train-toy volumes have one input channel")
    net = build_unet(cfg, tc.Rng(args.seed))
    data = [make_sphere_volume(args.size, seed=args.seed + i, dtype=cfg.dtype) for i in range(args.volumes)]
    hist = train_toy(net, data, TrainOptions(steps=args.steps, lr=args.lr, seed=args.seed, loss=args.loss))
    if args.out_history:
        Path(args.out_history).write_text(hist.to_csv())
    if args.save_weights:
        save_weights(args.save_weights, {k: p.value for k, p in net.named_parameters().items()})
    last = hist.records[-1] if hist.records else None
    _emit_json({"steps": len(hist.records), "final_loss": last.loss if last else None,
                "final_dice": last.dice if last else None,
                "max_dice": max(hist.dice) if hist.records else None}, out)


def cmd_eval(args, out):
    from .eval_metrics import BRATS_PENALTY, evaluate_case

    pred, gt = read_tensor(args.pred), read_tensor(args.gt)
    spacing = tuple(args.spacing or (1.0,) * gt.ndim)
    rep = evaluate_case(pred, gt, args.classes, penalty=BRATS_PENALTY if args.brats_penalty else None,
                        spacing=spacing)
    _emit_json({"classes": rep.as_dict()}, out)


def _is_number(text: str) -> bool:
    try:
        float(text)
    except ValueError:
        return False
    return True


def _read_samples(spec: str, column: str | None) -> list[float]:
    p = Path(spec)
    if not p.exists():
        try:
            return _floats(spec)
        except argparse.ArgumentTypeError:
            raise FileNotFoundError(f"no such file: {spec}") from None
    rows = list(csv.reader(p.read_text().splitlines()))
    rows = [r for r in rows if r]
    if not rows:
        raise ValueError(f"{spec}: empty CSV")
    has_header = column is not None or not _is_number(rows[0][0])
    body = rows[1:] if has_header else rows
    col = 0
    if column is not None:
        if column not in rows[0]:
            raise ValueError(f"{spec}: no column {column!r}")
        col = rows[0].index(column)
    return [float(r[col]) for r in body]


def cmd_ttest(args, out):
    from .eval_metrics import paired_t_test

    a = _read_samples(args.a, args.column)
    b = _read_samples(args.b, args.column)
    res = paired_t_test(a, b)
    _emit_json({"n": res.n, "t": res.t, "p": res.p, "zero_variance": res.zero_variance}, out)


def cmd_augment(args, out):
    from .augment import AugmentConfig, augment

    cfg = AugmentConfig.from_json(Path(args.config).read_text()) if args.config else AugmentConfig()
    x = read_tensor(args.input)
    if x.dtype.kind != "f":
        raise ValueError("augment input must be a floating-point tensor")
    labels = read_tensor(args.labels) if args.labels else None
    img, lab, plan, _ = augment(x, labels, cfg, tc.Rng(args.seed))
    prefix = args.out_prefix
    write_tensor(f"{prefix}_image.lkt", img)
    files = [f"{prefix}_image.lkt"]
    if lab is not None:
        write_tensor(f"{prefix}_labels.lkt", lab)
        files.append(f"{prefix}_labels.lkt")
    plan_doc = {"schema_version": SCHEMA_VERSION, **plan.to_dict()}
    Path(f"{prefix}_plan.json").write_text(json.dumps(plan_doc, indent=2) + "\n")
    _emit_json({"outputs": files, "plan": plan.to_dict()}, out)


def cmd_synth(args, out):
    from .unet3d.train import make_sphere_volume

    x, labels = make_sphere_volume(args.size, noise=args.noise, seed=args.seed)
    write_tensor(f"{args.out_prefix}_image.lkt", x[0])
    write_tensor(f"{args.out_prefix}_labels.lkt", labels)
    _emit_json({"outputs": [f"{args.out_prefix}_image.lkt", f"{args.out_prefix}_labels.lkt"]}, out)


# --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="lkaunet", description="Large-kernel attention 3D U-Net toolkit.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("complexity", help="parameter/FLOP counts of original vs decomposed LK convolution")
    s.add_argument("--channels", type=_ints, required=True)
    s.add_argument("--kernel", type=int, required=True)
    s.add_argument("--dilation", type=int, required=True)
    s.add_argument("--spatial", type=_triple, help="H,W,D for FLOP counts (default 1,1,1)")
    s.add_argument("--format", choices=("csv", "json"), default="csv")
    s.set_defaults(func=cmd_complexity)

    s = sub.add_parser("solve-dilation", help="optimal dilation for a kernel size")
    s.add_argument("--kernel", type=int, required=True)
    s.add_argument("--format", choices=("text", "json"), default="text")
    s.set_defaults(func=cmd_solve_dilation)

    s = sub.add_parser("plan", help="decomposition plan as JSON")
    s.add_argument("--kernel", type=int)
    s.add_argument("--dilation", type=int)
    s.add_argument("--full", action="store_true", help="all plans of the Full variant")
    s.set_defaults(func=cmd_plan)

    s = sub.add_parser("forward", help="run a U-Net on an LKT tensor")
    s.add_argument("--model", help="UNetConfig JSON (default: toy Mid config)")
    s.add_argument("--weights", help="weight directory written by save_weights / train-toy")
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--dump-attention", help="directory for attention maps")
    s.add_argument("--seed", type=int, default=0, help="init seed when no weights are given")
    s.set_defaults(func=cmd_forward)

    s = sub.add_parser("gradcheck", help="finite-difference check of a primitive or module")
    s.add_argument("--target", required=True)
    s.add_argument("--channels", type=int, default=4)
    s.add_argument("--size", type=_triple)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--eps", type=float, help="finite-difference step (default: per target)")
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("train-toy", help="overfit a synthetic sphere volume")
    s.add_argument("--config", help="UNetConfig JSON (default: toy Mid config)")
    s.add_argument("--steps", type=int, default=300)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--lr", type=float, default=3e-4)
    s.add_argument("--size", type=int, default=32)
    s.add_argument("--volumes", type=int, default=1)
    s.add_argument("--loss", choices=("dice", "bce_dice"), default="dice")
    s.add_argument("--out-history", help="CSV of step,loss,dice")
    s.add_argument("--save-weights", help="directory to write trained weights")
    s.set_defaults(func=cmd_train_toy)

    s = sub.add_parser("eval", help="per-class Dice and HD95")
    s.add_argument("--pred", required=True)
    s.add_argument("--gt", required=True)
    s.add_argument("--classes", type=_ints, required=True)
    s.add_argument("--spacing", type=_floats)
    s.add_argument("--brats-penalty", action="store_true")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ttest", help="paired two-sided t-test")
    s.add_argument("--a", required=True, help="CSV file or comma-separated values")
    s.add_argument("--b", required=True, help="CSV file or comma-separated values")
    s.add_argument("--column", help="column name when the CSV has a header")
    s.set_defaults(func=cmd_ttest)

    s = sub.add_parser("augment", help="apply a seeded augmentation to an image/label pair")
    s.add_argument("--input", required=True)
    s.add_argument("--labels")
    s.add_argument("--config", help="AugmentConfig JSON (default: built-in method settings)")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-prefix", required=True)
    s.set_defaults(func=cmd_augment)

    s = sub.add_parser("synth", help="write a synthetic sphere image/label pair")
    s.add_argument("--size", type=int, default=32)
    s.add_argument("--noise", type=float, default=0.1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-prefix", required=True)
    s.set_defaults(func=cmd_synth)
    return p


def _fail(kind: str, exc, code: int) -> int:
    msg = " ".join(str(exc).split()) or type(exc).__name__
    sys.stderr.write(f"error: {kind}: {msg}\n")
    return code


def main(argv=None, out=None) -> int:
    out = out or sys.stdout
    try:
        args = build_parser().parse_args(argv)
        args.func(args, out)
    except UsageError as e:
        return _fail("usage", e, 1)
    except (LktError, OSError) as e:
        return _fail("io", e, 2)
    except CheckFailed as e:
        return _fail("check", e, 2)
    except (ValueError, KeyError, TypeError) as e:
        return _fail("invalid", e, 1)
    except Exception as e:  # noqa: BLE001 - last-resort runtime failure
        return _fail("runtime", e, 2)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
