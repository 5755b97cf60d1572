"""Command-line interface wiring all stages together.

Subcommands: synth, frangi, train, infer, postprocess, evaluate, pipeline,
split. Exit codes: 0 success, 2 validation failure, 3 I/O failure,
4 numeric failure (NaN), 5 empty mask in strict mode.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import metrics as metrics_mod
from .config import ConfigView, parse_config
from .errors import (
    EmptyMaskError,
    MhaParseError,
    MhaSizeError,
    ShapeError,
    TrainingError,
    UnsupportedTypeError,
    ValidationError,
)
from .phantom import PhantomSpec, make_phantom
from .pipeline import PipelineConfig, PipelineError, file_plan, run_pipeline, split_dataset
from .postproc import Seed, find_seed, largest_cc, postprocess, region_grow
from .unet3p import (
    PARAMS_FORMAT_VERSION,
    NetSpec,
    build_unet3p,
    infer,
    load_params,
    save_params,
    train_toy,
)
from .vesselness import VesselnessParams, frangi
from .volume import Volume3, normalize_ct, read_mha, write_mha

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_NUMERIC = 4
EXIT_EMPTY_MASK = 5


def _parse_triple(text: str, cast=int):
    parts = [cast(v) for v in text.replace(",", " ").split()]
    if len(parts) != 3:
        raise ValidationError(f"expected three comma-separated values, got {text!r}")
    return tuple(parts)


def _cmd_synth(args) -> int:
    spec = PhantomSpec(
        kind=args.kind,
        radius=args.radius,
        dims=_parse_triple(args.dims),
        spacing=_parse_triple(args.spacing, float),
        profile=args.profile,
        polarity=args.polarity,
        noise_sigma=args.noise_sigma,
    )
    image, mask = make_phantom(spec, args.seed)
    write_mha(image, args.out_image)
    write_mha(mask, args.out_mask)
    return EXIT_OK


def _cmd_frangi(args) -> int:
    params = VesselnessParams(
        scales=tuple(float(v) for v in args.scales.split(",")),
        alpha=args.alpha,
        beta=args.beta,
        c="auto" if args.c == "auto" else float(args.c),
        polarity=args.polarity,
        gamma=args.gamma,
    )
    vol = read_mha(getattr(args, "in"))
    out = frangi(vol, params)
    if not np.isfinite(out.data).all():
        raise FloatingPointError("non-finite vesselness values")
    write_mha(out, args.out)
    return EXIT_OK


def _load_train_pairs(cfg: ConfigView):
    if cfg.has("data.list"):
        with open(cfg.get("data.list")) as fh:
            rows = [line.split() for line in fh if line.strip() and not line.startswith("#")]
    else:
        rows = [[cfg.get("data.ct"), cfg.get("data.vessel"), cfg.get("data.mask")]]
    pairs = []
    for row in rows:
        if len(row) != 3:
            raise ValidationError(f"data.list rows must be 'ct vessel mask', got {row}")
        ct, vessel, mask = (read_mha(p) for p in row)
        if cfg.has("normalize.lo") or cfg.has("normalize.hi"):
            ct = normalize_ct(ct, cfg.get_float("normalize.lo", -1000.0),
                              cfg.get_float("normalize.hi", 600.0))
        x = np.stack([ct.data.astype(np.float64).transpose(2, 1, 0),
                      vessel.data.astype(np.float64).transpose(2, 1, 0)])
        y = mask.data.astype(np.float64).transpose(2, 1, 0)
        pairs.append((x, y))
    return pairs


def _cmd_train(args) -> int:
    cfg = ConfigView(parse_config(args.config), args.config)
    spec = NetSpec(
        levels=cfg.get_int("net.levels", 2),
        base_channels=cfg.get_int("net.base_channels", 4),
        skip_channels=cfg.get_int("net.skip_channels", 4),
    )
    params = build_unet3p(spec, cfg.get_int("train.seed", 0))
    pairs = _load_train_pairs(cfg)
    dtype = np.float32 if cfg.get("train.dtype", "float32") == "float32" else np.float64
    params, history = train_toy(
        params,
        pairs,
        steps=cfg.get_int("train.steps", 500),
        lr=cfg.get_float("train.lr", 0.1),
        momentum=cfg.get_float("train.momentum", 0.9),
        dtype=dtype,
    )
    save_params(params, args.out)
    if history:
        print(f"trained {len(history)} steps, final loss {history[-1]:.6g}")
    return EXIT_OK


def _cmd_infer(args) -> int:
    params = load_params(args.params)
    ct = read_mha(args.ct)
    vessel = read_mha(args.vessel)
    pred = infer(params, ct, vessel, args.threshold)
    write_mha(pred, args.out)
    return EXIT_OK


def _cmd_postprocess(args) -> int:
    mask = read_mha(getattr(args, "in"))
    if not mask.data.any():
        if args.strict:
            raise EmptyMaskError("input mask is empty (strict mode)")
        write_mha(mask.with_data(np.zeros(mask.dims, dtype=np.uint8)), args.out)
        return EXIT_OK
    if args.seed is not None:
        ix, iy, iz = _parse_triple(args.seed)
        out = largest_cc(region_grow(mask, Seed((ix, iy, iz), iz, 0.0)))
    else:
        out = postprocess(mask)
    write_mha(out, args.out)
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    pred = read_mha(args.pred)
    truth = read_mha(args.truth)
    ref = metrics_mod.read_centerline(args.centerline, truth) if args.centerline else None
    report = metrics_mod.evaluate(pred, truth, ref, args.branch_frac)
    text = report.as_text()
    with open(args.report, "w") as fh:
        fh.write(text)
    sys.stdout.write(text)
    return EXIT_OK


def _cmd_pipeline(args) -> int:
    cfg = PipelineConfig.from_file(args.config)
    if args.dry_run:
        cfg.validate()
        for path in file_plan(cfg):
            print(path)
        return EXIT_OK
    report = run_pipeline(cfg)
    sys.stdout.write(report.as_text())
    return EXIT_OK


def _cmd_split(args) -> int:
    if args.cases_file:
        with open(args.cases_file) as fh:
            cases = [line.strip() for line in fh if line.strip()]
    elif args.cases:
        cases = args.cases.split(",")
    else:
        raise ValidationError("split requires --cases or --cases-file")
    train, test = split_dataset(cases, args.ratio, args.seed)
    print("train:", ",".join(train))
    print("test:", ",".join(test))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="airtree", description="Airway-tree modeling pipeline"
    )
    parser.add_argument("--version", action="version", version=PARAMS_FORMAT_VERSION)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic phantom volume + truth mask")
    p.add_argument("--kind", required=True,
                   choices=["straight-tube", "bent-tube", "bifurcation", "blob", "plate"])
    p.add_argument("--radius", type=float, required=True)
    p.add_argument("--dims", default="32,32,32")
    p.add_argument("--spacing", default="1,1,1")
    p.add_argument("--profile", default="gaussian-cross-section",
                   choices=["hard", "gaussian-cross-section"])
    p.add_argument("--polarity", default="bright-on-dark",
                   choices=["bright-on-dark", "dark-on-bright"])
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-image", required=True)
    p.add_argument("--out-mask", required=True)
    p.set_defaults(fn=_cmd_synth)

    p = sub.add_parser("frangi", help="compute the multi-scale vesselness map")
    p.add_argument("--in", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--scales", default="0.5,1,2,3,4")
    p.add_argument("--alpha", type=float, default=0.5)
    p.add_argument("--beta", type=float, default=0.5)
    p.add_argument("--c", default="auto")
    p.add_argument("--polarity", default="dark", choices=["dark", "bright"])
    p.add_argument("--gamma", type=float, default=1.0)
    p.set_defaults(fn=_cmd_frangi)

    p = sub.add_parser("train", help="desk-scale training from a key=value config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("infer", help="dual-channel inference to a binary mask")
    p.add_argument("--params", required=True)
    p.add_argument("--ct", required=True)
    p.add_argument("--vessel", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.set_defaults(fn=_cmd_infer)

    p = sub.add_parser("postprocess", help="seeded region growing + largest component")
    p.add_argument("--in", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", help="x,y,z explicit seed overriding find_seed")
    p.add_argument("--strict", action="store_true")
    p.set_defaults(fn=_cmd_postprocess)

    p = sub.add_parser("evaluate", help="Dice and centerline metrics")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--centerline")
    p.add_argument("--branch-frac", type=float, default=0.8)
    p.add_argument("--report", required=True)
    p.set_defaults(fn=_cmd_evaluate)

    p = sub.add_parser("pipeline", help="normalize -> frangi -> infer -> postprocess -> evaluate")
    p.add_argument("--config", required=True)
    p.add_argument("--dry-run", action="store_true")
    p.set_defaults(fn=_cmd_pipeline)

    p = sub.add_parser("split", help="deterministic train/test split")
    p.add_argument("--cases", help="comma-separated case ids")
    p.add_argument("--cases-file", help="file with one case id per line")
    p.add_argument("--ratio", type=float, default=0.9)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=_cmd_split)
    return parser


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, EmptyMaskError):
        return EXIT_EMPTY_MASK
    if isinstance(exc, TrainingError) or isinstance(exc, FloatingPointError):
        return EXIT_NUMERIC
    if isinstance(exc, OSError):
        return EXIT_IO
    if isinstance(
        exc,
        (ValidationError, MhaParseError, MhaSizeError, UnsupportedTypeError, ShapeError),
    ):
        return EXIT_VALIDATION
    return 1


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc.cause)
    except Exception as exc:  # map to documented exit codes
        print(f"error: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
