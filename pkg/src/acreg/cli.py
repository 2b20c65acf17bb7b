"""Command-line interface tying the registration workflows together.

Exit codes: 0 success, 2 invalid input or configuration, 3 numerical
divergence, 4 I/O or file-format error. ``ACREG_THREADS`` caps how many
moving images the ``register`` command processes concurrently when given a
directory (default: all available cores).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from .autocontext import AutoContextConfig, register_auto_context
from .errors import DivergenceError, InvalidInputError, VolumeFormatError
from .loss import LossWeights
from .metrics import dice, rfp
from .nifti import read_volume, write_volume
from .optimizer import OptimizerConfig
from .phantom import GENERATOR_ID, PhantomSpec, make_pair
from .transform import compose, integrate_svf, jacobian_determinant, warp_labels, warp_scalar
from .volume import TISSUE_LABELS, TISSUE_NAMES

DIAGNOSTICS_COLUMNS = ("iteration", "dsc_gm", "dsc_wm", "rfp_percent",
                       "sim", "reg_v", "reg_j", "total")

_CONFIG_KEYS = {
    "learning_rate": float,
    "max_iterations": int,
    "pyramid_factors": tuple,
    "squaring_steps": int,
    "ncc_window": int,
    "lambda_sim": float,
    "lambda_v": float,
    "lambda_j": float,
    "sigma_soft": float,
    "n_autocontext": int,
    "seed": int,
}


def _thread_cap():
    value = os.environ.get("ACREG_THREADS", "")
    if value:
        try:
            cap = int(value)
        except ValueError:
            raise InvalidInputError(f"ACREG_THREADS must be an integer, got {value!r}")
        if cap < 1:
            raise InvalidInputError(f"ACREG_THREADS must be >= 1, got {cap}")
        return cap
    return os.cpu_count() or 1


def load_config(path):
    """Parse a JSON config file, rejecting unknown keys."""
    try:
        with open(path) as fh:
            data = json.load(fh)
    except OSError as err:
        raise VolumeFormatError(f"{path}: cannot read config ({err})") from err
    except json.JSONDecodeError as err:
        raise InvalidInputError(f"{path}: invalid JSON ({err})") from err
    if not isinstance(data, dict):
        raise InvalidInputError(f"{path}: config must be a JSON object")
    unknown = sorted(set(data) - set(_CONFIG_KEYS))
    if unknown:
        raise InvalidInputError(f"{path}: unknown config keys {unknown}")
    out = {}
    for key, value in data.items():
        caster = _CONFIG_KEYS[key]
        try:
            out[key] = tuple(int(v) for v in value) if caster is tuple else caster(value)
        except (TypeError, ValueError) as err:
            raise InvalidInputError(f"{path}: bad value for {key}: {value!r} ({err})") from err
    return out


def build_auto_context_config(options, iterations=None, early_stop=False):
    """Translate flat config-file options into an AutoContextConfig."""
    weights = LossWeights(
        lambda_sim=options.get("lambda_sim", 1.0),
        lambda_v=options.get("lambda_v", 1.0),
        lambda_j=options.get("lambda_j", 1.0),
    )
    opt_kwargs = {}
    for key in ("learning_rate", "max_iterations", "pyramid_factors",
                "squaring_steps", "ncc_window"):
        if key in options:
            opt_kwargs[key] = options[key]
    optimizer = OptimizerConfig(weights=weights, **opt_kwargs)
    n_iterations = iterations if iterations is not None else options.get("n_autocontext", 5)
    return AutoContextConfig(
        n_iterations=n_iterations,
        optimizer=optimizer,
        sigma_soft=options.get("sigma_soft", 1.0),
        early_stop=early_stop,
    )


def write_diagnostics_csv(path, diagnostics):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(DIAGNOSTICS_COLUMNS)
        for d in diagnostics:
            writer.writerow([
                d.iteration,
                f"{d.dsc_gm:.17g}",
                f"{d.dsc_wm:.17g}",
                f"{d.rfp_percent:.17g}",
                f"{d.loss.sim_term:.17g}",
                f"{d.loss.velocity_reg_term:.17g}",
                f"{d.loss.jacobian_reg_term:.17g}",
                f"{d.loss.total:.17g}",
            ])


def _register_one(moving_path, fixed, fixed_header, cfg, out_field, out_warped, diagnostics_path):
    moving, moving_header = read_volume(moving_path, expect="labels")
    result = register_auto_context(moving, fixed, cfg)
    if out_field:
        write_volume(out_field, result.final_field, like=fixed_header)
    if out_warped:
        write_volume(out_warped, result.warped_labels, like=fixed_header)
    if diagnostics_path:
        write_diagnostics_csv(diagnostics_path, result.diagnostics)


def _cmd_register(args):
    options = load_config(args.config) if args.config else {}
    cfg = build_auto_context_config(options, args.iterations, args.early_stop)
    fixed, fixed_header = read_volume(args.fixed, expect="labels")

    moving_path = Path(args.moving)
    if not moving_path.is_dir():
        _register_one(args.moving, fixed, fixed_header, cfg,
                      args.out_field, args.out_warped, args.diagnostics)
        return 0

    # directory mode: register every .nii inside, outputs named per stem
    pairs = sorted(moving_path.glob("*.nii"))
    if not pairs:
        raise InvalidInputError(f"{args.moving}: no .nii files to register")
    for opt, name in ((args.out_field, "--out-field"), (args.out_warped, "--out-warped"),
                      (args.diagnostics, "--diagnostics")):
        if opt:
            Path(opt).mkdir(parents=True, exist_ok=True)

    def job(path):
        stem = path.stem
        _register_one(
            str(path), fixed, fixed_header, cfg,
            str(Path(args.out_field) / f"{stem}_field.nii") if args.out_field else None,
            str(Path(args.out_warped) / f"{stem}_warped.nii") if args.out_warped else None,
            str(Path(args.diagnostics) / f"{stem}.csv") if args.diagnostics else None,
        )

    with ThreadPoolExecutor(max_workers=min(_thread_cap(), len(pairs))) as pool:
        list(pool.map(job, pairs))
    return 0


def _cmd_warp(args):
    field, _ = read_volume(args.field, expect="displacement")
    if args.interp == "nearest":
        volume, header = read_volume(args.infile, expect="labels")
        warped = warp_labels(volume, field)
    else:
        volume, header = read_volume(args.infile, expect="scalar")
        warped = warp_scalar(volume, field)
    write_volume(args.out, warped, like=header)
    return 0


def _cmd_compose(args):
    a, header = read_volume(args.a, expect="displacement")
    b, _ = read_volume(args.b, expect="displacement")
    write_volume(args.out, compose(a, b), like=header)
    return 0


def _cmd_integrate(args):
    v, header = read_volume(args.velocity, expect="velocity")
    write_volume(args.out, integrate_svf(v, args.steps), like=header)
    return 0


def _cmd_jacobian(args):
    field, header = read_volume(args.field, expect="displacement")
    write_volume(args.out, jacobian_determinant(field), like=header)
    return 0


def _cmd_metrics(args):
    a, _ = read_volume(args.a, expect="labels")
    b, _ = read_volume(args.b, expect="labels")
    report = {}
    for label in TISSUE_LABELS:
        key = f"dice_{TISSUE_NAMES[label]}"
        try:
            report[key] = dice(a, b, label)
        except Exception:
            report[key] = None
    if args.field:
        field, _ = read_volume(args.field, expect="displacement")
        report["rfp_percent"] = rfp(field)
    with open(args.out, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


def _cmd_phantom(args):
    spec = PhantomSpec(size=args.size, seed=args.seed,
                       amplitude=args.amplitude, sigma=args.sigma)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    moving, fixed, truth = make_pair(spec)
    files = {"moving": "moving.nii", "fixed": "fixed.nii", "truth_field": "truth_field.nii"}
    write_volume(str(out_dir / files["moving"]), moving)
    write_volume(str(out_dir / files["fixed"]), fixed)
    write_volume(str(out_dir / files["truth_field"]), truth)
    manifest = {
        "size": spec.size,
        "seed": spec.seed,
        "amplitude": spec.amplitude,
        "sigma": spec.sigma,
        "generator": GENERATOR_ID,
        "files": files,
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="acreg",
        description="Diffeomorphic registration of tissue segmentation maps "
                    "with auto-context refinement.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("register", help="register a moving label volume (or directory) to a fixed one")
    p.add_argument("--moving", required=True, help="moving label volume, or a directory of .nii files")
    p.add_argument("--fixed", required=True)
    p.add_argument("--out-field", default=None)
    p.add_argument("--out-warped", default=None)
    p.add_argument("--iterations", type=int, default=None, help="auto-context iterations")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--diagnostics", default=None, help="per-iteration diagnostics CSV")
    p.add_argument("--early-stop", action="store_true",
                   help="stop when the mean DSC gain of an iteration falls below 0.001")
    p.set_defaults(func=_cmd_register)

    p = sub.add_parser("warp", help="apply a displacement field to a volume")
    p.add_argument("--in", dest="infile", required=True)
    p.add_argument("--field", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--interp", choices=("trilinear", "nearest"), default="trilinear")
    p.set_defaults(func=_cmd_warp)

    p = sub.add_parser("compose", help="compose two displacement fields (a applied after b)")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_compose)

    p = sub.add_parser("integrate", help="integrate a velocity field by scaling and squaring")
    p.add_argument("--velocity", required=True)
    p.add_argument("--steps", type=int, default=7)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_integrate)

    p = sub.add_parser("jacobian", help="Jacobian determinant map of a displacement field")
    p.add_argument("--field", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_jacobian)

    p = sub.add_parser("metrics", help="Dice per tissue between two label volumes, optional RFP")
    p.add_argument("--a", required=True)
    p.add_argument("--b", required=True)
    p.add_argument("--field", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_metrics)

    p = sub.add_parser("phantom", help="generate a synthetic pair with known deformation")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--amplitude", type=float, default=3.0)
    p.add_argument("--sigma", type=float, default=6.0)
    p.set_defaults(func=_cmd_phantom)

    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DivergenceError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3
    except (VolumeFormatError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 4
    except (InvalidInputError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
