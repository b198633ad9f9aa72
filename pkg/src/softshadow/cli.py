"""``softshadow`` command line: trace, train, infer, extract-light, eval, composite, crops.

Exit codes: 0 ok, 1 usage, 2 I/O or format problem, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import imaging
from .dataset import DatasetError

log = logging.getLogger("softshadow")

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _floats(text: str, n: int) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers, got {text!r}")
    if len(vals) != n:
        raise argparse.ArgumentTypeError(f"expected {n} comma-separated numbers, got {len(vals)}")
    return vals


def _vec3(text):
    return _floats(text, 3)


def _affine(text):
    return _floats(text, 6)


def _threads(args) -> int | None:
    env = os.environ.get("NSF_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"NSF_THREADS must be an integer, got {env!r}")
    return args.threads


def _write_text_atomic(path, text: str) -> None:
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    try:
        tmp.write_text(text)
        os.replace(tmp, path)
    finally:
        if tmp.exists():
            tmp.unlink()


def _require_file(path) -> Path:
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"{p}: no such file")
    return p


def _direction(args) -> np.ndarray:
    if args.dir is not None:
        if args.theta is not None or args.phi is not None:
            raise UsageError("give either --dir or --theta/--phi, not both")
        try:
            return imaging.as_unit(args.dir)
        except ValueError as exc:
            raise UsageError(f"--dir: {exc}")
    if args.theta is None or args.phi is None:
        raise UsageError("a light direction is required: --dir x,y,z or --theta T --phi P")
    return imaging.direction_from_angles(math.radians(args.theta), math.radians(args.phi))


# --------------------------------------------------------------------------
# Subcommands


def cmd_trace_dataset(args) -> int:
    from .dataset import write_dataset
    from .tracer import TraceConfig, build_scene, direction_grid, set_threads, trace_dataset

    mesh = imaging.load_obj(_require_file(args.mesh))
    set_threads(_threads(args))
    cfg = TraceConfig(args.res, args.spp, math.radians(args.cone_deg / 2.0), args.seed)
    scene = build_scene(mesh)
    grid = direction_grid(args.theta_steps, args.phi_steps, args.theta_max)
    log.info("tracing %d directions at %dx%d, %d spp, plane side %.6g",
             len(grid), cfg.resolution, cfg.resolution, cfg.spp, scene.plane_side)
    textures = trace_dataset(scene, cfg, grid,
                             progress=lambda k, n: log.debug("traced %d/%d", k, n))
    info = {"spp": cfg.spp, "cone_half_angle_deg": args.cone_deg / 2.0, "seed": cfg.seed,
            "plane_side": scene.plane_side}
    write_dataset(args.out, textures, [(g.theta_deg, g.phi_deg) for g in grid], info, fmt=args.format)
    log.info("wrote %d textures to %s", len(textures), args.out)
    return EXIT_OK


def cmd_train(args) -> int:
    from .dataset import read_dataset
    from .neural import Architecture, EncodingConfig, TrainConfig, param_count, save_model, train

    textures = read_dataset(args.dataset)
    mode = "discrete" if args.discrete else "bilinear"
    cfg = TrainConfig(epochs=args.epochs, n_samples=args.n, lr=args.lr, gamma=args.gamma,
                      seed=args.seed, interpolation=mode)
    enc = EncodingConfig(args.l_pos, args.l_dir)
    arch = Architecture(args.s, args.h, enc)
    log.info("parameters: %d (s=%d, h=%d, input %d)", param_count(args.s, args.h, enc.size),
             args.s, args.h, enc.size)
    log.info("mode: %s", mode)
    log.info("textures: %d at %dx%d", len(textures), *textures[0].image.shape)

    rows = ["epoch,lr,mean_loss"]
    every = max(1, args.epochs // 20)

    def on_epoch(st):
        rows.append(f"{st.epoch},{st.lr!r},{st.mean_loss!r}")
        if st.epoch % every == 0 or st.epoch == args.epochs - 1:
            log.info("epoch %d lr %.3g loss %.6g (%.3fs/epoch)", st.epoch, st.lr, st.mean_loss, st.seconds)

    result = train(textures, cfg, arch, on_epoch=on_epoch)
    secs = [e.seconds for e in result.history]
    log.info("forward passes per epoch: %d", result.forward_passes // max(1, len(result.history)))
    if secs:
        log.info("mean seconds per epoch: %.4f", sum(secs) / len(secs))
    save_model(result.model, args.out)
    log_path = Path(args.log) if args.log else Path(args.out).with_suffix(".csv")
    _write_text_atomic(log_path, "\n".join(rows) + "\n")
    log.info("wrote model to %s and loss log to %s", args.out, log_path)
    return EXIT_OK


def cmd_infer(args) -> int:
    from .neural import load_model, render_texture

    model = load_model(_require_file(args.model))
    d = _direction(args)
    if d[2] <= 0.0:
        log.warning("light direction %s is at or below the horizon, outside the training domain", d)
    tex = render_texture(model, d, args.res)
    imaging.write_image(args.out, tex.image)
    log.info("wrote %dx%d texture to %s", args.res, args.res, args.out)
    return EXIT_OK


def _tone_mapper(args):
    from .lightprobe import tone_map

    if args.tone_map == "reinhard":
        return lambda img: tone_map(img, args.gamma)
    return lambda img: np.clip(img, 0.0, 1.0)


def cmd_extract_light(args) -> int:
    from .lightprobe import extract_light_params, warp_recenter

    pano = imaging.read_pfm(_require_file(args.panorama)).astype(np.float64)
    if pano.ndim != 3:
        raise imaging.ImageFormatError(f"{args.panorama}: expected an RGB (PF) panorama")
    if (args.theta is None) != (args.phi is None):
        raise UsageError("--theta and --phi must be given together")
    if args.theta is not None:
        pano = warp_recenter(pano, math.radians(args.theta), math.radians(args.phi), args.warp)
    params = extract_light_params(pano, rec709=args.rec709, tone_mapper=_tone_mapper(args),
                                  color_weights=args.color_weights)
    _write_text_atomic(args.out, params.to_json() + "\n")
    log.info("d=%s o=%.4f", np.round(params.d, 4).tolist(), params.o)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .metrics import MetricReport, evaluate

    a = imaging.read_image(_require_file(args.image_a))
    b = imaging.read_image(_require_file(args.image_b))
    if a.shape != b.shape:
        raise UsageError(f"image sizes differ: {a.shape} vs {b.shape}")
    report = evaluate(a, b)
    text = report.to_json()
    if args.out:
        _write_text_atomic(args.out, text + "\n")
    else:
        print(text)
    if args.csv:
        path = Path(args.csv)
        header = "image_a,image_b," + ",".join(MetricReport.CSV_FIELDS) + "\n"
        existing = path.read_text() if path.exists() else header
        _write_text_atomic(path, existing + f"{args.image_a},{args.image_b},{report.csv_row()}\n")
    return EXIT_OK


def cmd_composite(args) -> int:
    from .lightprobe import LightParams
    from .metrics import composite_shadow, placement_centered
    from .neural import load_model, render_texture

    photo = imaging.read_image(_require_file(args.photo))
    model = load_model(_require_file(args.model))
    try:
        light = LightParams.from_json(_require_file(args.light).read_text())
    except (KeyError, ValueError, TypeError) as exc:
        raise imaging.ImageFormatError(f"{args.light}: invalid light JSON ({exc})")
    if args.placement is not None:
        placement = np.array(args.placement).reshape(2, 3)
    else:
        h, w = photo.shape[:2]
        placement = placement_centered((w / 2.0, h / 2.0), min(w, h) / 2.0)
    if abs(np.linalg.det(placement[:, :2])) < 1e-12:
        raise UsageError("placement matrix is singular")
    d = np.asarray(light.d)
    if d[2] <= 0.0:
        log.warning("light direction %s is at or below the horizon, outside the training domain", d)
    tex = render_texture(model, d, args.res)
    out = composite_shadow(photo, tex, light.o, placement)
    if photo.ndim == 2:
        out = np.repeat(out[..., None], 3, -1)
    imaging.write_image(args.out, out)
    return EXIT_OK


def cmd_crops(args) -> int:
    from .lightprobe import crop_rectilinear, extract_light_params, sample_crop_specs, tone_map, warp_recenter

    pano = imaging.read_pfm(_require_file(args.panorama)).astype(np.float64)
    if pano.ndim != 3:
        raise imaging.ImageFormatError(f"{args.panorama}: expected an RGB (PF) panorama")
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    specs = sample_crop_specs(args.n, args.seed, args.fov, args.width, args.height)
    entries = []
    written = []
    try:
        for k, spec in enumerate(specs):
            crop = tone_map(crop_rectilinear(pano, spec))
            name = f"crop_{k:02d}.png"
            imaging.write_png(out_dir / name, crop)
            written.append(out_dir / name)
            entry = {"file": name, "theta_deg": spec.theta_deg, "phi_deg": spec.phi_deg,
                     "fov_deg": spec.fov_deg, "seed": args.seed}
            if args.labels:
                warped = warp_recenter(pano, math.radians(spec.theta_deg), math.radians(spec.phi_deg), args.warp)
                entry["light"] = json.loads(extract_light_params(warped).to_json())
            entries.append(entry)
        _write_text_atomic(out_dir / "crops.json", json.dumps({"crops": entries}, indent=2) + "\n")
    except BaseException:
        for p in written:
            p.unlink(missing_ok=True)
        raise
    log.info("wrote %d crops to %s", len(entries), out_dir)
    return EXIT_OK


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="softshadow", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-v", "--verbose", action="store_true")
    common.add_argument("--threads", type=int, default=None,
                        help="worker threads (NSF_THREADS overrides); results do not depend on it")
    common.add_argument("--seed", type=int, default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("trace-dataset", parents=[common], help="ray-trace ground-truth shadow textures for a mesh")
    t.add_argument("mesh")
    t.add_argument("out")
    t.add_argument("--res", type=int, default=256)
    t.add_argument("--spp", type=int, default=256)
    t.add_argument("--cone-deg", type=float, default=20.0, help="full opening angle of the light cone")
    t.add_argument("--format", choices=("pfm", "pgm"), default="pfm")
    t.add_argument("--theta-steps", type=int, default=10)
    t.add_argument("--phi-steps", type=int, default=30)
    t.add_argument("--theta-max", type=float, default=45.0)
    t.set_defaults(func=cmd_trace_dataset)

    t = sub.add_parser("train", parents=[common], help="fit a shadow network to a texture dataset")
    t.add_argument("dataset")
    t.add_argument("out")
    t.add_argument("--s", type=int, default=128)
    t.add_argument("--h", type=int, default=3)
    t.add_argument("--l-pos", type=int, default=10)
    t.add_argument("--l-dir", type=int, default=4)
    t.add_argument("--epochs", type=int, default=10000)
    t.add_argument("--n", type=int, default=256)
    t.add_argument("--lr", type=float, default=1e-3)
    t.add_argument("--gamma", type=float, default=0.99977)
    t.add_argument("--discrete", action="store_true", help="train on stored texels only")
    t.add_argument("--log", default=None, help="loss CSV path (default: model path with .csv)")
    t.set_defaults(func=cmd_train)

    t = sub.add_parser("infer", parents=[common], help="render a shadow texture from a trained model")
    t.add_argument("model")
    t.add_argument("out")
    t.add_argument("--dir", type=_vec3, default=None)
    t.add_argument("--theta", type=float, default=None, help="degrees from zenith")
    t.add_argument("--phi", type=float, default=None, help="azimuth, degrees")
    t.add_argument("--res", type=int, default=256)
    t.set_defaults(func=cmd_infer)

    t = sub.add_parser("extract-light", parents=[common], help="light parameters from an HDR panorama (PFM)")
    t.add_argument("panorama")
    t.add_argument("out")
    t.add_argument("--tone-map", choices=("reinhard", "clip"), default="reinhard")
    t.add_argument("--gamma", type=float, default=2.2)
    t.add_argument("--rec709", action="store_true", help="standard Rec. 709 luma channel order")
    t.add_argument("--color-weights", choices=("intensity", "solid_angle"), default="intensity")
    t.add_argument("--theta", type=float, default=None, help="recentre on this polar angle (degrees) first")
    t.add_argument("--phi", type=float, default=None, help="recentre on this azimuth (degrees) first")
    t.add_argument("--warp", type=float, default=0.4, help="translation warp strength in [0, 1)")
    t.set_defaults(func=cmd_extract_light)

    t = sub.add_parser("eval", parents=[common], help="compare two images")
    t.add_argument("image_a")
    t.add_argument("image_b")
    t.add_argument("--out", default=None, help="write the JSON report here instead of stdout")
    t.add_argument("--csv", default=None, help="append a CSV row to this file")
    t.set_defaults(func=cmd_eval)

    t = sub.add_parser("composite", parents=[common], help="darken a photo with a rendered shadow texture")
    t.add_argument("photo")
    t.add_argument("model")
    t.add_argument("light")
    t.add_argument("out")
    t.add_argument("--placement", type=_affine, default=None,
                   help="a,b,c,d,e,f: texture (u,v) -> photo (x,y) = [[a,b],[d,e]] (u,v) + (c,f)")
    t.add_argument("--res", type=int, default=256)
    t.set_defaults(func=cmd_composite)

    t = sub.add_parser("crops", parents=[common], help="sample rectified crops (and light labels) from a panorama")
    t.add_argument("panorama")
    t.add_argument("out")
    t.add_argument("--n", type=int, default=8)
    t.add_argument("--fov", type=float, default=85.0)
    t.add_argument("--width", type=int, default=256)
    t.add_argument("--height", type=int, default=192)
    t.add_argument("--warp", type=float, default=0.4)
    t.add_argument("--labels", action="store_true", help="also extract light labels from warped panoramas")
    t.set_defaults(func=cmd_crops)
    return p


def main(argv=None) -> int:
    from .lightprobe import NoHighlightError
    from .neural import ModelFormatError, TrainingDiverged

    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        log.error("%s", exc)
        return EXIT_USAGE
    except (OSError, imaging.ImageFormatError, imaging.MeshError, DatasetError, ModelFormatError) as exc:
        log.error("%s", exc)
        return EXIT_IO
    except NoHighlightError as exc:
        log.error("%s", exc)
        return EXIT_NUMERIC
    except (TrainingDiverged, FloatingPointError, ArithmeticError) as exc:
        log.error("numeric failure: %s", exc)
        return EXIT_NUMERIC
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
