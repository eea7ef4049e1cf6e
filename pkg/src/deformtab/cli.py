"""Command-line front end.

Exit codes: 0 success, 1 failed check or no output, 2 usage or input error.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

from .annotations import (
    AnnotationSet,
    annotation_sets_from_coco,
    annotation_sets_to_coco,
    dumps,
    load_annotation_set,
    save_annotation_set,
)
from .dataset import GeneratorConfig, generate_dataset, list_sources, split_dataset
from .errors import DeformtabError
from .imaging import ShadowParams, read_image, write_image
from .masknms import nms_annotation_sets
from .metrics import IOU_THRESHOLDS, evaluate_annotations
from .sampler import DeformationParams
from .tensor import inject_fault
from .warp import CylinderParams, WaveParams, composed_field, compose_warps

__all__ = ["main", "build_parser"]

EXIT_OK, EXIT_CHECK, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _emit(args, payload: dict, text: str | None = None) -> None:
    if args.json or text is None:
        print(json.dumps(payload, sort_keys=True))
    else:
        print(text)


def _read_json(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: malformed JSON ({exc})") from None


def _threshold(value: float, name: str) -> float:
    if not (math.isfinite(value) and 0 <= value <= 1):
        raise UsageError(f"{name} must lie in [0, 1], got {value}")
    return value


# -- generate ------------------------------------------------------------------------


def cmd_generate(args) -> int:
    src = Path(args.src)
    if not src.is_dir():
        raise UsageError(f"source directory {src} does not exist")
    if not list_sources(src):
        raise UsageError(f"no source images found in {src}")
    doc = _read_json(args.config) if args.config else {}
    if not isinstance(doc, dict):
        raise UsageError("config file must hold a JSON object")
    for key in ("variants", "max_attempts", "densify_step"):
        if getattr(args, key) is not None:
            doc[key] = getattr(args, key)
    config = GeneratorConfig.from_dict(doc)
    if not 0 < args.ratio < 1:
        raise UsageError(f"--ratio must lie in (0, 1), got {args.ratio}")
    if args.workers is not None and args.workers < 1:
        raise UsageError(f"--workers must be >= 1, got {args.workers}")

    out = Path(args.out)
    manifest = generate_dataset(src, out, config, seed=args.seed, workers=args.workers)
    produced = [item["image"] for item in manifest["items"] if item["status"] == "ok"]
    if not produced:
        _emit(args, {"produced": 0, "errors": len(manifest["errors"])}, "no images produced")
        return EXIT_CHECK
    train, test = split_dataset(produced, ratio=args.ratio, seed=args.seed)
    (out / "train.txt").write_text("".join(f"{p}\n" for p in train), encoding="utf-8")
    (out / "test.txt").write_text("".join(f"{p}\n" for p in test), encoding="utf-8")
    summary = {"produced": len(produced), "errors": len(manifest["errors"]), "train": len(train),
               "test": len(test), "out": str(out)}
    _emit(args, summary, f"wrote {len(produced)} images to {out} ({len(train)} train / {len(test)} test, "
                         f"{len(manifest['errors'])} failed)")
    return EXIT_OK


# -- warp ----------------------------------------------------------------------------


def _warp_params(args, width):
    wave = cylinder = shadow = None
    if args.amplitude is not None:
        wave = WaveParams(args.amplitude, args.wavelength)
    if args.factor is not None:
        cylinder = CylinderParams(args.factor, args.axis, width)
    if args.brightness is not None:
        cb, eb = args.brightness
        center = tuple(args.shadow_center) if args.shadow_center else (0.0, 0.0)
        shadow = ShadowParams(center, cb, eb)
    return DeformationParams(seed=0, wave=wave, cylinder=cylinder, shadow=shadow)


def _parse_pair(text, name, cast=float):
    try:
        a, b = (cast(v) for v in text.split(","))
    except ValueError:
        raise UsageError(f"{name} expects two comma-separated numbers, got {text!r}") from None
    return a, b


def cmd_warp(args) -> int:
    if args.image is None and args.probe is None:
        raise UsageError("warp needs an input image or --probe")
    if args.image is not None:
        img = read_image(args.image)
        size = img.size
    else:
        img = None
        size = _parse_pair(args.size, "--size", int)
    params = _warp_params(args, size[0])
    payload = {"params": params.to_dict()}

    if args.probe is not None:
        px, py = _parse_pair(args.probe, "--probe")
        field = composed_field(size, params.wave, params.cylinder)
        sx, sy = field.mapping(px, py)
        payload["probe"] = {"output": [px, py], "source": [round(float(sx), 6), round(float(sy), 6)]}

    if img is not None:
        if args.out is None:
            raise UsageError("warping an image needs --out")
        if args.annotations:
            ann = load_annotation_set(args.annotations)
        else:
            ann = AnnotationSet(image_id=1, width=img.width, height=img.height)
        out_img, out_ann = compose_warps(img, ann, params, densify_step=args.densify_step)
        write_image(args.out, out_img)
        payload["image"] = str(args.out)
        if args.annotations_out:
            save_annotation_set(args.annotations_out, out_ann)
            payload["annotations"] = str(args.annotations_out)
            payload["instances"] = len(out_ann.instances)

    text = None
    if "probe" in payload and img is None:
        text = "{} {}".format(*payload["probe"]["source"])
    elif img is not None:
        text = f"wrote {payload['image']}"
    _emit(args, payload, text)
    return EXIT_OK


# -- nms / eval ----------------------------------------------------------------------


def _load_scored(path):
    try:
        return annotation_sets_from_coco(_read_json(path), with_scores=True)
    except KeyError as exc:
        raise UsageError(f"{path}: missing field {exc}") from None


def cmd_nms(args) -> int:
    _threshold(args.threshold, "--threshold")
    sets, scores = _load_scored(args.candidates)
    kept = nms_annotation_sets(sets, scores, args.threshold)
    doc = annotation_sets_to_coco(kept, scores)
    before = sum(len(s.instances) for s in sets)
    after = sum(len(s.instances) for s in kept)
    if args.out:
        Path(args.out).write_text(dumps(doc), encoding="utf-8")
        _emit(args, {"candidates": before, "kept": after, "out": str(args.out)},
              f"kept {after} of {before} candidates")
    else:
        sys.stdout.write(dumps(doc))
    return EXIT_OK


def cmd_eval(args) -> int:
    sets, scores = _load_scored(args.pred)
    try:
        gt = annotation_sets_from_coco(_read_json(args.gt))
    except KeyError as exc:
        raise UsageError(f"{args.gt}: missing field {exc}") from None
    report = evaluate_annotations(gt, sets, scores, iou_type=args.iou_type, iou_thresholds=IOU_THRESHOLDS)
    print(json.dumps(report, sort_keys=True))
    return EXIT_OK


# -- selfcheck -----------------------------------------------------------------------


def cmd_selfcheck(args) -> int:
    from .selfcheck import format_table, run_checks

    if args.inject_fault:
        with inject_fault(args.inject_fault):
            results = run_checks(seed=args.seed)
    else:
        results = run_checks(seed=args.seed)
    failed = [r.name for r in results if not r.passed]
    payload = {"checks": [{"name": r.name, "error": r.error, "tol": r.tol, "passed": r.passed} for r in results],
               "failed": failed}
    text = format_table(results)
    if failed:
        text += "\nFAILED: " + ", ".join(failed)
    _emit(args, payload, text)
    return EXIT_CHECK if failed else EXIT_OK


# -- parser --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deformtab", description="Deformed-table data generation and evaluation.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", help="print machine-readable JSON on stdout")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="synthesize deformed variants of source tables")
    g.add_argument("src", help="directory of source images with <stem>.json COCO annotations")
    g.add_argument("out", help="output directory")
    g.add_argument("--config", help="JSON generator config (keys: variants, densify_step, max_attempts, sampler)")
    g.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    g.add_argument("--variants", type=int, help="deformed copies per source image (default 10)")
    g.add_argument("--max-attempts", dest="max_attempts", type=int, help="parameter redraws per variant")
    g.add_argument("--densify-step", dest="densify_step", type=float, help="max polygon edge length in pixels")
    g.add_argument("--ratio", type=float, default=0.8, help="training fraction of the split (default 0.8)")
    g.add_argument("--workers", type=int, help="worker processes (default: all CPUs)")
    g.set_defaults(func=cmd_generate)

    w = sub.add_parser("warp", parents=[common], help="apply explicit deformation parameters")
    w.add_argument("image", nargs="?", help="input image (PNG or JPEG)")
    w.add_argument("--annotations", help="COCO JSON for the input image")
    w.add_argument("--out", help="output image path")
    w.add_argument("--annotations-out", dest="annotations_out", help="output COCO JSON path")
    w.add_argument("--amplitude", type=float, help="wave amplitude in pixels (enables the wave)")
    w.add_argument("--wavelength", type=float, default=100.0, help="wave period in pixels (default 100)")
    w.add_argument("--factor", type=float, help="cylinder distortion factor (enables the cylinder)")
    w.add_argument("--axis", type=float, default=2.0, help="cylinder axis divisor, axis at width/axis (default 2)")
    w.add_argument("--brightness", type=float, nargs=2, metavar=("CENTER", "EDGE"),
                   help="shadow brightness at the center and at the far edge (enables the shadow)")
    w.add_argument("--shadow-center", dest="shadow_center", type=float, nargs=2, metavar=("X", "Y"))
    w.add_argument("--densify-step", dest="densify_step", type=float, default=8.0)
    w.add_argument("--size", default="100,100",
                   help="canvas WIDTH,HEIGHT for --probe without an image (default 100,100)")
    w.add_argument("--probe", help="print the source coordinate sampled for output point X,Y")
    w.set_defaults(func=cmd_warp)

    n = sub.add_parser("nms", parents=[common], help="mask NMS over scored COCO candidates")
    n.add_argument("candidates", help="COCO JSON whose annotations carry a score")
    n.add_argument("--threshold", type=float, default=0.5, help="suppress above this mask IoU (default 0.5)")
    n.add_argument("--out", help="write kept candidates here instead of stdout")
    n.set_defaults(func=cmd_nms)

    e = sub.add_parser("eval", parents=[common], help="mAP@50 and mAP@50:95 of scored predictions")
    e.add_argument("pred", help="scored COCO predictions")
    e.add_argument("gt", help="COCO ground truth")
    e.add_argument("--iou-type", dest="iou_type", choices=("mask", "box"), default="mask")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("selfcheck", parents=[common], help="run gradient, oracle and fixture checks")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--inject-fault", dest="inject_fault", choices=("conv_backward",),
                   help="deliberately break a backward pass (for testing the checker)")
    s.set_defaults(func=cmd_selfcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, DeformtabError) as exc:
        print(f"deformtab {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
