"""Command-line entry point.

Exit codes: 0 success, 2 data-level failure, 3 contract failure (schema or
id mismatch).
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import dataset
from .cell_geometry import fallback_detect, load_detections, save_detections
from .ensemble import decide, fuse_records, load_model_scores
from .errors import (
    GeometryError,
    IdMismatch,
    InsufficientTissue,
    MissingScores,
    MitoRBRError,
    SchemaError,
    TooFewPatients,
    UndefinedMetric,
)
from .image import read_png, write_png
from .pipeline import (
    PipelineConfig,
    evaluate_predictions,
    load_predictions,
    load_truth,
    run_pipeline,
)
from .rbr import RbrConfig, load_rbr_config, refine
from .stain_norm import (
    MacenkoParams,
    default_lab_target,
    default_stain_target,
    load_lab_stats,
    load_stain_profile,
    macenko_normalize,
    reinhard_normalize,
)

log = logging.getLogger("mitorbr")

EXIT_OK, EXIT_DATA, EXIT_CONTRACT = 0, 2, 3
CONTRACT_ERRORS = (SchemaError, GeometryError, IdMismatch, MissingScores)
DATA_ERRORS = (UndefinedMetric, InsufficientTissue, TooFewPatients)


def cmd_normalize(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    params = MacenkoParams()
    if args.method == "reinhard":
        target = load_lab_stats(args.target) if args.target else default_lab_target()
    else:
        target = load_stain_profile(args.target) if args.target else default_stain_target()
    failures = 0
    for path in map(Path, args.images):
        try:
            img = read_png(path)
            if args.method == "reinhard":
                result = reinhard_normalize(img, target)
            else:
                result = macenko_normalize(img, target, params)
            write_png(out / f"{path.stem}.png", result)
        except (OSError, ValueError, InsufficientTissue) as exc:
            failures += 1
            log.error("%s: %s: %s", path, type(exc).__name__, exc)
    return EXIT_DATA if failures else EXIT_OK


def cmd_detect(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    failures = 0
    for path in map(Path, args.images):
        try:
            d = fallback_detect(read_png(path), args.od_threshold, args.min_area, image_id=path.stem)
            save_detections(out / f"{path.stem}.json", d)
        except (OSError, ValueError) as exc:
            failures += 1
            log.error("%s: %s", path, exc)
    return EXIT_DATA if failures else EXIT_OK


def cmd_fuse(args) -> int:
    fused = fuse_records(load_model_scores(args.scores))
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image_id", "p_nmf", "p_amf", "label"])
        for image_id, score in fused.items():
            w.writerow([image_id, repr(score.p_nmf), repr(score.p_amf), decide(score, args.threshold).label.value])
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


def cmd_refine(args) -> int:
    """Refine a single image's fused score."""
    from .scores import ClassScore

    cfg = load_rbr_config(args.config) if args.config else RbrConfig()
    img = read_png(args.image) if args.image else None
    if img is not None and not args.no_macenko:
        try:
            img = macenko_normalize(img, default_stain_target() if not args.target else load_stain_profile(args.target))
        except InsufficientTissue:
            log.info("Macenko fit failed, analysing raw image")
    det = load_detections(args.detections) if args.detections else None
    score = ClassScore.from_nmf(args.p_nmf)
    res = refine(args.image_id or "", img, det, score, cfg)
    print(f"p_nmf={res.score.p_nmf!r} p_amf={res.score.p_amf!r} rule_id={res.outcome.rule_id.value} "
          f"confidence={res.outcome.confidence!r} modifier_applied={res.modifier_applied!r}"
          + (" unavailable" if res.unavailable else ""))
    return EXIT_DATA if res.unavailable else EXIT_OK


def _pipeline_config(args) -> PipelineConfig:
    cfg = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    for key in ("scores", "detections", "images", "truth", "manifest", "out", "debug_dir"):
        val = getattr(args, key)
        if val is not None:
            setattr(cfg, key, Path(val))
    if args.target is not None:
        cfg.stain_target = Path(args.target)
    if args.rbr is not None:
        cfg.rbr_enabled = args.rbr
    if args.workers is not None:
        cfg.workers = args.workers
    if args.threshold is not None:
        cfg.threshold = args.threshold
    if args.emit_provenance is not None:
        cfg.emit_provenance = args.emit_provenance
    if cfg.out is None:
        cfg.out = Path(".")
    cfg.__post_init__()
    return cfg


def cmd_pipeline(args) -> int:
    result = run_pipeline(_pipeline_config(args))
    if result.report is not None:
        print(result.report.table())
    return EXIT_OK


def cmd_evaluate(args) -> int:
    report = evaluate_predictions(load_predictions(args.predictions), load_truth(args.truth))
    if args.out:
        Path(args.out).write_text(report.to_json())
    else:
        sys.stdout.write(report.to_json())
    log.info("\n%s", report.table())
    return EXIT_OK


def cmd_split(args) -> int:
    entries = dataset.load_manifest(args.manifest)
    split = dataset.stratified_split(entries, args.fraction, args.seed)
    dataset.write_split(args.out or "/dev/stdout", split)
    return EXIT_OK


def cmd_dedup(args) -> int:
    entries = dataset.load_manifest(args.manifest)
    kept = dataset.dedup_overlap(entries)
    log.info("removed %d overlapping MIDOG25 entries", len(entries) - len(kept))
    dataset.write_manifest(args.out or "/dev/stdout", kept)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mitorbr", description="Mitotic-figure score refinement tools")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("normalize", help="stain-normalize PNG tiles")
    p.add_argument("images", nargs="*")
    p.add_argument("--method", choices=["reinhard", "macenko"], default="reinhard")
    p.add_argument("--target", help="LabStats or StainProfile JSON (default: bundled target)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_normalize)

    p = sub.add_parser("detect", help="run the classical fallback nucleus detector")
    p.add_argument("images", nargs="*")
    p.add_argument("--od-threshold", type=float, default=0.4)
    p.add_argument("--min-area", type=float, default=30.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("fuse", help="average per-model softmax scores")
    p.add_argument("--scores", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out")
    p.set_defaults(func=cmd_fuse)

    p = sub.add_parser("refine", help="refine one image's score")
    p.add_argument("--p-nmf", type=float, required=True)
    p.add_argument("--image")
    p.add_argument("--image-id")
    p.add_argument("--detections")
    p.add_argument("--config", help="RBR config JSON")
    p.add_argument("--target", help="StainProfile JSON")
    p.add_argument("--no-macenko", action="store_true", help="analyse the image as given")
    p.set_defaults(func=cmd_refine)

    p = sub.add_parser("pipeline", help="fuse, refine, decide and evaluate a batch")
    p.add_argument("--config")
    p.add_argument("--scores")
    p.add_argument("--detections")
    p.add_argument("--images")
    p.add_argument("--truth")
    p.add_argument("--manifest")
    p.add_argument("--out")
    p.add_argument("--debug-dir")
    p.add_argument("--target", help="StainProfile JSON for the refinement branch")
    p.add_argument("--seed", type=int, help="unused; the pipeline is deterministic")
    p.add_argument("--workers", type=int)
    p.add_argument("--threshold", type=float)
    p.add_argument("--rbr", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--emit-provenance", action=argparse.BooleanOptionalAction, default=None)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("evaluate", help="compute metrics for a predictions CSV")
    p.add_argument("--predictions", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("split", help="patient-level train/test split")
    p.add_argument("manifest")
    p.add_argument("--fraction", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("dedup", help="drop MIDOG25 images already in AMi-Br")
    p.add_argument("manifest")
    p.add_argument("--out")
    p.set_defaults(func=cmd_dedup)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CONTRACT_ERRORS as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_CONTRACT
    except DATA_ERRORS as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_DATA
    except MitoRBRError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
