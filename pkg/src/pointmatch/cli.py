"""Command-line entry points.

Subcommands: ``match`` (one correspondence), ``eval`` (batch evaluation
against a manifest), ``ablate`` (config sweeps), ``phantom`` (synthetic
suite generation), ``map`` (similarity heatmap export), ``serve`` (HTTP
service). Machine-readable results go to stdout as JSON (or a plain table
for ``ablate``); diagnostics go to stderr. Exit codes: 0 success, 1
runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .config import build_config
from .errors import PointMatchError
from .harness import (
    AblationSpec,
    evaluate,
    format_ablation_table,
    read_manifest,
    run_ablation,
)
from .phantom import PhantomSpec, generate_phantom_suite
from .search import exhaustive_match, match_point, similarity_map
from .similarity import SimilarityKind
from .volume import WorldPoint, load_volume, write_volume


def _point(text: str) -> WorldPoint:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected x,y,z got {text!r}")
    try:
        return WorldPoint(*[float(p) for p in parts])
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _int_triple(text: str) -> tuple[int, int, int]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three integers, got {text!r}")
    try:
        return tuple(int(p) for p in parts)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _float_triple(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three numbers, got {text!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _metric(text: str) -> SimilarityKind:
    try:
        return SimilarityKind.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _values_list(text: str) -> tuple[str, ...]:
    values = tuple(v.strip() for v in text.split(",") if v.strip())
    if not values:
        raise argparse.ArgumentTypeError("expected a comma-separated list")
    return values


def _add_engine_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, default=None, help="key=value config file")
    p.add_argument("--metric", type=_metric, default=None,
                   help="similarity metric: cosine|euclidean|mi|combined")
    p.add_argument("--levels", type=int, default=None, help="search levels (default 5)")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: POINTMATCH_THREADS or 1)")
    p.add_argument("--intensity-offset", type=float, default=None,
                   help="value added to intensities on load (e.g. 1024)")


def _engine(args):
    overrides = {
        "metric": getattr(args, "metric", None),
        "levels": getattr(args, "levels", None),
        "threads": getattr(args, "threads", None),
        "intensity_offset": getattr(args, "intensity_offset", None),
    }
    if getattr(args, "grid", None) is not None:
        overrides["level1_grid_mm"] = args.grid
    return build_config(getattr(args, "config", None), overrides)


def _emit(record: dict) -> None:
    json.dump(record, sys.stdout)
    sys.stdout.write("\n")


def cmd_match(args) -> int:
    eng = _engine(args)
    source = load_volume(args.source, eng.intensity_offset)
    target = load_volume(args.target, eng.intensity_offset)
    result = match_point(source, target, args.point, eng.search, eng.model)
    record = {
        "source": str(args.source),
        "target": str(args.target),
        "query_mm": list(args.point),
        **result.to_dict(),
    }
    _emit(record)
    return 0


def cmd_eval(args) -> int:
    eng = _engine(args)
    pairs = read_manifest(args.pairs)
    report = evaluate(
        pairs, eng.search, eng.model, eng.intensity_offset,
        pair_workers=args.pair_workers,
    )
    if args.report:
        report.write_text(args.report)
    if args.froc:
        report.write_froc_csv(args.froc)
    _emit(report.to_dict())
    return 0


def cmd_ablate(args) -> int:
    eng = _engine(args)
    pairs = read_manifest(args.pairs)
    spec = AblationSpec(sweep=args.sweep, values=args.values)
    reports = run_ablation(pairs, eng.search, spec, eng.model, eng.intensity_offset)
    sys.stdout.write(format_ablation_table(reports, spec))
    if args.report_dir:
        out = Path(args.report_dir)
        out.mkdir(parents=True, exist_ok=True)
        for value, report in zip(spec.values, reports):
            report.write_text(out / f"{args.sweep}_{value}.txt")
    return 0


def cmd_phantom(args) -> int:
    spec = PhantomSpec()
    if args.dims is not None:
        spec = replace(spec, dims=args.dims)
    if args.spacing is not None:
        spec = replace(spec, spacing=args.spacing)
    pairs = generate_phantom_suite(
        args.out, args.seed, args.pairs, spec,
        both_directions=args.both_directions, mr_fraction=args.mr_fraction,
    )
    _emit({
        "out_dir": str(args.out),
        "manifest": str(Path(args.out) / "manifest.jsonl"),
        "pairs": len(pairs),
        "seed": args.seed,
    })
    return 0


def cmd_map(args) -> int:
    eng = _engine(args)
    source = load_volume(args.source, eng.intensity_offset)
    target = load_volume(args.target, eng.intensity_offset)
    grid = args.grid if args.grid is not None else eng.search.grid_mm(args.level)
    region = None
    if args.center is not None:
        if args.half_width is None:
            raise PointMatchError("--center requires --half-width")
        region = (WorldPoint(*args.center), args.half_width)
    smap = similarity_map(
        source, target, args.point, args.level, grid, region, eng.search, eng.model
    )
    write_volume(smap.to_volume(), args.out)
    best_point, best_score = smap.argmax_point()
    _emit({
        "out": str(args.out),
        "level": smap.level,
        "grid_mm": smap.grid_mm,
        "map_origin_mm": list(smap.origin),
        "map_dims": list(smap.scores.shape[::-1]),
        "argmax_point_mm": list(best_point),
        "max_score": best_score,
    })
    return 0


def cmd_serve(args) -> int:
    from .service import serve  # deferred: pulls in fastapi/uvicorn

    overrides = {
        "threads": args.threads,
        "intensity_offset": args.intensity_offset,
        "cache_pairs": args.cache,
        "port": args.port,
        "host": args.host,
    }
    eng = build_config(args.config, overrides)
    serve(eng)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pointmatch",
        description="Anatomical point correspondence between 3D volume pairs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("match", help="match one point from source to target")
    p.add_argument("source", type=Path)
    p.add_argument("target", type=Path)
    p.add_argument("--point", type=_point, required=True, help="query x,y,z in mm")
    p.add_argument("--grid", type=float, default=None, help="level-1 grid in mm")
    _add_engine_flags(p)
    p.set_defaults(func=cmd_match)

    p = sub.add_parser("eval", help="evaluate a manifest of annotated pairs")
    p.add_argument("--pairs", type=Path, required=True, help="JSONL manifest")
    p.add_argument("--report", type=Path, default=None, help="write text report here")
    p.add_argument("--froc", type=Path, default=None, help="write FROC CSV here")
    p.add_argument("--pair-workers", type=int, default=1)
    _add_engine_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="sweep one config axis over a manifest")
    p.add_argument("--pairs", type=Path, required=True)
    p.add_argument("--sweep", choices=("metric", "levels", "threads"), required=True)
    p.add_argument("--values", type=_values_list, required=True,
                   help="comma-separated sweep values")
    p.add_argument("--report-dir", type=Path, default=None)
    _add_engine_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("phantom", help="generate a synthetic annotated suite")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--pairs", type=int, required=True)
    p.add_argument("--both-directions", action="store_true")
    p.add_argument("--mr-fraction", type=float, default=0.0)
    p.add_argument("--dims", type=_int_triple, default=None, help="nx,ny,nz")
    p.add_argument("--spacing", type=_float_triple, default=None, help="sx,sy,sz mm")
    p.set_defaults(func=cmd_phantom)

    p = sub.add_parser("map", help="export a similarity heatmap volume")
    p.add_argument("source", type=Path)
    p.add_argument("target", type=Path)
    p.add_argument("--point", type=_point, required=True)
    p.add_argument("--level", type=int, default=1)
    p.add_argument("--grid", type=float, default=None,
                   help="grid spacing in mm (default: the level's grid)")
    p.add_argument("--center", type=_point, default=None,
                   help="map a box around this point instead of the whole volume")
    p.add_argument("--half-width", type=float, default=None, help="box half-width mm")
    p.add_argument("--out", type=Path, required=True)
    _add_engine_flags(p)
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("serve", help="run the HTTP matching service")
    p.add_argument("--host", default=None)
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--cache", type=int, default=None, help="pair cache capacity")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--intensity-offset", type=float, default=None)
    p.add_argument("--config", type=Path, default=None)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (PointMatchError, OSError) as exc:
        print(f"pointmatch: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
