"""Batch evaluation of the matcher against annotated correspondence pairs.

Reads line-delimited annotation manifests (one JSON record per line with
pair id, cohort, volume paths, query/truth points and finding radius),
runs the hierarchical search on every pair, and aggregates the standard
metrics: per-pair Euclidean distance, sensitivity at the adaptive
threshold min(radius, 10 mm) (CPM@10mm), mean/median distance, FROC data
(sensitivity as a function of distance threshold, i.e. the cumulative
distribution of errors), and matching speed. Ablation sweeps rerun the
same pair set while varying one config axis (metric, levels, or threads).
"""

from __future__ import annotations

import json
import statistics
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .errors import EmptyInput, InvalidConfig, PointMatchError
from .sampling import SamplingModel
from .search import MatchResult, SearchConfig, match_point, prewarm_tables
from .similarity import SimilarityKind
from .volume import Volume, WorldPoint, load_volume

DEFAULT_FROC_THRESHOLDS_MM = tuple(np.arange(0.0, 25.0 + 1e-9, 0.5))
ADAPTIVE_THRESHOLD_CAP_MM = 10.0


@dataclass(frozen=True)
class AnnotationPair:
    """One ground-truth correspondence: query in source, truth in target."""

    pair_id: str
    cohort: str
    source_path: str
    target_path: str
    query: WorldPoint
    truth: WorldPoint
    radius_mm: float

    def __post_init__(self):
        if self.radius_mm <= 0:
            raise ValueError(f"radius_mm must be positive, got {self.radius_mm}")


def write_manifest(pairs: Sequence[AnnotationPair], path) -> None:
    """Write pairs as JSON lines; volume paths are kept as given."""
    path = Path(path)
    with open(path, "w", encoding="ascii") as fh:
        for p in pairs:
            record = {
                "pair_id": p.pair_id,
                "cohort": p.cohort,
                "source": p.source_path,
                "target": p.target_path,
                "query_mm": list(p.query),
                "truth_mm": list(p.truth),
                "radius_mm": p.radius_mm,
            }
            fh.write(json.dumps(record) + "\n")


def read_manifest(path) -> list[AnnotationPair]:
    """Read a JSON-lines manifest; relative volume paths resolve against it."""
    path = Path(path)
    base = path.parent
    pairs = []
    with open(path, "r", encoding="ascii") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
                pairs.append(
                    AnnotationPair(
                        pair_id=str(rec["pair_id"]),
                        cohort=str(rec.get("cohort", "")),
                        source_path=str(base / rec["source"]),
                        target_path=str(base / rec["target"]),
                        query=WorldPoint(*[float(v) for v in rec["query_mm"]]),
                        truth=WorldPoint(*[float(v) for v in rec["truth_mm"]]),
                        radius_mm=float(rec["radius_mm"]),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise EmptyInput(f"{path}:{lineno}: malformed record: {exc}") from exc
    if not pairs:
        raise EmptyInput(f"{path}: manifest has no records")
    return pairs


def convert_tracking_csv(path) -> list[AnnotationPair]:
    """Converter stub for public lesion-tracking annotation CSVs.

    Expects columns ``pair_id,cohort,source,target,x1,y1,z1,x2,y2,z2,radius``
    (query point in the source frame, truth in the target frame, mm). The
    public benchmark volumes themselves are not vendored; point this at a
    local copy.
    """
    path = Path(path)
    pairs = []
    with open(path, "r", encoding="ascii") as fh:
        header = fh.readline().strip().split(",")
        idx = {name: i for i, name in enumerate(header)}
        required = {"pair_id", "source", "target", "x1", "y1", "z1",
                    "x2", "y2", "z2", "radius"}
        missing = required - set(idx)
        if missing:
            raise EmptyInput(f"{path}: missing columns {sorted(missing)}")
        for line in fh:
            if not line.strip():
                continue
            cells = line.strip().split(",")
            pairs.append(
                AnnotationPair(
                    pair_id=cells[idx["pair_id"]],
                    cohort=cells[idx["cohort"]] if "cohort" in idx else "",
                    source_path=str(path.parent / cells[idx["source"]]),
                    target_path=str(path.parent / cells[idx["target"]]),
                    query=WorldPoint(*[float(cells[idx[c]]) for c in ("x1", "y1", "z1")]),
                    truth=WorldPoint(*[float(cells[idx[c]]) for c in ("x2", "y2", "z2")]),
                    radius_mm=float(cells[idx["radius"]]),
                )
            )
    if not pairs:
        raise EmptyInput(f"{path}: no annotation rows")
    return pairs


@dataclass(frozen=True)
class PairOutcome:
    pair_id: str
    cohort: str
    matched: WorldPoint
    distance_mm: float
    threshold_mm: float
    hit: bool
    seconds: float


@dataclass(frozen=True)
class CohortStats:
    count: int
    cpm: float
    mean_mm: float
    median_mm: float


@dataclass(frozen=True)
class EvalReport:
    """Aggregated evaluation results; all fields recomputable from outcomes."""

    outcomes: tuple[PairOutcome, ...]
    excluded: tuple[tuple[str, str], ...]  # (pair_id, reason)
    cpm: float
    mean_mm: float
    median_mm: float
    froc: tuple[tuple[float, float], ...]
    speed_s: float
    cohorts: dict[str, CohortStats]
    config_summary: dict

    @property
    def distances(self) -> list[float]:
        return [o.distance_mm for o in self.outcomes]

    def to_text(self) -> str:
        lines = ["# per-pair records"]
        for o in self.outcomes:
            lines.append(
                f"pair={o.pair_id} cohort={o.cohort} "
                f"matched={o.matched.x:.3f},{o.matched.y:.3f},{o.matched.z:.3f} "
                f"distance_mm={o.distance_mm:.4f} threshold_mm={o.threshold_mm:.2f} "
                f"hit={int(o.hit)} seconds={o.seconds:.4f}"
            )
        for pair_id, reason in self.excluded:
            lines.append(f"excluded={pair_id} reason={reason}")
        lines.append("# aggregate")
        lines.append(f"pairs={len(self.outcomes)} excluded={len(self.excluded)}")
        lines.append(f"cpm@10mm={self.cpm:.4f}")
        lines.append(f"mean_mm={self.mean_mm:.4f}")
        lines.append(f"median_mm={self.median_mm:.4f}")
        lines.append(f"speed_s={self.speed_s:.4f}")
        for name in sorted(self.cohorts):
            c = self.cohorts[name]
            lines.append(
                f"cohort={name} count={c.count} cpm={c.cpm:.4f} "
                f"mean_mm={c.mean_mm:.4f} median_mm={c.median_mm:.4f}"
            )
        for key in sorted(self.config_summary):
            lines.append(f"config.{key}={self.config_summary[key]}")
        return "\n".join(lines) + "\n"

    def write_text(self, path) -> None:
        Path(path).write_text(self.to_text(), encoding="ascii")

    def write_froc_csv(self, path) -> None:
        with open(path, "w", encoding="ascii") as fh:
            fh.write("threshold_mm,sensitivity\n")
            for t, s in self.froc:
                fh.write(f"{t},{s}\n")

    def to_dict(self) -> dict:
        return {
            "pairs": len(self.outcomes),
            "excluded": len(self.excluded),
            "cpm_at_10mm": self.cpm,
            "mean_mm": self.mean_mm,
            "median_mm": self.median_mm,
            "speed_s": self.speed_s,
            "config": self.config_summary,
        }


def median_lower(values: Sequence[float]) -> float:
    """Median with the lower-midpoint rule for even counts."""
    if not values:
        raise EmptyInput("median of empty sequence")
    ordered = sorted(values)
    return ordered[(len(ordered) - 1) // 2]


def froc_curve(
    distances: Sequence[float], thresholds: Sequence[float]
) -> list[tuple[float, float]]:
    """Sensitivity (fraction of distances <= t) at each threshold t."""
    if len(distances) == 0:
        raise EmptyInput("froc_curve requires at least one distance")
    if len(thresholds) == 0:
        raise EmptyInput("froc_curve requires at least one threshold")
    if any(b < a for a, b in zip(thresholds, thresholds[1:])):
        raise InvalidConfig("thresholds must be sorted ascending")
    d = np.asarray(distances, dtype=np.float64)
    n = d.size
    return [(float(t), float(np.count_nonzero(d <= t) / n)) for t in thresholds]


def _cohort_stats(outcomes: Sequence[PairOutcome]) -> CohortStats:
    dists = [o.distance_mm for o in outcomes]
    return CohortStats(
        count=len(outcomes),
        cpm=sum(o.hit for o in outcomes) / len(outcomes),
        mean_mm=statistics.fmean(dists),
        median_mm=median_lower(dists),
    )


def evaluate(
    pairs: Sequence[AnnotationPair],
    cfg: SearchConfig = SearchConfig(),
    model: SamplingModel = SamplingModel(),
    intensity_offset: float = 0.0,
    pair_workers: int = 1,
    froc_thresholds: Sequence[float] = DEFAULT_FROC_THRESHOLDS_MM,
    volumes: Optional[dict[str, Volume]] = None,
) -> EvalReport:
    """Run the matcher on every pair and aggregate the report.

    Volumes are loaded once per unique path (or taken from ``volumes`` if
    supplied) and offset tables are prewarmed, so the per-pair ``seconds``
    field measures matching only. Load failures exclude the pair with a
    recorded reason; they never abort the batch. The report lists outcomes
    in input order regardless of ``pair_workers``.
    """
    if not pairs:
        raise EmptyInput("evaluate requires at least one pair")
    cfg.validate()

    cache: dict[str, Volume] = dict(volumes) if volumes else {}
    excluded: list[tuple[str, str]] = []
    runnable: list[AnnotationPair] = []
    for p in pairs:
        try:
            for path in (p.source_path, p.target_path):
                if path not in cache:
                    cache[path] = load_volume(path, intensity_offset)
            runnable.append(p)
        except (PointMatchError, OSError) as exc:
            excluded.append((p.pair_id, str(exc)))
    if not runnable:
        raise EmptyInput("all pairs failed to load")

    prewarm_tables(cache.values(), cfg.levels, model)

    def run_one(p: AnnotationPair) -> PairOutcome:
        result: MatchResult = match_point(
            cache[p.source_path], cache[p.target_path], p.query, cfg, model
        )
        dist = euclidean_mm(result.point, p.truth)
        threshold = min(p.radius_mm, ADAPTIVE_THRESHOLD_CAP_MM)
        return PairOutcome(
            pair_id=p.pair_id,
            cohort=p.cohort,
            matched=result.point,
            distance_mm=dist,
            threshold_mm=threshold,
            hit=dist <= threshold,
            seconds=result.elapsed_s,
        )

    if pair_workers > 1:
        with ThreadPoolExecutor(max_workers=pair_workers) as pool:
            outcomes = list(pool.map(run_one, runnable))
    else:
        outcomes = [run_one(p) for p in runnable]

    dists = [o.distance_mm for o in outcomes]
    cohorts = {}
    for name in sorted({o.cohort for o in outcomes}):
        cohorts[name] = _cohort_stats([o for o in outcomes if o.cohort == name])
    return EvalReport(
        outcomes=tuple(outcomes),
        excluded=tuple(excluded),
        cpm=sum(o.hit for o in outcomes) / len(outcomes),
        mean_mm=statistics.fmean(dists),
        median_mm=median_lower(dists),
        froc=tuple(froc_curve(dists, list(froc_thresholds))),
        speed_s=statistics.fmean(o.seconds for o in outcomes),
        cohorts=cohorts,
        config_summary={
            "levels": cfg.levels,
            "metric": cfg.metric.value,
            "threads": cfg.threads,
            "grid_mm": cfg.level1_grid_mm,
        },
    )


def euclidean_mm(a: WorldPoint, b: WorldPoint) -> float:
    return float(np.sqrt((a.x - b.x) ** 2 + (a.y - b.y) ** 2 + (a.z - b.z) ** 2))


@dataclass(frozen=True)
class AblationSpec:
    """One sweep axis and its values (metric names, level or thread counts)."""

    sweep: str  # "metric" | "levels" | "threads"
    values: tuple

    def __post_init__(self):
        if self.sweep not in ("metric", "levels", "threads"):
            raise InvalidConfig(f"unknown sweep {self.sweep!r}")
        if not self.values:
            raise InvalidConfig("ablation needs at least one value")


def run_ablation(
    pairs: Sequence[AnnotationPair],
    base_cfg: SearchConfig,
    spec: AblationSpec,
    model: SamplingModel = SamplingModel(),
    intensity_offset: float = 0.0,
) -> list[EvalReport]:
    """One evaluation per sweep value on the same pair set."""
    reports = []
    for value in spec.values:
        if spec.sweep == "metric":
            kind = value if isinstance(value, SimilarityKind) else SimilarityKind.parse(str(value))
            cfg = replace(base_cfg, metric=kind)
        elif spec.sweep == "levels":
            cfg = replace(base_cfg, levels=int(value))
        else:
            cfg = replace(base_cfg, threads=int(value))
        cfg.validate()
        reports.append(evaluate(pairs, cfg, model, intensity_offset))
    return reports


def format_ablation_table(reports: Sequence[EvalReport], spec: AblationSpec) -> str:
    """Comparative table: one row per sweep value, cohort medians as columns."""
    cohort_names = sorted({name for r in reports for name in r.cohorts})
    header = [spec.sweep] + [f"median[{c}]" for c in cohort_names] + [
        "median[all]", "cpm@10mm", "mean_mm", "speed_s",
    ]
    rows = [header]
    for value, report in zip(spec.values, reports):
        row = [str(value)]
        for c in cohort_names:
            stats = report.cohorts.get(c)
            row.append(f"{stats.median_mm:.3f}" if stats else "-")
        row += [
            f"{report.median_mm:.3f}",
            f"{report.cpm:.3f}",
            f"{report.mean_mm:.3f}",
            f"{report.speed_s:.3f}",
        ]
        rows.append(row)
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
             for row in rows]
    return "\n".join(lines) + "\n"
