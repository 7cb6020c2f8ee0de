"""Release acceptance suite.

One test per acceptance criterion, each printing a single
``ACCEPTANCE <name>: PASS|FAIL <figures>`` line (run pytest with -rA or -s
to see the lines for passing tests). Tolerances are pinned here and
nowhere else.

Note on the thread-speedup criterion: it requires wall time at 12 threads
to be strictly below 1 thread, which is physically impossible on a
single-core host (no parallel speedup exists to measure). The test states
the criterion faithfully and reports the measured times and core count
rather than weakening the assertion.
"""

import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from fastapi.testclient import TestClient

import pointmatch as pm
from pointmatch.cli import main as cli_main
from pointmatch.config import EngineConfig
from pointmatch.harness import AblationSpec, median_lower, run_ablation
from pointmatch.search import SearchConfig, prewarm_tables
from pointmatch.service import create_app
from pointmatch.similarity import SimilarityKind
from pointmatch.volume import VoxelPoint, WorldPoint

from conftest import make_random_volume, random_descriptor
from test_similarity import (
    oracle_cosine,
    oracle_euclidean,
    oracle_mi,
    uniform_16bin_descriptor,
)


def report(name: str, ok: bool, detail: str) -> None:
    print(f"ACCEPTANCE {name}: {'PASS' if ok else 'FAIL'} ({detail})")


# -------------------------------------------------------------------------
# Criterion: descriptor extraction matches an independent per-offset
# resampling oracle bit-exactly on >= 1000 random triples, in < 30 s.
# -------------------------------------------------------------------------

def oracle_descriptor(volume, model, level, q):
    """Per-offset resampling, independent of the production lookup path."""
    h = model.half_extent
    scale = 0.5 ** (level - 1)
    sx, sy, sz = volume.spacing
    nx, ny, nz = volume.dims
    flat = volume.flat
    values = []
    valid = []
    for r in model.resolutions_mm:
        for dz in range(-h, h + 1):
            for dy in range(-h, h + 1):
                for dx in range(-h, h + 1):
                    oi = math.trunc((v := dx * r * scale / sx) + math.copysign(0.5, v))
                    oj = math.trunc((v := dy * r * scale / sy) + math.copysign(0.5, v))
                    ok = math.trunc((v := dz * r * scale / sz) + math.copysign(0.5, v))
                    i, j, k = q.i + int(oi), q.j + int(oj), q.k + int(ok)
                    if 0 <= i < nx and 0 <= j < ny and 0 <= k < nz:
                        values.append(flat[k * nx * ny + j * nx + i])
                        valid.append(True)
                    else:
                        values.append(np.float32(0.0))
                        valid.append(False)
    return np.asarray(values, dtype=np.float32), np.asarray(valid)


def test_descriptor_oracle():
    rng = np.random.default_rng(2024)
    model = pm.SamplingModel()
    volumes = [
        make_random_volume(rng, (40, 36, 24), (0.8, 0.8, 5.0)),
        make_random_volume(rng, (30, 30, 30), (1.0, 1.0, 1.0)),
        make_random_volume(rng, (24, 40, 18), (1.7, 0.6, 3.3)),
        make_random_volume(rng, (50, 20, 26), (2.5, 2.5, 2.0)),
    ]
    n_triples = 1000
    t0 = time.perf_counter()
    mismatches = 0
    for _ in range(n_triples):
        volume = volumes[int(rng.integers(len(volumes)))]
        level = int(rng.integers(1, 7))
        q = VoxelPoint(*(int(rng.integers(-4, d + 4)) for d in volume.dims))
        table = pm.get_offset_table(model, volume.spacing, level)
        got = pm.extract_descriptor(volume, table, q)
        want_values, want_valid = oracle_descriptor(volume, model, level, q)
        if not (np.array_equal(got.values, want_values)
                and np.array_equal(got.valid, want_valid)):
            mismatches += 1
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 30.0
    report("descriptor-oracle", ok,
           f"{n_triples} triples, {mismatches} mismatches, {elapsed:.1f}s")
    assert mismatches == 0
    assert elapsed < 30.0


# -------------------------------------------------------------------------
# Criterion: default model arithmetic, exact equality.
# -------------------------------------------------------------------------

def test_model_arithmetic():
    model = pm.SamplingModel()
    dims_ok = model.dimension == 1372
    table_dims_ok = all(
        pm.build_offset_table(model, (1.3, 0.9, 2.4), level).dimension == 1372
        for level in range(1, 7)
    )
    max_ok = model.max_offset_mm(1) == 384.0
    eff_ok = model.effective_resolutions_mm(5) == (0.5, 1.25, 3.0, 8.0)
    ok = dims_ok and table_dims_ok and max_ok and eff_ok
    report("model-arithmetic", ok,
           f"dim={model.dimension}, max_offset={model.max_offset_mm(1)}mm, "
           f"level5={model.effective_resolutions_mm(5)}mm")
    assert dims_ok and table_dims_ok and max_ok and eff_ok


# -------------------------------------------------------------------------
# Criterion: similarity metrics vs brute-force oracles on 500 random pairs
# (cosine/euclidean 1e-6, MI 1e-9), exact MI symmetry, exact MI invariance
# under bin-preserving affine maps, MI(a,a)=ln16 for uniform bins; < 10 s.
# -------------------------------------------------------------------------

def test_similarity_oracles():
    rng = np.random.default_rng(777)
    t0 = time.perf_counter()
    worst_cos = worst_euc = worst_mi = 0.0
    symmetry_ok = True
    affine_ok = True
    for i in range(500):
        dim = 1372 if i % 10 == 0 else 250
        a = random_descriptor(rng, dim=dim, valid_fraction=0.75)
        b = random_descriptor(rng, dim=dim, valid_fraction=0.75)
        worst_cos = max(worst_cos, abs(pm.cosine_sim(a, b) - oracle_cosine(a, b)))
        worst_euc = max(worst_euc, abs(pm.euclidean_sim(a, b) - oracle_euclidean(a, b)))
        worst_mi = max(worst_mi, abs(pm.mutual_info(a, b) - oracle_mi(a, b)))
        if pm.mutual_info(a, b) != pm.mutual_info(b, a):
            symmetry_ok = False
        if i % 25 == 0:
            ai = random_descriptor(rng, dim=200, integer=True)
            bi = random_descriptor(rng, dim=200, valid_fraction=0.8)
            mapped = pm.Descriptor(
                values=ai.values * np.float32(4.0) + np.float32(7.0),
                valid=ai.valid,
            )
            if pm.mutual_info(mapped, bi) != pm.mutual_info(ai, bi):
                affine_ok = False
    u = uniform_16bin_descriptor()
    ln16_err = abs(pm.mutual_info(u, u) - math.log(16))
    elapsed = time.perf_counter() - t0
    ok = (worst_cos < 1e-6 and worst_euc < 1e-6 and worst_mi < 1e-9
          and symmetry_ok and affine_ok and ln16_err < 1e-9 and elapsed < 10.0)
    report("similarity-oracles", ok,
           f"500 pairs, cos err {worst_cos:.2e}, euc err {worst_euc:.2e}, "
           f"mi err {worst_mi:.2e}, ln16 err {ln16_err:.2e}, {elapsed:.1f}s")
    assert worst_cos < 1e-6
    assert worst_euc < 1e-6
    assert worst_mi < 1e-9
    assert symmetry_ok and affine_ok
    assert ln16_err < 1e-9
    assert elapsed < 10.0


# -------------------------------------------------------------------------
# Criterion: with levels=1, match_point equals exhaustive_match (point and
# score) on 100 random phantom pairs. Exact.
# -------------------------------------------------------------------------

def test_search_oracle_levels1_equals_exhaustive():
    metrics = list(SimilarityKind)
    mismatches = 0
    t0 = time.perf_counter()
    for seed in range(100):
        rng = np.random.default_rng([555, seed])
        dims = tuple(int(rng.integers(28, 40)) for _ in range(3))
        spacing = tuple(float(rng.uniform(1.2, 2.6)) for _ in range(3))
        spec = pm.PhantomSpec(dims=dims, spacing=spacing, n_blobs=5,
                              translation_max_mm=10.0, warp_amplitude_mm=2.0)
        src, tgt, _, query, _ = pm.build_phantom_pair(rng, spec)
        metric = metrics[seed % len(metrics)]
        cfg = SearchConfig(levels=1, metric=metric, threads=1)
        res = pm.match_point(src, tgt, query, cfg)
        point, score = pm.exhaustive_match(
            src, tgt, query, grid_mm=16.0, level=1, metric=metric
        )
        if res.point != point or res.score != score:
            mismatches += 1
    elapsed = time.perf_counter() - t0
    report("search-oracle", mismatches == 0,
           f"100 pairs, {mismatches} mismatches, {elapsed:.1f}s")
    assert mismatches == 0


# -------------------------------------------------------------------------
# Criteria: synthetic recovery on a 50-pair seed-fixed suite, and the
# search-levels ablation analog on the same suite.
# -------------------------------------------------------------------------

RECOVERY_SEED = 4242
RECOVERY_PAIRS = 50


@pytest.fixture(scope="module")
def recovery_sweep(tmp_path_factory):
    out = tmp_path_factory.mktemp("recovery_suite")
    pairs = pm.generate_phantom_suite(out, seed=RECOVERY_SEED,
                                      n_pairs=RECOVERY_PAIRS)
    base = SearchConfig(metric=SimilarityKind.COMBINED, threads=1)
    levels = (1, 2, 3, 4, 5, 6)
    t0 = time.perf_counter()
    reports = run_ablation(pairs, base, AblationSpec(sweep="levels", values=levels))
    wall = time.perf_counter() - t0
    return dict(zip(levels, reports)), wall


def test_synthetic_recovery(recovery_sweep):
    reports, _ = recovery_sweep
    rep = reports[5]
    dists = np.asarray(rep.distances)
    frac2mm = float((dists <= 2.0).mean())
    match_wall = rep.speed_s * len(dists)
    ok = (len(dists) == RECOVERY_PAIRS and frac2mm >= 0.9
          and rep.median_mm <= 1.5 and match_wall < 300.0)
    report("synthetic-recovery", ok,
           f"{len(dists)} pairs, {frac2mm:.0%} within 2mm, "
           f"median {rep.median_mm:.3f}mm, matching {match_wall:.0f}s")
    assert len(dists) == RECOVERY_PAIRS
    assert frac2mm >= 0.9
    assert rep.median_mm <= 1.5
    assert match_wall < 300.0


def test_levels_ablation_analog(recovery_sweep):
    reports, wall = recovery_sweep
    medians = {lv: reports[lv].median_mm for lv in sorted(reports)}
    seq_1_to_5 = [medians[lv] for lv in (1, 2, 3, 4, 5)]
    monotone = all(b <= a + 1e-12 for a, b in zip(seq_1_to_5, seq_1_to_5[1:]))
    detail = ", ".join(f"L{lv}={medians[lv]:.2f}mm" for lv in sorted(medians))
    report("levels-ablation", monotone, f"{detail}; sweep wall {wall:.0f}s")
    assert monotone  # level 6 is reported above but allowed to regress


# -------------------------------------------------------------------------
# Criteria: thread contract on a >= 256x256x64 phantom: bit-identical
# outputs across {1, 4, 12} threads; 12-thread wall < 1-thread wall;
# <= 1 s per match at 12 threads.
# -------------------------------------------------------------------------

@pytest.fixture(scope="module")
def thread_phantom():
    spec = pm.PhantomSpec(dims=(256, 256, 64), spacing=(1.0, 1.0, 2.0),
                          n_blobs=20, translation_max_mm=25.0)
    rng = np.random.default_rng(99)
    src, tgt, _, query, _ = pm.build_phantom_pair(rng, spec)
    prewarm_tables((src, tgt), 5)
    # warm the kernels on these shapes before anything is timed
    pm.match_point(src, tgt, query, SearchConfig(levels=2, threads=2))
    return src, tgt, query


def _timed_match(src, tgt, query, threads, repeats=3):
    cfg = SearchConfig(levels=5, threads=threads)
    times = []
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = pm.match_point(src, tgt, query, cfg)
        times.append(time.perf_counter() - t0)
    return result, sorted(times)[len(times) // 2]


def _trace_key(res):
    return (
        tuple(res.point), res.score,
        tuple((t.best_point, t.best_score, t.candidates_evaluated)
              for t in res.per_level),
    )


def test_thread_determinism(thread_phantom):
    src, tgt, query = thread_phantom
    keys = {}
    for threads in (1, 4, 12):
        res = pm.match_point(src, tgt, query, SearchConfig(levels=5, threads=threads))
        keys[threads] = _trace_key(res)
    ok = keys[1] == keys[4] == keys[12]
    report("thread-determinism", ok, "outputs bit-identical across {1,4,12} threads")
    assert ok


def test_thread_speedup(thread_phantom):
    src, tgt, query = thread_phantom
    _, t1 = _timed_match(src, tgt, query, threads=1)
    _, t12 = _timed_match(src, tgt, query, threads=12)
    ok = t12 < t1
    report("thread-speedup", ok,
           f"1 thread {t1:.3f}s vs 12 threads {t12:.3f}s on "
           f"{os.cpu_count()} CPU core(s)")
    assert ok, (
        f"12-thread wall {t12:.3f}s is not below 1-thread wall {t1:.3f}s; "
        f"host has {os.cpu_count()} CPU core(s), so no parallel speedup is "
        f"physically available"
    )


def test_thread_latency_target(thread_phantom):
    src, tgt, query = thread_phantom
    _, t12 = _timed_match(src, tgt, query, threads=12)
    ok = t12 <= 1.0
    report("thread-latency", ok, f"measured {t12:.3f}s per match at 12 threads")
    assert ok


# -------------------------------------------------------------------------
# Criterion: evaluate() reproduces hand-computed CPM under min(r, 10mm) on
# a 10-pair fixture; froc_curve matches hand counts. Exact.
# -------------------------------------------------------------------------

def test_metrics_arithmetic(tmp_path):
    spec = pm.PhantomSpec(dims=(40, 40, 28), spacing=(1.5, 1.5, 2.0), n_blobs=5)
    rng = np.random.default_rng(31)
    src, _, _, query, _ = pm.build_phantom_pair(rng, spec,
                                                pm.SmoothTransform.identity())
    path = tmp_path / "vol.mha"
    pm.write_volume(src, path)
    cfg = SearchConfig(levels=2, threads=1)
    base = pm.match_point(src, src, query, cfg).point

    # (offset mm, radius mm, expected hit under min(r, 10))
    cases = [
        (0.0, 20.0, True),   # threshold 10
        (5.0, 20.0, True),
        (9.0, 11.0, True),
        (10.0, 20.0, True),  # boundary: exactly at the cap
        (12.0, 20.0, False),
        (3.0, 4.0, True),    # threshold 4 (r < 10)
        (7.0, 4.0, False),
        (4.0, 4.0, True),    # boundary: exactly at r
        (15.0, 8.0, False),
        (2.5, 2.6, True),
    ]
    pairs = [
        pm.AnnotationPair(
            pair_id=f"c{i}", cohort="fixture", source_path=str(path),
            target_path=str(path), query=query,
            truth=WorldPoint(base.x + off, base.y, base.z), radius_mm=r,
        )
        for i, (off, r, _) in enumerate(cases)
    ]
    rep = pm.evaluate(pairs, cfg)
    expected_cpm = sum(hit for _, _, hit in cases) / len(cases)
    got_hits = [o.hit for o in rep.outcomes]
    hits_ok = got_hits == [hit for _, _, hit in cases]
    cpm_ok = rep.cpm == expected_cpm

    distances = [off for off, _, _ in cases]
    froc = pm.froc_curve(distances, [2.0, 5.0, 10.0, 25.0])
    # hand counts: d<=2: {0}; d<=5: {0,5,3,4,2.5}; d<=10: all but {12,15}
    froc_expected = [(2.0, 1 / 10), (5.0, 5 / 10), (10.0, 8 / 10), (25.0, 1.0)]
    froc_ok = froc == froc_expected
    mono_ok = all(b[1] >= a[1] for a, b in zip(rep.froc, rep.froc[1:]))

    ok = hits_ok and cpm_ok and froc_ok and mono_ok
    report("metrics-arithmetic", ok,
           f"cpm {rep.cpm:.2f} (expected {expected_cpm:.2f}), froc exact, monotone")
    assert hits_ok
    assert cpm_ok
    assert froc_ok
    assert mono_ok


# -------------------------------------------------------------------------
# Criterion: /match responses equal CLI match output on 20 fixture
# queries; concurrent requests are deterministic.
# -------------------------------------------------------------------------

@pytest.fixture(scope="module")
def service_fixture(tmp_path_factory):
    out = tmp_path_factory.mktemp("svc_acc")
    spec = pm.PhantomSpec(dims=(56, 56, 36), spacing=(1.2, 1.2, 1.6), n_blobs=8)
    pm.generate_phantom_suite(out, seed=61, n_pairs=1, spec=spec)
    return out / "pair000_src.mha", out / "pair000_tgt.mha"


def test_service_equivalence(service_fixture, capsys):
    src, tgt = service_fixture
    rng = np.random.default_rng(8)
    queries = [
        [float(rng.uniform(18, 48)), float(rng.uniform(18, 48)),
         float(rng.uniform(14, 42))]
        for _ in range(20)
    ]
    cli_records = []
    for q in queries:
        rc = cli_main(["match", str(src), str(tgt),
                       "--point", ",".join(repr(v) for v in q),
                       "--levels", "3", "--threads", "1"])
        assert rc == 0
        cli_records.append(json.loads(capsys.readouterr().out))

    eng = EngineConfig(search=SearchConfig(levels=3, threads=1))
    mismatches = 0
    with TestClient(create_app(eng)) as client:
        pid = client.post("/pairs", json={
            "source_path": str(src), "target_path": str(tgt),
        }).json()["pair_id"]
        for q, cli_rec in zip(queries, cli_records):
            svc = client.post(f"/pairs/{pid}/match", json={"point_mm": q}).json()
            same = (
                svc["matched_point_mm"] == cli_rec["matched_point_mm"]
                and svc["score"] == cli_rec["score"]
                and [l["point_mm"] for l in svc["per_level"]]
                == [l["point_mm"] for l in cli_rec["per_level"]]
                and [l["score"] for l in svc["per_level"]]
                == [l["score"] for l in cli_rec["per_level"]]
            )
            mismatches += 0 if same else 1

        def run(q):
            data = client.post(f"/pairs/{pid}/match", json={"point_mm": q}).json()
            return data["matched_point_mm"], data["score"]

        serial = [run(q) for q in queries[:8]]
        with ThreadPoolExecutor(max_workers=8) as pool:
            concurrent = list(pool.map(run, queries[:8]))
        concurrent_ok = serial == concurrent

    ok = mismatches == 0 and concurrent_ok
    report("service-equivalence", ok,
           f"20 queries, {mismatches} mismatches, concurrent==serial: {concurrent_ok}")
    assert mismatches == 0
    assert concurrent_ok
