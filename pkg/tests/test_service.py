"""HTTP service: endpoints, cache policy, windowing, concurrency."""

import base64
import json
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from fastapi.testclient import TestClient

import pointmatch as pm
from pointmatch.cli import main as cli_main
from pointmatch.config import EngineConfig
from pointmatch.search import SearchConfig
from pointmatch.service import PairCache, SessionPair, CacheFull, create_app, window_slice


@pytest.fixture(scope="module")
def fixture_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("svc_suite")
    spec = pm.PhantomSpec(dims=(48, 48, 32), spacing=(1.0, 1.0, 1.25), n_blobs=6)
    pm.generate_phantom_suite(out, seed=21, n_pairs=2, spec=spec)
    # constant volume for windowing checks
    const = pm.Volume(dims=(8, 8, 4), spacing=(1, 1, 1), origin=(0, 0, 0),
                      data=np.full((4, 8, 8), 1024.0, dtype=np.float32))
    pm.write_volume(const, out / "const1024.mha")
    return out


@pytest.fixture()
def client(fixture_dir):
    eng = EngineConfig(search=SearchConfig(levels=3, threads=1))
    with TestClient(create_app(eng)) as c:
        yield c


def make_pair(client, fixture_dir, idx=0):
    resp = client.post("/pairs", json={
        "source_path": str(fixture_dir / f"pair{idx:03d}_src.mha"),
        "target_path": str(fixture_dir / f"pair{idx:03d}_tgt.mha"),
    })
    assert resp.status_code == 200
    return resp.json()


class TestPairsEndpoint:
    def test_metadata_echo(self, client, fixture_dir):
        body = make_pair(client, fixture_dir)
        assert set(body) == {"pair_id", "source", "target"}
        assert body["source"]["dims"] == [48, 48, 32]
        assert body["source"]["spacing"] == [1.0, 1.0, 1.25]
        assert body["target"]["dims"] == [48, 48, 32]
        lo, hi = body["source"]["intensity_range"]
        assert lo < hi

    def test_nonexistent_path_422_names_path(self, client, fixture_dir):
        resp = client.post("/pairs", json={
            "source_path": str(fixture_dir / "ghost.mha"),
            "target_path": str(fixture_dir / "pair000_tgt.mha"),
        })
        assert resp.status_code == 422
        assert "ghost.mha" in resp.json()["detail"]

    def test_malformed_body_400(self, client):
        resp = client.post("/pairs", json={"source_path": 42})
        assert resp.status_code == 400

    def test_lru_eviction_of_idle_pairs(self, fixture_dir):
        eng = EngineConfig(search=SearchConfig(levels=1, threads=1), cache_pairs=2)
        with TestClient(create_app(eng)) as client:
            first = make_pair(client, fixture_dir, 0)
            second = make_pair(client, fixture_dir, 1)
            third = make_pair(client, fixture_dir, 0)  # evicts `first`
            ok = client.post(f"/pairs/{third['pair_id']}/match",
                             json={"point_mm": [24, 24, 20]})
            assert ok.status_code == 200
            gone = client.post(f"/pairs/{first['pair_id']}/match",
                               json={"point_mm": [24, 24, 20]})
            assert gone.status_code == 404

    def test_busy_cache_full_507(self, fixture_dir):
        eng = EngineConfig(search=SearchConfig(levels=1, threads=1), cache_pairs=1)
        with TestClient(create_app(eng)) as client:
            body = make_pair(client, fixture_dir, 0)
            app_cache = client.app.state.cache
            pair = app_cache.checkout(body["pair_id"])  # hold the slot busy
            try:
                resp = client.post("/pairs", json={
                    "source_path": str(fixture_dir / "pair001_src.mha"),
                    "target_path": str(fixture_dir / "pair001_tgt.mha"),
                })
                assert resp.status_code == 507
            finally:
                app_cache.checkin(pair)


class TestMatchEndpoint:
    def test_self_pair_match(self, fixture_dir):
        eng = EngineConfig(search=SearchConfig(levels=5, threads=1))
        with TestClient(create_app(eng)) as client:
            resp = client.post("/pairs", json={
                "source_path": str(fixture_dir / "pair000_src.mha"),
                "target_path": str(fixture_dir / "pair000_src.mha"),
            })
            pid = resp.json()["pair_id"]
            manifest = pm.read_manifest(fixture_dir / "manifest.jsonl")
            q = manifest[0].query
            resp = client.post(f"/pairs/{pid}/match",
                               json={"point_mm": [q.x, q.y, q.z]})
            assert resp.status_code == 200
            body = resp.json()
            err = np.linalg.norm(np.asarray(body["matched_point_mm"]) - np.asarray(q))
            assert err < 1.0
            assert body["elapsed_ms"] > 0
            assert len(body["per_level"]) == 5

    def test_unknown_pair_404(self, client):
        resp = client.post("/pairs/doesnotexist/match", json={"point_mm": [1, 2, 3]})
        assert resp.status_code == 404

    def test_out_of_bounds_point_422(self, client, fixture_dir):
        body = make_pair(client, fixture_dir)
        resp = client.post(f"/pairs/{body['pair_id']}/match",
                           json={"point_mm": [9999, 0, 0]})
        assert resp.status_code == 422

    def test_request_overrides(self, client, fixture_dir):
        body = make_pair(client, fixture_dir)
        resp = client.post(f"/pairs/{body['pair_id']}/match",
                           json={"point_mm": [24, 24, 20], "metric": "cosine",
                                 "levels": 1})
        assert resp.status_code == 200
        assert len(resp.json()["per_level"]) == 1
        resp = client.post(f"/pairs/{body['pair_id']}/match",
                           json={"point_mm": [24, 24, 20], "metric": "nope"})
        assert resp.status_code == 400

    def test_matches_cli_output(self, fixture_dir, capsys):
        src = fixture_dir / "pair000_src.mha"
        tgt = fixture_dir / "pair000_tgt.mha"
        point = [24.0, 26.0, 18.0]
        rc = cli_main(["match", str(src), str(tgt),
                       "--point", ",".join(str(v) for v in point),
                       "--levels", "3", "--threads", "1"])
        assert rc == 0
        cli_record = json.loads(capsys.readouterr().out)

        eng = EngineConfig(search=SearchConfig(levels=3, threads=1))
        with TestClient(create_app(eng)) as client:
            pid = client.post("/pairs", json={
                "source_path": str(src), "target_path": str(tgt),
            }).json()["pair_id"]
            svc = client.post(f"/pairs/{pid}/match", json={"point_mm": point}).json()
        assert svc["matched_point_mm"] == cli_record["matched_point_mm"]
        assert svc["score"] == cli_record["score"]
        for a, b in zip(svc["per_level"], cli_record["per_level"]):
            assert a["point_mm"] == b["point_mm"]
            assert a["score"] == b["score"]
            assert a["candidates"] == b["candidates"]

    def test_concurrent_matches_equal_serial(self, client, fixture_dir):
        body = make_pair(client, fixture_dir)
        pid = body["pair_id"]
        points = [[20 + i, 24, 18] for i in range(6)]

        def run(p):
            resp = client.post(f"/pairs/{pid}/match", json={"point_mm": p})
            assert resp.status_code == 200
            data = resp.json()
            return data["matched_point_mm"], data["score"]

        serial = [run(p) for p in points]
        with ThreadPoolExecutor(max_workers=6) as pool:
            concurrent = list(pool.map(run, points))
        assert serial == concurrent


class TestMapEndpoint:
    def test_level1_map_agrees_with_trace(self, client, fixture_dir):
        body = make_pair(client, fixture_dir)
        pid = body["pair_id"]
        point = [24.0, 24.0, 20.0]
        match = client.post(f"/pairs/{pid}/match",
                            json={"point_mm": point, "levels": 1}).json()
        smap = client.post(f"/pairs/{pid}/map",
                           json={"point_mm": point, "level": 1}).json()
        assert smap["argmax_point_mm"] == match["per_level"][0]["point_mm"]
        nx, ny, nz = smap["dims"]
        scores = np.frombuffer(base64.b64decode(smap["scores_b64"]), dtype="<f4")
        assert scores.size == nx * ny * nz
        assert np.float32(smap["max_score"]) == scores.max()


class TestSliceEndpoint:
    def make_const_pair(self, client, fixture_dir):
        resp = client.post("/pairs", json={
            "source_path": str(fixture_dir / "const1024.mha"),
            "target_path": str(fixture_dir / "const1024.mha"),
        })
        return resp.json()["pair_id"]

    def test_constant_volume_window_rounds_to_128(self, client, fixture_dir):
        pid = self.make_const_pair(client, fixture_dir)
        resp = client.get(f"/pairs/{pid}/slice", params={
            "volume": "source", "axis": "z", "index": 1, "window": "0,2048",
        })
        assert resp.status_code == 200
        body = resp.json()
        pixels = np.frombuffer(base64.b64decode(body["pixels_b64"]), dtype=np.uint8)
        # 1024/2048 -> 127.5 -> ties away from zero -> 128
        assert np.all(pixels == 128)
        assert body["width"] == 8 and body["height"] == 8
        assert body["plane_coord_mm"] == 1.0

    def test_degenerate_window_thresholds(self, client, fixture_dir):
        pid = self.make_const_pair(client, fixture_dir)
        get = lambda w: np.frombuffer(
            base64.b64decode(client.get(
                f"/pairs/{pid}/slice",
                params={"volume": "source", "axis": "z", "index": 0, "window": w},
            ).json()["pixels_b64"]), dtype=np.uint8)
        assert np.all(get("1024,1024") == 255)  # at/above threshold
        assert np.all(get("2000,2000") == 0)  # below threshold

    def test_index_out_of_range_416(self, client, fixture_dir):
        body = make_pair(client, fixture_dir)
        resp = client.get(f"/pairs/{body['pair_id']}/slice", params={
            "volume": "source", "axis": "z", "index": 32, "window": "0,100",
        })
        assert resp.status_code == 416

    def test_bad_params_400(self, client, fixture_dir):
        body = make_pair(client, fixture_dir)
        pid = body["pair_id"]
        assert client.get(f"/pairs/{pid}/slice", params={
            "volume": "source", "axis": "w", "index": 0, "window": "0,1",
        }).status_code == 400
        assert client.get(f"/pairs/{pid}/slice", params={
            "volume": "nothing", "axis": "z", "index": 0, "window": "0,1",
        }).status_code == 400
        assert client.get(f"/pairs/{pid}/slice", params={
            "volume": "source", "axis": "z", "index": 0, "window": "0;1",
        }).status_code == 400

    def test_axis_geometry(self, client, fixture_dir):
        body = make_pair(client, fixture_dir)
        pid = body["pair_id"]
        y_slice = client.get(f"/pairs/{pid}/slice", params={
            "volume": "source", "axis": "y", "index": 4, "window": "0,500",
        }).json()
        assert y_slice["width"] == 48 and y_slice["height"] == 32
        assert y_slice["col_axis"] == "x" and y_slice["row_axis"] == "z"
        assert y_slice["row_spacing_mm"] == 1.25


class TestWindowSlice:
    def test_linear_map_and_clamp(self):
        plane = np.array([[-100.0, 0.0, 50.0, 100.0, 200.0]], dtype=np.float32)
        got = window_slice(plane, 0.0, 100.0)
        assert got.tolist() == [[0, 0, 128, 255, 255]]  # 127.5 ties away -> 128

    def test_exact_endpoints(self):
        plane = np.array([[0.0, 100.0]], dtype=np.float32)
        assert window_slice(plane, 0.0, 100.0).tolist() == [[0, 255]]


class TestPairCache:
    def test_evicts_oldest_idle(self):
        cache = PairCache(capacity=2)
        mk = lambda pid: SessionPair(pair_id=pid, source=None, target=None,
                                     created_at=0.0)
        a, b, c = mk("a"), mk("b"), mk("c")
        cache.add(a)
        cache.add(b)
        held = cache.checkout("a")
        cache.add(c)  # must evict b (idle), not a (busy)
        assert cache.checkout("b") is None
        assert cache.checkout("c") is not None
        cache.checkin(held)

    def test_raises_when_all_busy(self):
        cache = PairCache(capacity=1)
        a = SessionPair(pair_id="a", source=None, target=None, created_at=0.0)
        cache.add(a)
        cache.checkout("a")
        with pytest.raises(CacheFull):
            cache.add(SessionPair(pair_id="b", source=None, target=None,
                                  created_at=0.0))
