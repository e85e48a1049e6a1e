import numpy as np
import pytest
from fastapi.testclient import TestClient

from meshsplat.meshing import extract_mesh
from meshsplat.rasterizer import rasterize
from meshsplat.service import MAX_SESSIONS, SimSession, build_app, rest_render
from meshsplat.synth import synth_scene
from meshsplat.train import (activate, desk_scale_config, load_stage2,
                             save_stage1, save_stage2, train_stage1,
                             train_stage2)


@pytest.fixture(scope="module")
def checkpoints(tmp_path_factory):
    root = tmp_path_factory.mktemp("ckpts")
    ds, _, _ = synth_scene("static-sphere", resolution=24, frames=4, seed=0)
    cfg = desk_scale_config(iterations=120, warm_up=60, init_points=120,
                            eval_interval=120, mlp_hidden=16, spatial_freqs=4,
                            temporal_freqs=3, mesh_resolution=14,
                            handle_count=8, sh_degree=0,
                            densify_from=10_000)
    st1 = train_stage1(ds, cfg)
    p1 = root / "stage1.ckpt"
    save_stage1(p1, st1, cfg)
    mesh = extract_mesh(activate(st1.params), cfg.mesh_resolution, cfg.iso_quantile)
    from dataclasses import replace

    cfg2 = replace(cfg, iterations=30, warm_up=0)
    st2 = train_stage2(mesh, st1.field, ds, cfg2)
    p2 = root / "stage2.ckpt"
    save_stage2(p2, st2, cfg2)
    return str(p1), str(p2)


@pytest.fixture()
def client(checkpoints):
    app = build_app()
    with TestClient(app) as c:
        yield c, checkpoints


def make_session(client_fixture):
    c, (p1, p2) = client_fixture
    r = c.post("/sessions", json={"checkpoint": p2})
    assert r.status_code == 200, r.text
    body = r.json()
    assert body["state"] == "ready"
    assert len(body["session_id"]) == 32  # 128-bit hex id
    return c, body["session_id"], (p1, p2)


class TestSessions:
    def test_create_and_render(self, client):
        c, sid, _ = make_session(client)
        r = c.get(f"/sessions/{sid}/render", params={"w": 48, "h": 48})
        assert r.status_code == 200
        assert r.headers["content-type"] == "image/png"
        assert r.content[:8] == b"\x89PNG\r\n\x1a\n"

    def test_stage1_checkpoint_rejected(self, client):
        c, (p1, _) = client
        r = c.post("/sessions", json={"checkpoint": p1})
        assert r.status_code == 400
        body = r.json()
        assert body["code"] == "CheckpointError"
        assert "stage2" in body["message"]

    def test_capacity(self, client):
        c, (_, p2) = client
        sids = []
        for _ in range(MAX_SESSIONS):
            r = c.post("/sessions", json={"checkpoint": p2})
            if r.status_code == 200:
                sids.append(r.json()["session_id"])
            else:
                break
        r = c.post("/sessions", json={"checkpoint": p2})
        assert r.status_code == 429
        assert r.json()["code"] == "CapacityExceeded"
        for sid in sids:
            c.delete(f"/sessions/{sid}")

    def test_unknown_session_404(self, client):
        c, _ = client
        assert c.get("/sessions/ffff/mesh").status_code == 404

    def test_delete(self, client):
        c, sid, _ = make_session(client)
        assert c.delete(f"/sessions/{sid}").json() == {"deleted": True}
        assert c.get(f"/sessions/{sid}/mesh").status_code == 404


class TestDrag:
    def test_fresh_mesh_is_rest(self, client):
        c, sid, _ = make_session(client)
        m = c.get(f"/sessions/{sid}/mesh").json()
        assert np.array_equal(np.array(m["vertices"]), np.array(m["rest"]))
        assert len(m["handles"]) >= 1
        c.delete(f"/sessions/{sid}")

    def test_t_zero_is_exact_noop(self, client):
        c, sid, _ = make_session(client)
        params = {"w": 32, "h": 32, "cam": "0.4,0.3,3.0"}
        before = c.get(f"/sessions/{sid}/render", params=params).content
        m = c.get(f"/sessions/{sid}/mesh").json()
        hid = m["handles"][0]
        r = c.post(f"/sessions/{sid}/drag", json={
            "drags": [{"vertex": hid, "target": [9.0, 9.0, 9.0]}], "T": 0.0})
        assert r.status_code == 200
        assert r.json()["energy"] == 0.0
        after = c.get(f"/sessions/{sid}/render", params=params).content
        assert before == after
        m2 = c.get(f"/sessions/{sid}/mesh").json()
        assert m2["vertices"] == m["vertices"]
        c.delete(f"/sessions/{sid}")

    def test_drag_moves_handle_exactly(self, client):
        c, sid, _ = make_session(client)
        m = c.get(f"/sessions/{sid}/mesh").json()
        hid = m["handles"][0]
        rest = np.array(m["rest"][hid])
        target = (rest + [0.15, 0, 0]).tolist()
        r = c.post(f"/sessions/{sid}/drag", json={
            "drags": [{"vertex": hid, "target": target}], "T": 0.5})
        assert r.status_code == 200
        got = np.array(c.get(f"/sessions/{sid}/mesh").json()["vertices"][hid])
        expect = rest + 0.5 * np.array([0.15, 0, 0])
        assert np.abs(got - expect).max() < 1e-9
        c.delete(f"/sessions/{sid}")

    def test_invalid_handle(self, client):
        c, sid, _ = make_session(client)
        r = c.post(f"/sessions/{sid}/drag", json={
            "drags": [{"vertex": 10_000_000, "target": [0, 0, 0]}], "T": 1.0})
        assert r.status_code == 400
        assert r.json()["code"] == "InvalidHandle"
        c.delete(f"/sessions/{sid}")

    def test_intensity_range(self, client):
        c, sid, _ = make_session(client)
        m = c.get(f"/sessions/{sid}/mesh").json()
        r = c.post(f"/sessions/{sid}/drag", json={
            "drags": [{"vertex": m["handles"][0], "target": [0, 0, 0]}],
            "T": 3.0})
        assert r.status_code == 400
        c.delete(f"/sessions/{sid}")

    def test_repeat_render_identical(self, client):
        c, sid, _ = make_session(client)
        params = {"w": 40, "h": 40, "cam": "1.1,0.2,3.5"}
        a = c.get(f"/sessions/{sid}/render", params=params).content
        b = c.get(f"/sessions/{sid}/render", params=params).content
        assert a == b
        c.delete(f"/sessions/{sid}")


class TestTimeline:
    def test_scrub_revisit_identical(self, client):
        c, sid, _ = make_session(client)
        params = {"w": 32, "h": 32, "cam": "0.4,0.3,3.0"}
        c.post(f"/sessions/{sid}/time", json={"t": 0.5})
        a = c.get(f"/sessions/{sid}/render", params=params).content
        c.post(f"/sessions/{sid}/time", json={"t": 0.9})
        c.post(f"/sessions/{sid}/time", json={"t": 0.5})
        b = c.get(f"/sessions/{sid}/render", params=params).content
        assert a == b
        c.delete(f"/sessions/{sid}")

    def test_time_out_of_range(self, client):
        c, sid, _ = make_session(client)
        r = c.post(f"/sessions/{sid}/time", json={"t": 1.5})
        assert r.status_code == 400
        c.delete(f"/sessions/{sid}")


class TestLibraryEquivalence:
    def test_fresh_render_matches_offline(self, checkpoints):
        _, p2 = checkpoints
        state, cfg = load_stage2(p2)
        session = SimSession(state, cfg)
        cam = session.default_camera(48, 48)
        via_session = session.render(cam).color

        state2, cfg2 = load_stage2(p2)
        offline = rest_render(state2, cam).color
        assert np.array_equal(via_session, offline)

    def test_render_latency_budget(self, checkpoints):
        # 64x64 on a few-hundred-Gaussian model should stay under 100 ms
        import time

        _, p2 = checkpoints
        state, cfg = load_stage2(p2)
        session = SimSession(state, cfg)
        cam = session.default_camera(64, 64)
        session.render(cam)  # warm caches
        t0 = time.time()
        reps = 5
        for _ in range(reps):
            session.render(cam)
        per = (time.time() - t0) / reps
        assert per < 0.1, f"{per * 1000:.1f} ms per 64x64 render"


def test_static_ui_served_alongside_api(tmp_path, checkpoints):
    (tmp_path / "index.html").write_text("<html><body>editor</body></html>")
    app = build_app(ui_dir=str(tmp_path))
    with TestClient(app) as c:
        r = c.get("/")
        assert r.status_code == 200 and b"editor" in r.content
        assert c.get("/sessions/none/mesh").status_code == 404
