"""Local HTTP service for interactive deformation sessions.

Each session owns a loaded mesh-bound model, a persistent handle-target map,
and an immutable render snapshot. Mutations (drags, timeline moves) are
serialized per session; readers always see a complete snapshot, never a
half-updated state. All math goes through the same library calls the offline
pipeline uses.
"""

from __future__ import annotations

import secrets
import threading
from dataclasses import dataclass

import numpy as np

from .arap import handles_from_field
from .camera import Camera
from .errors import (CapacityExceeded, CheckpointError, InvalidHandle,
                     MeshSplatError)
from .images import encode_png
from .rasterizer import RenderOutput, rasterize
from .train import Stage2State, TrainConfig, load_stage2

MAX_SESSIONS = 16


@dataclass
class Snapshot:
    deformed: np.ndarray
    cloud: object
    energy: float
    iterations: int
    max_displacement: float


def rest_render(state: Stage2State, cam: Camera, background=(0.0, 0.0, 0.0)) -> RenderOutput:
    """Render the undeformed model (deformed buffer = rest, hover refreshed)."""
    model = state.model
    model.mesh.deformed = model.mesh.vertices.copy()
    model.refresh_hover()
    cloud, _ = model.bake_current()
    return rasterize(cloud, cam, background)


class SimSession:
    """One interactive model instance with serialized mutations."""

    def __init__(self, state: Stage2State, cfg: TrainConfig):
        self.state = state
        self.cfg = cfg
        self.model = state.model
        self.lock = threading.Lock()
        self.rest = self.model.mesh.vertices
        self.handle_ids = np.asarray(self.model.handle_ids, np.int64)
        self.targets = self.rest[self.handle_ids].copy()
        self._last_vertices = None
        self.snapshot = self._rest_snapshot()

    def _rest_snapshot(self) -> Snapshot:
        model = self.model
        model.mesh.deformed = model.mesh.vertices.copy()
        model.refresh_hover()
        cloud, _ = model.bake_current()
        return Snapshot(model.mesh.deformed, cloud, 0.0, 0, 0.0)

    def _commit(self, solution_vertices, energy, iterations):
        model = self.model
        model.mesh.deformed = solution_vertices
        model.refresh_hover()
        cloud, _ = model.bake_current()
        disp = float(np.linalg.norm(solution_vertices - self.rest, axis=1).max())
        self.snapshot = Snapshot(solution_vertices, cloud, energy, iterations, disp)

    def apply_drag(self, drags: list, intensity: float) -> dict:
        """Update handle targets (rest + T * (target - rest)) and re-solve."""
        if not 0.0 <= intensity <= 2.0:
            raise MeshSplatError(f"intensity {intensity} outside [0, 2]")
        with self.lock:
            new_targets = self.targets.copy()
            pos_of = {int(v): i for i, v in enumerate(self.handle_ids)}
            for d in drags:
                vid = int(d["vertex"])
                if vid not in pos_of:
                    if not 0 <= vid < self.model.mesh.num_vertices:
                        raise InvalidHandle(f"vertex {vid} outside the mesh")
                    raise InvalidHandle(f"vertex {vid} is not a handle")
                tgt = np.asarray(d["target"], float).reshape(3)
                rest = self.rest[vid]
                new_targets[pos_of[vid]] = rest + intensity * (tgt - rest)
            if np.array_equal(new_targets, self.targets):
                s = self.snapshot
                return {"energy": s.energy, "iterations": 0,
                        "max_displacement": s.max_displacement}
            self.targets = new_targets
            warm = self._last_vertices
            sol = self.state.arap.solve(self.targets, warm_start=warm,
                                        max_iterations=self.cfg.arap_iterations)
            self._last_vertices = sol.vertices
            self._commit(sol.vertices, sol.energy, sol.iterations)
            s = self.snapshot
            return {"energy": s.energy, "iterations": s.iterations,
                    "max_displacement": s.max_displacement}

    def set_time(self, t: float) -> dict:
        """Timeline playback: frozen time field drives the handles."""
        if not 0.0 <= t <= 1.0:
            raise MeshSplatError(f"timestamp {t} outside [0, 1]")
        with self.lock:
            model = self.model
            targets = handles_from_field(model.mesh, self.handle_ids, model.df, t)
            # solve from scratch so revisiting a timestamp is reproducible
            sol = self.state.arap.solve(targets, warm_start=None,
                                        max_iterations=self.cfg.arap_iterations)
            self.targets = targets
            self._last_vertices = sol.vertices
            self._commit(sol.vertices, sol.energy, sol.iterations)
            s = self.snapshot
            return {"t": t, "energy": s.energy, "iterations": s.iterations,
                    "max_displacement": s.max_displacement}

    def reset(self):
        with self.lock:
            self.targets = self.rest[self.handle_ids].copy()
            self._last_vertices = None
            self.snapshot = self._rest_snapshot()

    def render(self, cam: Camera, background=(0.0, 0.0, 0.0)) -> RenderOutput:
        return rasterize(self.snapshot.cloud, cam, background)

    def mesh_payload(self) -> dict:
        snap = self.snapshot
        return {
            "vertices": snap.deformed.tolist(),
            "rest": self.rest.tolist(),
            "faces": self.model.mesh.faces.tolist(),
            "handles": self.handle_ids.tolist(),
            "targets": self.targets.tolist(),
        }

    def default_camera(self, width: int, height: int) -> Camera:
        from .cli import parse_cam

        v = self.rest
        return parse_cam(None, width, height, (v.min(0), v.max(0)))


def build_app(ui_dir: str | None = None):
    from fastapi import FastAPI, Request
    from fastapi.responses import JSONResponse, Response

    app = FastAPI(title="meshsplat sim service")
    sessions: dict[str, SimSession] = {}
    registry_lock = threading.Lock()

    def error_response(exc: Exception, status: int):
        return JSONResponse({"code": type(exc).__name__, "message": str(exc)},
                            status_code=status)

    @app.exception_handler(MeshSplatError)
    def _handle_known(request: Request, exc: MeshSplatError):
        status = 400
        if isinstance(exc, CapacityExceeded):
            status = 429
        elif isinstance(exc, InvalidHandle):
            status = 400
        elif isinstance(exc, CheckpointError):
            status = 400
        return error_response(exc, status)

    def get_session(sid: str) -> SimSession:
        s = sessions.get(sid)
        if s is None:
            raise KeyError(sid)
        return s

    @app.exception_handler(KeyError)
    def _handle_missing(request: Request, exc: KeyError):
        return JSONResponse({"code": "UnknownSession", "message": str(exc)},
                            status_code=404)

    @app.post("/sessions")
    def create_session(payload: dict):
        path = payload.get("checkpoint")
        if not path:
            raise MeshSplatError("body must carry {'checkpoint': <path>}")
        with registry_lock:
            if len(sessions) >= MAX_SESSIONS:
                raise CapacityExceeded(f"at most {MAX_SESSIONS} sessions")
            state, cfg = load_stage2(path)
            sid = secrets.token_hex(16)
            sessions[sid] = SimSession(state, cfg)
        return {"session_id": sid, "state": "ready"}

    @app.get("/sessions/{sid}/mesh")
    def get_mesh(sid: str):
        return get_session(sid).mesh_payload()

    @app.post("/sessions/{sid}/drag")
    def drag(sid: str, payload: dict):
        session = get_session(sid)
        drags = payload.get("drags")
        if not isinstance(drags, list) or not drags:
            raise MeshSplatError("body must carry a non-empty 'drags' list")
        return session.apply_drag(drags, float(payload.get("T", 1.0)))

    @app.post("/sessions/{sid}/time")
    def set_time(sid: str, payload: dict):
        if "t" not in payload:
            raise MeshSplatError("body must carry 't'")
        return get_session(sid).set_time(float(payload["t"]))

    @app.get("/sessions/{sid}/render")
    def render(sid: str, w: int = 512, h: int = 512, cam: str | None = None):
        from .cli import parse_cam

        session = get_session(sid)
        if cam:
            v = session.rest
            camera = parse_cam(cam, w, h, (v.min(0), v.max(0)))
        else:
            camera = session.default_camera(w, h)
        out = session.render(camera)
        return Response(content=encode_png(out.color), media_type="image/png")

    @app.delete("/sessions/{sid}")
    def delete(sid: str):
        with registry_lock:
            if sid not in sessions:
                raise KeyError(sid)
            del sessions[sid]
        return {"deleted": True}

    if ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app
