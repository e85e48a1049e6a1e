"""Command-line entry points.

Subcommands: synth, train-stage1, extract-mesh, train-stage2, render,
simulate, serve, check. Exit codes: 0 success, 1 usage error, 2 runtime
error. Config precedence: built-in defaults < --config JSON < flags; the
effective configuration is printed at startup for auditability.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .errors import MeshSplatError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"error: {message}\n")
        raise SystemExit(1)


def _add_common(p):
    p.add_argument("--threads", type=int, default=0,
                   help="cap math-library threads (1 = bitwise deterministic)")
    p.add_argument("--config", type=str, default=None,
                   help="JSON file overlaying training-config defaults")
    p.add_argument("--seed", type=int, default=None)


def build_parser() -> _Parser:
    p = _Parser(prog="meshsplat", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[], help="emit a synthetic dataset")
    s.add_argument("--kind", required=True,
                   choices=["static-sphere", "oscillating-sphere", "bending-bar"])
    s.add_argument("--resolution", type=int, default=64)
    s.add_argument("--frames", type=int, default=20)
    s.add_argument("--out", required=True)
    _add_common(s)

    s = sub.add_parser("train-stage1", help="fit Gaussians + time field")
    s.add_argument("--data", required=True, help="dataset directory")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--iterations", type=int, default=None)
    s.add_argument("--resume", type=str, default=None)
    _add_common(s)

    s = sub.add_parser("extract-mesh", help="isosurface from a stage-1 checkpoint")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--out", required=True, help="output mesh path (.obj or .ply)")
    s.add_argument("--resolution", type=int, default=None)
    s.add_argument("--iso-quantile", type=float, default=None)
    _add_common(s)

    s = sub.add_parser("train-stage2", help="fit the mesh-bound model")
    s.add_argument("--ckpt", required=True, help="stage-1 checkpoint")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--iterations", type=int, default=None)
    s.add_argument("--no-rdf", action="store_true",
                   help="disable the hover field (mesh-driven bake only)")
    _add_common(s)

    s = sub.add_parser("render", help="render a checkpoint to PNG")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--t", type=float, default=0.0)
    s.add_argument("--rest", action="store_true",
                   help="stage-2 only: render the undeformed model")
    s.add_argument("--cam", type=str, default=None,
                   help="az,el,dist[,tx,ty,tz[,fov]] (radians/scene units)")
    s.add_argument("--width", type=int, default=256)
    s.add_argument("--height", type=int, default=256)
    _add_common(s)

    s = sub.add_parser("simulate", help="run a drag script to PNG frames")
    s.add_argument("--ckpt", required=True, help="stage-2 checkpoint")
    s.add_argument("--script", required=True, help="JSON steps file")
    s.add_argument("--out-dir", required=True)
    _add_common(s)

    s = sub.add_parser("serve", help="start the interactive simulation service")
    s.add_argument("--host", default="127.0.0.1")
    s.add_argument("--port", type=int, default=8000)
    s.add_argument("--ui-dir", default=None, help="static frontend directory")
    _add_common(s)

    s = sub.add_parser("check", help="finite-difference gradient audit")
    _add_common(s)
    return p


def _apply_threads(n: int):
    if n and n > 0:
        import threadpoolctl

        threadpoolctl.threadpool_limits(n)


def _load_config(args, **explicit):
    from .train import TrainConfig

    overlay = {}
    if args.config:
        with open(args.config) as f:
            overlay.update(json.load(f))
    if args.seed is not None:
        overlay["seed"] = args.seed
    for k, v in explicit.items():
        if v is not None:
            overlay[k] = v
    base = TrainConfig().to_dict()
    base.update(overlay)
    cfg = TrainConfig.from_dict(base)
    print("effective config:", json.dumps(cfg.to_dict(), sort_keys=True))
    return cfg


def parse_cam(spec: str | None, width: int, height: int, model_bbox=None):
    from .camera import orbit_camera

    target = np.zeros(3)
    fov = 0.8
    if model_bbox is not None:
        lo, hi = model_bbox
        target = (lo + hi) / 2.0
        radius = max(float(np.linalg.norm(hi - lo)) / 2.0, 1e-3)
        dist = 2.5 * radius / np.tan(fov / 2.0)
        az, el = 0.6, 0.35
    else:
        az, el, dist = 0.6, 0.35, 3.0
    if spec:
        parts = [float(x) for x in spec.split(",")]
        if len(parts) not in (3, 6, 7):
            raise MeshSplatError(
                "camera spec must be az,el,dist[,tx,ty,tz[,fov]]")
        az, el, dist = parts[0], parts[1], parts[2]
        if len(parts) >= 6:
            target = np.array(parts[3:6])
        if len(parts) == 7:
            fov = parts[6]
    return orbit_camera(az, el, dist, target, fov, width, height,
                        near=0.01, far=100.0)


def _cmd_synth(args) -> int:
    from .datasets import write_dnerf_dataset
    from .synth import synth_scene, FOV_X

    seed = args.seed if args.seed is not None else 0
    ds, meta, _ = synth_scene(args.kind, args.resolution, args.frames, seed)
    os.makedirs(args.out, exist_ok=True)
    write_dnerf_dataset(ds, args.out, FOV_X)
    with open(os.path.join(args.out, "meta.json"), "w") as f:
        json.dump(meta, f, sort_keys=True, indent=1)
    print(f"wrote {len(ds.frames)} frames to {args.out}")
    return 0


def _cmd_train_stage1(args) -> int:
    from .datasets import load_dnerf_dataset
    from .train import load_stage1, save_stage1, train_stage1

    cfg = _load_config(args, iterations=args.iterations)
    ds = load_dnerf_dataset(args.data)
    os.makedirs(args.out, exist_ok=True)
    state = None
    if args.resume:
        state, cfg = load_stage1(args.resume)
        if args.iterations is not None:
            from dataclasses import replace

            cfg = replace(cfg, iterations=args.iterations)
    state = train_stage1(ds, cfg, log_path=os.path.join(args.out, "metrics.jsonl"),
                         ckpt_dir=args.out, state=state)
    out = os.path.join(args.out, "stage1.ckpt")
    save_stage1(out, state, cfg)
    from .plyio import export_gaussians_ply
    from .train import activate

    export_gaussians_ply(activate(state.params),
                         os.path.join(args.out, "gaussians.ply"))
    print(f"stage-1 checkpoint: {out}")
    if state.metrics:
        print("final:", json.dumps(state.metrics[-1], sort_keys=True))
    return 0


def _cmd_extract_mesh(args) -> int:
    from .mesh import write_obj, write_ply
    from .meshing import extract_mesh
    from .train import activate, load_stage1

    state, cfg = load_stage1(args.ckpt)
    resolution = args.resolution or cfg.mesh_resolution
    quantile = args.iso_quantile if args.iso_quantile is not None else cfg.iso_quantile
    mesh = extract_mesh(activate(state.params), resolution, quantile)
    if args.out.endswith(".obj"):
        write_obj(mesh, args.out)
    else:
        write_ply(mesh, args.out)
    print(f"mesh: {mesh.num_vertices} vertices, {mesh.num_faces} faces -> {args.out}")
    return 0


def _cmd_train_stage2(args) -> int:
    from .datasets import load_dnerf_dataset
    from .meshing import extract_mesh
    from .train import activate, load_stage1, save_stage2, train_stage2

    state1, cfg1 = load_stage1(args.ckpt)
    cfg = _load_config(args, iterations=args.iterations)
    if args.no_rdf:
        from dataclasses import replace

        cfg = replace(cfg, rdf_enabled=False)
    ds = load_dnerf_dataset(args.data)
    os.makedirs(args.out, exist_ok=True)
    mesh = extract_mesh(activate(state1.params), cfg.mesh_resolution,
                        cfg.iso_quantile)
    print(f"extracted mesh: {mesh.num_vertices} vertices, {mesh.num_faces} faces")
    state = train_stage2(mesh, state1.field, ds, cfg,
                         log_path=os.path.join(args.out, "metrics.jsonl"),
                         ckpt_dir=args.out)
    out = os.path.join(args.out, "stage2.ckpt")
    save_stage2(out, state, cfg)
    print(f"stage-2 checkpoint: {out}")
    if state.metrics:
        print("final:", json.dumps(state.metrics[-1], sort_keys=True))
    return 0


def _cmd_render(args) -> int:
    from .checkpoint import load_checkpoint
    from .images import save_png

    stage, _, _ = load_checkpoint(args.ckpt)
    if stage == "stage1":
        from .train import load_stage1, stage1_forward

        state, cfg = load_stage1(args.ckpt)
        bbox = (state.params["mu"].min(0), state.params["mu"].max(0))
        cam = parse_cam(args.cam, args.width, args.height, bbox)
        use_field = state.iteration >= cfg.warm_up
        out, _ = stage1_forward(state, cam, args.t, use_field)
    else:
        from .service import rest_render
        from .train import load_stage2, stage2_render_at

        state, cfg = load_stage2(args.ckpt)
        v = state.model.mesh.vertices
        cam = parse_cam(args.cam, args.width, args.height, (v.min(0), v.max(0)))
        if args.rest:
            out = rest_render(state, cam)
        else:
            out = stage2_render_at(state, cam, args.t, cfg)
    if args.out.endswith(".f32"):
        from .images import save_float_image

        save_float_image(args.out, out.color)
    else:
        save_png(args.out, out.color)
    print(f"wrote {args.out}")
    return 0


def _cmd_simulate(args) -> int:
    from .images import save_png
    from .service import SimSession
    from .train import load_stage2

    state, cfg = load_stage2(args.ckpt)
    session = SimSession(state, cfg)
    with open(args.script) as f:
        script = json.load(f)
    os.makedirs(args.out_dir, exist_ok=True)
    frame_idx = 0
    for step in script.get("steps", []):
        kind = step.get("type")
        if kind == "drag":
            summary = session.apply_drag(
                [{"vertex": step["vertex"], "target": step["target"]}],
                float(step.get("T", 1.0)))
            print("drag:", json.dumps(summary, sort_keys=True))
        elif kind == "time":
            session.set_time(float(step["t"]))
        elif kind == "render":
            v = state.model.mesh.vertices
            cam = parse_cam(step.get("cam"), int(step.get("w", 256)),
                            int(step.get("h", 256)), (v.min(0), v.max(0)))
            img = session.render(cam)
            name = step.get("out", f"frame_{frame_idx:04d}.png")
            save_png(os.path.join(args.out_dir, name), img.color)
            frame_idx += 1
        elif kind == "reset":
            session.reset()
        else:
            raise MeshSplatError(f"unknown simulate step type {kind!r}")
    print(f"wrote {frame_idx} frames to {args.out_dir}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import build_app

    app = build_app(ui_dir=args.ui_dir)
    print(f"listening on http://{args.host}:{args.port}")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def _cmd_check(args) -> int:
    from .gradcheck import TOLERANCE, run_all

    seed = args.seed if args.seed is not None else 0
    results = run_all(seed)
    ok = True
    for name, err in results.items():
        status = "PASS" if err <= TOLERANCE else "FAIL"
        ok &= err <= TOLERANCE
        print(f"{name}: max relative FD error {err:.3e} [{status}]")
    return 0 if ok else 2


COMMANDS = {
    "synth": _cmd_synth,
    "train-stage1": _cmd_train_stage1,
    "extract-mesh": _cmd_extract_mesh,
    "train-stage2": _cmd_train_stage2,
    "render": _cmd_render,
    "simulate": _cmd_simulate,
    "serve": _cmd_serve,
    "check": _cmd_check,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    _apply_threads(args.threads)
    try:
        return COMMANDS[args.command](args)
    except (MeshSplatError, ValueError, OSError) as e:
        sys.stderr.write(f"error: {e}\n")
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
