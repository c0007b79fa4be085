"""Command line entry points: serve, replay, simulate, eval, gen-scene.

Configuration is a flat key=value text file overridden by flags; all
randomness flows from the single seed through named sub-streams so scene,
trajectory and noise are independently reproducible.  Exit codes: 0 success,
1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import socket
import sys
import threading
from dataclasses import dataclass, fields, replace

import numpy as np

from .components import ThresholdTable, export_component_plys, LabeledComponent
from .errors import ConfigurationError, SemfuseError
from .fusion import save_checkpoint
from .geometry import DEFAULT_CLASSES
from .interaction import format_action_line
from .metrics import ConfusionMatrix
from .pgm import read_pgm
from .plyio import read_ply, write_ply
from .scenegen import (DEFAULT_FOV_Y, SceneSpec, default_scene, generate_scene,
                       generate_trajectory, load_trajectory, save_trajectory)
from .segmentation import FileSource, NoiseModel, OracleSource
from .session import (ClientReport, DEFAULT_PORT, ServerConfig, ServerPipeline,
                      SessionState, client_replay, metrics_csv, serve_forever,
                      server_session)

log = logging.getLogger("semfuse")


@dataclass
class RunConfig:
    width: int = 896
    height: int = 504
    batch_size: int = 5
    chair_threshold: int = 30
    lamp_threshold: int = 5
    visibility_tolerance: float = 0.01
    near_skip_m: float = 2.0
    epsilon_floor: float = 1e-6
    port: int = DEFAULT_PORT
    seed: int = 0
    throttle_bytes_per_sec: float = 0.0  # 0 disables the throttle
    pacing: float = 0.0  # device frames per photo; 0 = as fast as possible
    n_frames: int = 24
    chairs: int = 2
    lamps: int = 1
    room_m: float = 4.0
    density: float = 800.0
    orbit_radius: float = 1.5
    fov_y_deg: float = math.degrees(DEFAULT_FOV_Y)
    noise_flip: float = 0.0
    concentration: float = 0.0  # 0 = infinitely peaked emissions
    queue_bound: int = 64
    select: str = "Lamp"  # scripted selection class for simulate; "" disables
    toggle_command: str = ""
    out: str = "out"

    def validate(self) -> "RunConfig":
        if not (0 < self.width and 0 < self.height):
            raise ConfigurationError("image size must be positive")
        if not (0 < self.batch_size):
            raise ConfigurationError("batch_size must be >= 1")
        if not (0 <= self.noise_flip < 1):
            raise ConfigurationError("noise_flip must be in [0, 1)")
        if not (0 < self.fov_y_deg < 180):
            raise ConfigurationError("fov_y_deg must be in (0, 180)")
        if not (0 <= self.port <= 65535):
            raise ConfigurationError("port out of range")
        if self.n_frames < 1:
            raise ConfigurationError("n_frames must be >= 1")
        return self

    def thresholds(self) -> ThresholdTable:
        return ThresholdTable({"Chair": self.chair_threshold, "Lamp": self.lamp_threshold})

    def server_config(self) -> ServerConfig:
        return ServerConfig(batch_size=self.batch_size,
                            thresholds=self.thresholds(),
                            class_set=DEFAULT_CLASSES,
                            near_skip_m=self.near_skip_m,
                            epsilon_floor=self.epsilon_floor,
                            visibility_tolerance=self.visibility_tolerance,
                            queue_bound=self.queue_bound,
                            toggle_command=self.toggle_command or None)

    def noise(self) -> NoiseModel:
        conc = math.inf if self.concentration <= 0 else self.concentration
        n = len(DEFAULT_CLASSES)
        if self.noise_flip > 0:
            return NoiseModel.uniform_flip(n, self.noise_flip, conc, seed=self.seed)
        return NoiseModel.identity(n, conc, seed=self.seed)


def load_config_file(path) -> dict:
    """Flat UTF-8 key=value lines; '#' starts a comment; unknown keys rejected."""
    known = {f.name: f.type for f in fields(RunConfig)}
    values = {}
    with open(path, encoding="utf-8") as fh:
        for ln, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{ln}: expected key=value")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key not in known:
                raise ConfigurationError(f"{path}:{ln}: unknown key {key!r}")
            values[key] = value
    return values


def _coerce(config: RunConfig, overrides: dict) -> RunConfig:
    typed = {}
    for f in fields(RunConfig):
        if f.name in overrides:
            raw = overrides[f.name]
            kind = type(getattr(config, f.name))
            try:
                typed[f.name] = kind(raw) if kind is not bool else raw in ("1", "true", "yes")
            except ValueError:
                raise ConfigurationError(f"bad value for {f.name}: {raw!r}") from None
    return replace(config, **typed)


def build_config(args) -> RunConfig:
    config = RunConfig()
    if getattr(args, "config", None):
        config = _coerce(config, load_config_file(args.config))
    overrides = {k: v for k, v in vars(args).items()
                 if k in {f.name for f in fields(RunConfig)} and v is not None}
    if getattr(args, "thresholds", None):
        for part in args.thresholds.split(","):
            name, _, value = part.partition("=")
            name = name.strip().lower()
            if name == "chair":
                overrides["chair_threshold"] = value
            elif name == "lamp":
                overrides["lamp_threshold"] = value
            else:
                raise ConfigurationError(f"unknown threshold class {name!r}")
    config = _coerce(config, {k: str(v) for k, v in overrides.items()})
    return config.validate()


def _scene_and_trajectory(config: RunConfig):
    spec = default_scene(seed=config.seed, chairs=config.chairs, lamps=config.lamps,
                         room=config.room_m, density=config.density)
    scene = generate_scene(spec)
    trajectory = generate_trajectory(
        scene, style="orbit", n_frames=config.n_frames, seed=config.seed,
        radius=config.orbit_radius, image_size=(config.width, config.height),
        fov_y=math.radians(config.fov_y_deg))
    return scene, trajectory


def _write_outputs(out_dir, pipeline: ServerPipeline, state: SessionState) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "metrics.csv"), "w") as fh:
        fh.write(metrics_csv(pipeline.metrics))
    with open(os.path.join(out_dir, "actions.log"), "w") as fh:
        for report in pipeline.action_reports:
            fh.write(format_action_line(report) + "\n")
    if pipeline.fusion is not None:
        save_checkpoint(pipeline.fusion, os.path.join(out_dir, "fused.ply"))
    if pipeline.last_components:
        export_component_plys(pipeline.last_components,
                              os.path.join(out_dir, "components"))


def cmd_gen_scene(args) -> int:
    config = build_config(args)
    scene, trajectory = _scene_and_trajectory(config)
    out = args.scene_out or "scene.ply"
    write_ply(out, scene)
    print(f"wrote {out}: {scene.n_vertices} vertices, {scene.n_triangles} triangles")
    if args.traj_out:
        save_trajectory(args.traj_out, trajectory)
        print(f"wrote {args.traj_out}: {len(trajectory)} poses")
    return 0


def cmd_serve(args) -> int:
    config = build_config(args)
    source = _make_source(args, config)
    pipeline = ServerPipeline(source, config.server_config())
    listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        listener.bind(("127.0.0.1", config.port))
    except OSError as exc:
        print(f"cannot bind port {config.port}: {exc}", file=sys.stderr)
        return 2
    listener.listen(1)
    print(f"listening on 127.0.0.1:{config.port}")
    try:
        state = serve_forever(listener, pipeline)
    finally:
        listener.close()
    _write_outputs(config.out, pipeline, state)
    print(f"session closed: {state.frames_received} frames, "
          f"{pipeline.batches_sent} batches, lamp_on={pipeline.actuator.lamp_on}")
    return 0


def _make_source(args, config: RunConfig):
    if getattr(args, "smap_dir", None):
        return FileSource(args.smap_dir, DEFAULT_CLASSES)
    if getattr(args, "scene", None):
        mesh, _, _ = read_ply(args.scene)
        return OracleSource(mesh, config.noise(), DEFAULT_CLASSES)
    # no recorded data: oracle over the seeded default scene
    scene, _ = _scene_and_trajectory(config)
    return OracleSource(scene, config.noise(), DEFAULT_CLASSES)


def cmd_replay(args) -> int:
    config = build_config(args)
    if args.scene:
        scene, _, _ = read_ply(args.scene)
    else:
        scene, _ = _scene_and_trajectory(config)
    if args.traj:
        trajectory = load_trajectory(args.traj, image_size=(config.width, config.height),
                                     fov_y=math.radians(config.fov_y_deg))
    else:
        _, trajectory = _scene_and_trajectory(config)
    conn = socket.create_connection((args.host, config.port))
    report = client_replay(
        conn, scene, trajectory,
        pacing_frames=config.pacing,
        throttle_bytes_per_sec=config.throttle_bytes_per_sec or None,
        select_class=config.select or None,
        expect_batches=config.n_frames // config.batch_size)
    conn.close()
    print(f"sent {report.frames_sent} frames ({report.bytes_out} bytes, "
          f"{report.bytes_per_sec / 1e6:.2f} MB/s), received {len(report.batches)} batches")
    return 0 if report.clean_close else 2


def run_simulation(config: RunConfig):
    """Client and server in-process over loopback; returns (pipeline, state, report)."""
    scene, trajectory = _scene_and_trajectory(config)
    pipeline = ServerPipeline(OracleSource(scene, config.noise(), DEFAULT_CLASSES),
                              config.server_config())
    listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    listener.bind(("127.0.0.1", config.port))
    listener.listen(1)
    actual_port = listener.getsockname()[1]

    result = {}

    def server():
        result["state"] = serve_forever(listener, pipeline)

    server_thread = threading.Thread(target=server, daemon=True)
    server_thread.start()
    conn = socket.create_connection(("127.0.0.1", actual_port))
    try:
        report = client_replay(
            conn, scene, trajectory,
            pacing_frames=config.pacing,
            throttle_bytes_per_sec=config.throttle_bytes_per_sec or None,
            select_class=config.select or None,
            expect_batches=config.n_frames // config.batch_size,
            settle_s=300.0)
    finally:
        conn.close()
        listener.close()
    server_thread.join(timeout=300.0)
    return pipeline, result.get("state"), report, scene


def cmd_simulate(args) -> int:
    config = build_config(args)
    pipeline, state, report, _scene = run_simulation(config)
    _write_outputs(config.out, pipeline, state)
    print(f"frames fused: {state.frames_received}")
    print(f"batches sent: {pipeline.batches_sent}")
    print(f"max backlog:  {state.backlog_max}")
    print(f"lamp_on:      {pipeline.actuator.lamp_on}")
    print(f"outputs in:   {config.out}")
    return 0


def _load_labels(path):
    if str(path).endswith(".ply"):
        mesh, _, _ = read_ply(path)
        if mesh.labels is None:
            raise ConfigurationError(f"{path}: PLY has no label property")
        return mesh.labels
    return read_pgm(path).ravel()


def cmd_eval(args) -> int:
    pred_files = sorted(os.listdir(args.pred))
    gt_files = sorted(os.listdir(args.gt))
    if pred_files != gt_files:
        raise ConfigurationError("pred and gt directories must contain matching filenames")
    if not pred_files:
        raise ConfigurationError("no files to evaluate")
    cm = ConfusionMatrix(len(DEFAULT_CLASSES), DEFAULT_CLASSES.names)
    for name in pred_files:
        pred = _load_labels(os.path.join(args.pred, name))
        truth = _load_labels(os.path.join(args.gt, name))
        cm.accumulate(pred, truth)
    print(cm.format_table())
    if args.csv:
        with open(args.csv, "w") as fh:
            fh.write(cm.to_csv())
    return 0


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", help="flat key=value config file")
    p.add_argument("--port", type=int)
    p.add_argument("--batch-size", dest="batch_size", type=int)
    p.add_argument("--pacing", type=float, help="device frames per photo")
    p.add_argument("--throttle-bytes-per-sec", dest="throttle_bytes_per_sec", type=float)
    p.add_argument("--thresholds", help="e.g. chair=30,lamp=5")
    p.add_argument("--near-skip-m", dest="near_skip_m", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--n-frames", dest="n_frames", type=int)
    p.add_argument("--chairs", type=int)
    p.add_argument("--lamps", type=int)
    p.add_argument("--density", type=float)
    p.add_argument("--noise-flip", dest="noise_flip", type=float)
    p.add_argument("--select", help="scripted selection class ('' disables)")
    p.add_argument("--out")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semfuse",
                                     description="Semantic mesh fusion pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the server for one client session")
    _add_config_flags(p)
    p.add_argument("--scene", help="ground-truth PLY for the oracle segmenter")
    p.add_argument("--smap-dir", help="replay recorded SMAP score maps instead")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("replay", help="drive a session against a running server")
    _add_config_flags(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--scene", help="scene PLY to upload (default: generated)")
    p.add_argument("--traj", help="trajectory file (default: generated orbit)")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("simulate", help="client and server in-process, end to end")
    _add_config_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("eval", help="confusion metrics over paired label files")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--csv", help="also write metrics CSV here")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gen-scene", help="generate a labeled scene and trajectory")
    _add_config_flags(p)
    p.add_argument("--scene-out", dest="scene_out", default="scene.ply")
    p.add_argument("--traj", dest="traj_spec", help="e.g. orbit:24")
    p.add_argument("--traj-out", dest="traj_out")
    p.set_defaults(func=cmd_gen_scene)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("SEMFUSE_LOG", "WARNING").upper())
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "traj_spec", None):
            style, _, n = args.traj_spec.partition(":")
            if style != "orbit" or not n.isdigit():
                raise ConfigurationError(f"bad --traj spec {args.traj_spec!r}")
            args.n_frames = int(n)
        return args.func(args)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SemfuseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
