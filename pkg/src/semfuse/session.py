"""Server and client session loops implementing the data flow: mesh once,
then per-frame image + matrices in, component batches and acks back, with
selection events driving the actuator.

The reader half decodes the socket stream and feeds a bounded queue; the
consumer fuses frames strictly in arrival order.  A full queue pauses reads
(backpressure), it never drops frames.  backlog_depth is the number of
received-but-unfused frames currently queued.
"""

from __future__ import annotations

import logging
import queue
import socket
import threading
import time
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import protocol
from .components import (DEFAULT_BATCH_SIZE, ThresholdTable, batch_trigger,
                         extract_components, filter_components)
from .errors import SemfuseError, StreamError
from .fusion import (DEFAULT_EPSILON_FLOOR, DEFAULT_NEAR_SKIP_M, FusionState,
                     argmax_labels, fuse_frame, init_state)
from .geometry import CameraFrame, ClassSet, DEFAULT_CLASSES, SemanticMesh
from .interaction import ActuatorState, format_action_line, handle_selection, run_toggle_hook
from .protocol import (Ack, ComponentBatch, Decoder, ErrorCode, FrameCapture,
                       MeshUpload, ProtocolError, Selection, encode)
from .rasterizer import DEFAULT_VISIBILITY_TOLERANCE

log = logging.getLogger(__name__)

DEFAULT_PORT = 9464
DEFAULT_QUEUE_BOUND = 64
DEVICE_FPS = 60.0  # pacing is expressed in device render frames per photo
_EOF = object()


class Phase(Enum):
    SCANNING = "Scanning"
    MESH_RECEIVED = "MeshReceived"
    STREAMING = "Streaming"


@dataclass
class SessionState:
    phase: Phase = Phase.SCANNING
    frames_received: int = 0
    frames_since_batch: int = 0
    bytes_in: int = 0
    bytes_out: int = 0
    backlog_depth: int = 0
    backlog_max: int = 0


@dataclass
class MetricsRow:
    frame_index: int
    bytes_in: int
    backlog_depth: int
    fuse_ms: float


@dataclass
class ServerConfig:
    batch_size: int = DEFAULT_BATCH_SIZE
    thresholds: ThresholdTable = field(default_factory=ThresholdTable)
    class_set: ClassSet = DEFAULT_CLASSES
    near_skip_m: float = DEFAULT_NEAR_SKIP_M
    epsilon_floor: float = DEFAULT_EPSILON_FLOOR
    visibility_tolerance: float = DEFAULT_VISIBILITY_TOLERANCE
    queue_bound: int = DEFAULT_QUEUE_BOUND
    toggle_command: str | None = None


class ServerPipeline:
    """Fusion + component extraction + actuation behind the protocol loop."""

    def __init__(self, segmentation_source, config: ServerConfig | None = None):
        self.config = config or ServerConfig()
        self.source = segmentation_source
        self.fusion: FusionState | None = None
        self.actuator = ActuatorState()
        self.batches_sent = 0
        self.metrics: list[MetricsRow] = []
        self.fuse_reports = []
        self.action_reports = []
        self.last_components = []

    def accept_mesh(self, msg: MeshUpload) -> None:
        mesh = SemanticMesh(msg.vertices, msg.triangles).validate()
        self.fusion = init_state(
            mesh, self.config.class_set,
            near_skip_distance=self.config.near_skip_m,
            epsilon_floor=self.config.epsilon_floor,
            visibility_tolerance=self.config.visibility_tolerance)

    def fuse(self, msg: FrameCapture):
        frame = CameraFrame(msg.width, msg.height, msg.camera_to_world,
                            msg.projection, frame_index=msg.frame_index)
        score_map = self.source.score_map(frame)
        report = fuse_frame(self.fusion, frame, score_map)
        self.fuse_reports.append(report)
        return report

    def build_batch(self) -> ComponentBatch:
        labels = argmax_labels(self.fusion)
        comps = filter_components(
            extract_components(self.fusion.mesh, labels, self.config.class_set),
            self.config.thresholds)
        self.last_components = comps
        batch = ComponentBatch(
            self.batches_sent,
            [(c.component_id, c.class_name, c.vertices, c.triangles) for c in comps])
        self.batches_sent += 1
        return batch

    def select(self, msg: Selection):
        self.actuator, report = handle_selection(msg.class_name, msg.point, self.actuator)
        self.action_reports.append(report)
        log.info("selection: %s", format_action_line(report))
        if report.actuated and self.config.toggle_command:
            run_toggle_hook(self.config.toggle_command, self.actuator.lamp_on)
        return report


def _recv_loop(conn, out_queue: queue.Queue, state: SessionState, lock: threading.Lock):
    decoder = Decoder()
    try:
        while True:
            chunk = conn.recv(1 << 16)
            if not chunk:
                break
            with lock:
                state.bytes_in += len(chunk)
            for msg in decoder.feed(chunk):
                if isinstance(msg, FrameCapture):
                    with lock:
                        state.backlog_depth += 1
                        state.backlog_max = max(state.backlog_max, state.backlog_depth)
                out_queue.put(msg)  # blocks when full: backpressure
    except StreamError as exc:
        out_queue.put(exc)
    except OSError:
        pass
    finally:
        out_queue.put(_EOF)


def _send(conn, message, state: SessionState, lock: threading.Lock):
    data = encode(message)
    conn.sendall(data)
    with lock:
        state.bytes_out += len(data)


def server_session(conn: socket.socket, pipeline: ServerPipeline) -> SessionState:
    """Run the full server loop on an accepted connection until EOF.

    Enforces the phase gate (mesh first, mesh only once) and emits a
    ComponentBatch every batch_size fused frames.
    """
    state = SessionState()
    lock = threading.Lock()
    inbox: queue.Queue = queue.Queue(maxsize=pipeline.config.queue_bound)
    reader = threading.Thread(target=_recv_loop, args=(conn, inbox, state, lock),
                              daemon=True)
    reader.start()
    try:
        while True:
            msg = inbox.get()
            if msg is _EOF:
                break
            if isinstance(msg, StreamError):
                log.error("stream error: %s", msg)
                break
            if isinstance(msg, MeshUpload):
                if state.phase is not Phase.SCANNING:
                    _send(conn, ProtocolError(ErrorCode.MESH_ALREADY_FIXED,
                                              "mesh already fixed"), state, lock)
                    continue
                pipeline.accept_mesh(msg)
                state.phase = Phase.MESH_RECEIVED
            elif isinstance(msg, FrameCapture):
                with lock:
                    state.backlog_depth -= 1
                if state.phase is Phase.SCANNING:
                    _send(conn, ProtocolError(ErrorCode.MESH_FIRST,
                                              "mesh-first: send MeshUpload before frames"),
                          state, lock)
                    continue
                state.phase = Phase.STREAMING
                t0 = time.perf_counter()
                pipeline.fuse(msg)
                fuse_ms = 1000.0 * (time.perf_counter() - t0)
                state.frames_received += 1
                state.frames_since_batch += 1
                with lock:
                    backlog = state.backlog_depth
                    bytes_in = state.bytes_in
                pipeline.metrics.append(MetricsRow(msg.frame_index, bytes_in,
                                                   backlog, fuse_ms))
                if batch_trigger(state.frames_since_batch, pipeline.config.batch_size):
                    _send(conn, pipeline.build_batch(), state, lock)
                    state.frames_since_batch = 0
            elif isinstance(msg, Selection):
                pipeline.select(msg)
                _send(conn, Ack(len(pipeline.action_reports)), state, lock)
            elif isinstance(msg, ProtocolError):
                log.warning("peer reported protocol error %s: %s", msg.code, msg.text)
            else:
                _send(conn, ProtocolError(ErrorCode.INTERNAL,
                                          f"unexpected {type(msg).__name__}"), state, lock)
    finally:
        try:
            conn.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        conn.close()
        reader.join(timeout=5.0)
    return state


def serve_forever(listener: socket.socket, pipeline: ServerPipeline) -> SessionState:
    """Accept a single client and run its session to completion."""
    conn, addr = listener.accept()
    log.info("client connected from %s", addr)
    return server_session(conn, pipeline)


class ThrottledSocket:
    """Caps outbound bytes/s to emulate a constrained wireless link."""

    def __init__(self, sock: socket.socket, bytes_per_sec: float, chunk: int = 65536):
        self._sock = sock
        self._rate = float(bytes_per_sec)
        self._chunk = chunk

    def sendall(self, data: bytes):
        view = memoryview(data)
        for off in range(0, len(view), self._chunk):
            piece = view[off:off + self._chunk]
            self._sock.sendall(piece)
            time.sleep(len(piece) / self._rate)

    def __getattr__(self, name):
        return getattr(self._sock, name)


@dataclass
class ClientReport:
    frames_sent: int = 0
    bytes_out: int = 0
    duration_s: float = 0.0
    batches: list = field(default_factory=list)
    acks: int = 0
    errors: list = field(default_factory=list)
    selections_sent: int = 0
    clean_close: bool = True

    @property
    def bytes_per_sec(self) -> float:
        return self.bytes_out / self.duration_s if self.duration_s > 0 else 0.0


def client_replay(conn, scene: SemanticMesh, trajectory, *,
                  pacing_frames: float = 0.0, throttle_bytes_per_sec: float | None = None,
                  images=None, select_class: str | None = None,
                  expect_batches: int | None = None,
                  settle_s: float = 60.0) -> ClientReport:
    """Drive one session: mesh upload, paced frame captures, optional scripted
    selection of the nearest component of select_class after streaming.

    images may be a list of BGRA buffers per frame; defaults to zero-filled
    buffers of the trajectory's image size (the oracle server ignores pixels,
    the wire load is what matters).
    """
    from .interaction import GazeRay, raycast
    from .components import LabeledComponent

    report = ClientReport()
    inbound: queue.Queue = queue.Queue()

    def reader():
        decoder = Decoder()
        try:
            while True:
                chunk = conn.recv(1 << 16)
                if not chunk:
                    break
                for msg in decoder.feed(chunk):
                    inbound.put(msg)
        except (OSError, StreamError):
            pass
        finally:
            inbound.put(_EOF)

    reader_thread = threading.Thread(target=reader, daemon=True)
    reader_thread.start()

    sender = conn if throttle_bytes_per_sec is None else ThrottledSocket(conn, throttle_bytes_per_sec)
    interval = pacing_frames / DEVICE_FPS
    start = time.perf_counter()
    try:
        data = encode(protocol.mesh_to_upload(scene))
        sender.sendall(data)
        report.bytes_out += len(data)
        next_due = time.perf_counter()
        for i, frame in enumerate(trajectory):
            if interval > 0:
                now = time.perf_counter()
                if now < next_due:
                    time.sleep(next_due - now)
                next_due += interval
            pixels = images[i] if images is not None else bytes(frame.width * frame.height * 4)
            msg = FrameCapture(frame.frame_index, frame.width, frame.height,
                               pixels, frame.camera_to_world, frame.projection)
            data = encode(msg)
            sender.sendall(data)
            report.bytes_out += len(data)
            report.frames_sent += 1
    except OSError as exc:
        report.clean_close = False
        report.errors.append(f"connection lost: {exc}")
        report.duration_s = time.perf_counter() - start
        return report

    # drain inbound until the expected batches arrive or the server goes quiet
    deadline = time.monotonic() + settle_s
    while time.monotonic() < deadline:
        if expect_batches is not None and len(report.batches) >= expect_batches:
            break
        try:
            timeout = 0.3 if expect_batches is None else max(0.0, deadline - time.monotonic())
            msg = inbound.get(timeout=timeout)
        except queue.Empty:
            if expect_batches is None:
                break
            continue
        if msg is _EOF:
            break
        _record_inbound(report, msg)

    if select_class is not None and report.batches:
        last = report.batches[-1]
        comps = [LabeledComponent(v, t, name, cid) for cid, name, v, t in last.components
                 if name == select_class]
        if comps:
            origin = trajectory.frames[-1].camera_to_world[:3, 3]
            # aim at triangle centroids (guaranteed surface points); the
            # vertex centroid of an open shape can lie in empty space
            hit = None
            tris = comps[0].triangles
            for k in range(0, len(tris), max(1, len(tris) // 8)):
                target = comps[0].vertices[tris[k]].mean(axis=0)
                hit = raycast(GazeRay.toward(origin, target), comps)
                if hit is not None:
                    break
            if hit is not None:
                data = encode(Selection(tuple(hit.point), hit.class_name))
                sender.sendall(data)
                report.bytes_out += len(data)
                report.selections_sent += 1
                ack_deadline = time.monotonic() + settle_s
                while time.monotonic() < ack_deadline:
                    try:
                        msg = inbound.get(timeout=max(0.0, ack_deadline - time.monotonic()))
                    except queue.Empty:
                        break
                    if msg is _EOF:
                        break
                    _record_inbound(report, msg)
                    if isinstance(msg, Ack):
                        break

    report.duration_s = time.perf_counter() - start
    try:
        conn.shutdown(socket.SHUT_WR)
    except OSError:
        pass
    return report


def _record_inbound(report: ClientReport, msg):
    if isinstance(msg, ComponentBatch):
        report.batches.append(msg)
    elif isinstance(msg, Ack):
        report.acks += 1
    elif isinstance(msg, ProtocolError):
        report.errors.append(f"{msg.code}: {msg.text}")


def metrics_csv(rows) -> str:
    out = ["frame_index,bytes_in,backlog_depth,fuse_ms"]
    for r in rows:
        out.append(f"{r.frame_index},{r.bytes_in},{r.backlog_depth},{r.fuse_ms:.3f}")
    return "\n".join(out) + "\n"
