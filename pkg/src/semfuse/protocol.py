"""Length-prefixed binary wire format for the client-server loop.

Frame layout: magic "SFU1" (4 bytes) | u8 message tag | u32 payload length |
payload.  All integers little-endian, floats IEEE-754 little-endian, strings
u16 length + UTF-8 bytes.  Matrices travel as 16 float64, row-major, applied
to column vectors (see geometry module for the conventions both endpoints
share).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import EncodeError, StreamError
from .geometry import SemanticMesh

MAGIC = b"SFU1"
HEADER = struct.Struct("<4sBI")
MAX_PAYLOAD = 256 * 1024 * 1024


class Tag(IntEnum):
    MESH_UPLOAD = 1
    FRAME_CAPTURE = 2
    COMPONENT_BATCH = 3
    SELECTION = 4
    ACK = 5
    ERROR = 6


class ErrorCode(IntEnum):
    UNKNOWN_TAG = 1
    MESH_FIRST = 2
    MESH_ALREADY_FIXED = 3
    INTERNAL = 4


@dataclass
class MeshUpload:
    """Scene geometry only; sent once, fixed for the session."""

    vertices: np.ndarray  # (V, 3) float64
    triangles: np.ndarray  # (T, 3) uint32-range ints

    def __eq__(self, other):
        return (isinstance(other, MeshUpload)
                and np.array_equal(self.vertices, other.vertices)
                and np.array_equal(self.triangles, other.triangles))


@dataclass
class FrameCapture:
    frame_index: int
    width: int
    height: int
    pixels: bytes  # BGRA8, width*height*4 bytes
    camera_to_world: np.ndarray  # (4, 4) float64
    projection: np.ndarray  # (4, 4) float64

    def __eq__(self, other):
        return (isinstance(other, FrameCapture)
                and self.frame_index == other.frame_index
                and self.width == other.width and self.height == other.height
                and self.pixels == other.pixels
                and np.array_equal(self.camera_to_world, other.camera_to_world)
                and np.array_equal(self.projection, other.projection))


@dataclass
class ComponentBatch:
    """Replaces all previously sent components; ids are fresh per batch."""

    batch_id: int
    components: list  # of (component_id, class_name, vertices, triangles)

    def __eq__(self, other):
        if not isinstance(other, ComponentBatch) or self.batch_id != other.batch_id:
            return False
        if len(self.components) != len(other.components):
            return False
        for a, b in zip(self.components, other.components):
            if a[0] != b[0] or a[1] != b[1]:
                return False
            if not (np.array_equal(a[2], b[2]) and np.array_equal(a[3], b[3])):
                return False
        return True


@dataclass(frozen=True)
class Selection:
    point: tuple  # world coordinates, 3 float64
    class_name: str


@dataclass(frozen=True)
class Ack:
    ref_id: int


@dataclass(frozen=True)
class ProtocolError:
    code: int
    text: str


def _pack_string(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise EncodeError("string too long")
    return struct.pack("<H", len(raw)) + raw


def _unpack_string(buf: memoryview, off: int):
    (n,) = struct.unpack_from("<H", buf, off)
    off += 2
    return bytes(buf[off:off + n]).decode("utf-8"), off + n


def _pack_submesh(vertices, triangles) -> bytes:
    v = np.ascontiguousarray(vertices, dtype="<f8").reshape(-1, 3)
    t = np.ascontiguousarray(triangles, dtype="<u4").reshape(-1, 3)
    return (struct.pack("<II", len(v), len(t)) + v.tobytes() + t.tobytes())


def _unpack_submesh(buf: memoryview, off: int):
    nv, nt = struct.unpack_from("<II", buf, off)
    off += 8
    v = np.frombuffer(buf, dtype="<f8", count=nv * 3, offset=off).reshape(nv, 3).copy()
    off += nv * 24
    t = np.frombuffer(buf, dtype="<u4", count=nt * 3, offset=off).reshape(nt, 3).astype(np.int64)
    off += nt * 12
    return v, t, off


def encode(message) -> bytes:
    """Serialize one message into a complete wire frame."""
    if isinstance(message, MeshUpload):
        tag, payload = Tag.MESH_UPLOAD, _pack_submesh(message.vertices, message.triangles)
    elif isinstance(message, FrameCapture):
        if len(message.pixels) != message.width * message.height * 4:
            raise EncodeError("pixel buffer length must be width*height*4")
        tag = Tag.FRAME_CAPTURE
        payload = (struct.pack("<III", message.frame_index, message.width, message.height)
                   + np.ascontiguousarray(message.camera_to_world, dtype="<f8").reshape(16).tobytes()
                   + np.ascontiguousarray(message.projection, dtype="<f8").reshape(16).tobytes()
                   + message.pixels)
    elif isinstance(message, ComponentBatch):
        tag = Tag.COMPONENT_BATCH
        parts = [struct.pack("<II", message.batch_id, len(message.components))]
        for cid, class_name, v, t in message.components:
            parts.append(struct.pack("<I", cid))
            parts.append(_pack_string(class_name))
            parts.append(_pack_submesh(v, t))
        payload = b"".join(parts)
    elif isinstance(message, Selection):
        tag = Tag.SELECTION
        payload = struct.pack("<3d", *message.point) + _pack_string(message.class_name)
    elif isinstance(message, Ack):
        tag, payload = Tag.ACK, struct.pack("<I", message.ref_id)
    elif isinstance(message, ProtocolError):
        tag, payload = Tag.ERROR, struct.pack("<H", message.code) + _pack_string(message.text)
    else:
        raise EncodeError(f"cannot encode {type(message).__name__}")
    if len(payload) > MAX_PAYLOAD:
        raise EncodeError(f"payload exceeds {MAX_PAYLOAD} bytes")
    return HEADER.pack(MAGIC, int(tag), len(payload)) + payload


def decode(buffer):
    """Parse one frame from the start of buffer.

    Returns (message, consumed) or None when the buffer holds an incomplete
    frame.  Unknown tags are skipped using the length prefix and reported as
    a local ProtocolError message.  Bad magic raises StreamError.
    """
    buf = memoryview(buffer)
    if len(buf) < HEADER.size:
        return None
    magic, tag, length = HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise StreamError("bad frame magic; closing stream")
    if length > MAX_PAYLOAD:
        raise StreamError(f"declared payload {length} exceeds limit")
    total = HEADER.size + length
    if len(buf) < total:
        return None
    payload = buf[HEADER.size:total]
    try:
        msg = _decode_payload(tag, payload)
    except StreamError:
        raise
    except Exception as exc:
        raise StreamError(f"malformed payload for tag {tag}: {exc}") from exc
    return msg, total


def _decode_payload(tag: int, payload: memoryview):
    if tag == Tag.MESH_UPLOAD:
        v, t, off = _unpack_submesh(payload, 0)
        _expect_consumed(off, payload)
        return MeshUpload(v, t)
    if tag == Tag.FRAME_CAPTURE:
        frame_index, width, height = struct.unpack_from("<III", payload, 0)
        off = 12
        c2w = np.frombuffer(payload, dtype="<f8", count=16, offset=off).reshape(4, 4).copy()
        off += 128
        proj = np.frombuffer(payload, dtype="<f8", count=16, offset=off).reshape(4, 4).copy()
        off += 128
        pixels = bytes(payload[off:])
        if len(pixels) != width * height * 4:
            raise StreamError("pixel buffer length mismatch")
        return FrameCapture(frame_index, width, height, pixels, c2w, proj)
    if tag == Tag.COMPONENT_BATCH:
        batch_id, n = struct.unpack_from("<II", payload, 0)
        off = 8
        comps = []
        for _ in range(n):
            (cid,) = struct.unpack_from("<I", payload, off)
            off += 4
            name, off = _unpack_string(payload, off)
            v, t, off = _unpack_submesh(payload, off)
            comps.append((cid, name, v, t))
        _expect_consumed(off, payload)
        return ComponentBatch(batch_id, comps)
    if tag == Tag.SELECTION:
        point = struct.unpack_from("<3d", payload, 0)
        name, off = _unpack_string(payload, 24)
        _expect_consumed(off, payload)
        return Selection(point, name)
    if tag == Tag.ACK:
        (ref_id,) = struct.unpack("<I", payload)
        return Ack(ref_id)
    if tag == Tag.ERROR:
        (code,) = struct.unpack_from("<H", payload, 0)
        text, off = _unpack_string(payload, 2)
        _expect_consumed(off, payload)
        return ProtocolError(code, text)
    return ProtocolError(ErrorCode.UNKNOWN_TAG, f"unknown message tag {tag}")


def _expect_consumed(off: int, payload: memoryview):
    if off != len(payload):
        raise StreamError("payload has trailing bytes")


class Decoder:
    """Stream reassembly buffer: feed arbitrary chunks, get whole messages."""

    def __init__(self):
        self._buf = bytearray()

    def feed(self, chunk: bytes):
        self._buf += chunk
        out = []
        while True:
            result = decode(self._buf)
            if result is None:
                return out
            msg, consumed = result
            del self._buf[:consumed]
            out.append(msg)

    @property
    def pending_bytes(self) -> int:
        return len(self._buf)


def mesh_to_upload(mesh: SemanticMesh) -> MeshUpload:
    return MeshUpload(mesh.vertices.copy(), mesh.triangles.copy())
