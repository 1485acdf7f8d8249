"""Client/server acquisition: per-device servers answering a fan-out scan client.

Each simulated embedded device hosts one server with a three-state machine
(idle -> configured -> captured). The client connects to every device, pushes
the schedule/scene configuration, triggers all devices concurrently, and later
fetches the stored frames, verifying CRC-32 integrity. A server handles one
connection at a time; the rig has exactly one client.
"""

from __future__ import annotations

import json
import logging
import socket
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .capture import CaptureSchedule, corrupt_device_frame
from .formats import encode_pgm16, encode_ppm
from .protocol import (ErrorCode, Message, MessageKind, ProtocolError,
                       encode_message, frame_crc32, json_message, pack_frame_payload,
                       payload_json, read_message, unpack_frame_payload)
from .render import SensorModel, rig_from_list, rig_to_list
from .scene import Scene, scene_from_dict, scene_to_dict

logger = logging.getLogger(__name__)

__all__ = [
    "DeviceServer", "ScanClient", "ScanSession", "ManifestEntry",
    "IntegrityError", "DeviceError",
    "save_session", "load_session",
]

DEFAULT_TIMEOUT_S = 5.0


class IntegrityError(Exception):
    """Frame checksum mismatch on fetch."""


class DeviceError(Exception):
    """Server replied with an ERROR message."""

    def __init__(self, code: int, reason: str):
        super().__init__(f"device error {code}: {reason}")
        self.code = ErrorCode(code)
        self.reason = reason


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise ConnectionError("peer closed the connection")
        buf += chunk
    return buf


def _send(sock: socket.socket, m: Message) -> None:
    sock.sendall(encode_message(m))


def _recv(sock: socket.socket) -> Message:
    return read_message(lambda n: _recv_exact(sock, n) if n else b"")


class DeviceServer:
    """One simulated embedded device: renders and serves frames for one sensor."""

    def __init__(self, device_id: int, sensor: SensorModel,
                 scene: Scene | None = None, rig: list[SensorModel] | None = None):
        if sensor.device_id != device_id:
            raise ValueError(f"sensor device_id {sensor.device_id} != server id {device_id}")
        self.device_id = device_id
        self.sensor = sensor
        self.scene = scene
        self.rig = rig
        self.schedule: CaptureSchedule | None = None
        self.state = "idle"
        self.frames: dict[int, tuple[bytes, bytes, int]] = {}
        self._stop = threading.Event()
        self._sock: socket.socket | None = None
        self.port: int | None = None

    # -- service loop -----------------------------------------------------

    def _bind(self, host: str, port: int) -> socket.socket:
        srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        srv.bind((host, port))
        srv.listen(1)
        srv.settimeout(0.2)  # poll the stop flag between accepts
        self._sock = srv
        self.port = srv.getsockname()[1]
        return srv

    def _accept_loop(self, srv: socket.socket) -> None:
        try:
            while not self._stop.is_set():
                try:
                    conn, _addr = srv.accept()
                except socket.timeout:
                    continue
                with conn:
                    conn.settimeout(DEFAULT_TIMEOUT_S)
                    self._serve_connection(conn)
        finally:
            srv.close()

    def serve_forever(self, host: str = "127.0.0.1", port: int = 0) -> None:
        """Bind and serve until :meth:`stop`; accepts one connection at a time."""
        srv = self._bind(host, port)
        logger.info("device %d serving on %s:%d", self.device_id, host, self.port)
        self._accept_loop(srv)

    def start_background(self, host: str = "127.0.0.1", port: int = 0) -> threading.Thread:
        """Spawn the service loop in a daemon thread; returns once the port is bound."""
        srv = self._bind(host, port)
        t = threading.Thread(target=self._accept_loop, args=(srv,),
                             daemon=True, name=f"device-{self.device_id}")
        t.start()
        return t

    def stop(self) -> None:
        self._stop.set()

    def _serve_connection(self, conn: socket.socket) -> None:
        while not self._stop.is_set():
            try:
                msg = _recv(conn)
            except (ConnectionError, socket.timeout):
                return
            except ProtocolError as e:
                _send(conn, json_message(MessageKind.ERROR,
                                         {"code": int(ErrorCode.BAD_REQUEST), "reason": str(e)}))
                return
            try:
                reply = self._handle(msg)
            except DeviceError as e:
                reply = json_message(MessageKind.ERROR,
                                     {"code": int(e.code), "reason": e.reason})
            except Exception as e:  # keep the connection alive per contract
                logger.exception("device %d: internal error", self.device_id)
                reply = json_message(MessageKind.ERROR,
                                     {"code": int(ErrorCode.INTERNAL), "reason": str(e)})
            try:
                _send(conn, reply)
            except (ConnectionError, OSError):
                return

    # -- request handlers ---------------------------------------------------

    def _handle(self, msg: Message) -> Message:
        if msg.kind is MessageKind.HELLO:
            return json_message(MessageKind.HELLO_ACK,
                                {"device_id": self.device_id,
                                 "intrinsics": self.sensor.intrinsics.to_json_dict()})
        if msg.kind is MessageKind.STATUS:
            return json_message(MessageKind.STATUS_ACK, {"state": self.state})
        if msg.kind is MessageKind.CONFIGURE:
            doc = payload_json(msg)
            self.schedule = CaptureSchedule.from_json_dict(doc["schedule"])
            if doc.get("scene") is not None:
                self.scene = scene_from_dict(doc["scene"])
            if doc.get("rig") is not None:
                self.rig = rig_from_list(doc["rig"])
            if self.scene is None or self.rig is None:
                raise DeviceError(ErrorCode.BAD_REQUEST,
                                  "no scene/rig configured (preload files or send them)")
            if self.device_id not in set(self.schedule.device_order):
                raise DeviceError(ErrorCode.BAD_REQUEST,
                                  f"device {self.device_id} missing from schedule")
            self.state = "configured"
            return json_message(MessageKind.CONFIGURE_ACK, {"device_id": self.device_id})
        if msg.kind is MessageKind.TRIGGER:
            if self.state != "configured":
                raise DeviceError(ErrorCode.BAD_STATE,
                                  f"TRIGGER requires state 'configured', device is '{self.state}'")
            doc = payload_json(msg)
            frame_id = int(doc["frame_id"])
            seed = int(doc.get("seed", 0))
            result = corrupt_device_frame(self.scene, self.rig, self.schedule,
                                          self.device_id, seed)
            depth_pgm = encode_pgm16(result.depth)
            color_ppm = encode_ppm(result.color)
            crc = frame_crc32(depth_pgm, color_ppm)
            self.frames[frame_id] = (depth_pgm, color_ppm, crc)
            self.state = "captured"
            return json_message(MessageKind.TRIGGER_ACK,
                                {"device_id": self.device_id, "frame_id": frame_id,
                                 "depth_bytes": len(depth_pgm), "color_bytes": len(color_ppm),
                                 "crc32": crc})
        if msg.kind is MessageKind.FETCH:
            if self.state != "captured":
                raise DeviceError(ErrorCode.BAD_STATE,
                                  f"FETCH requires state 'captured', device is '{self.state}'")
            doc = payload_json(msg)
            frame_id = int(doc["frame_id"])
            if frame_id not in self.frames:
                raise DeviceError(ErrorCode.UNKNOWN_FRAME, f"no stored frame {frame_id}")
            depth_pgm, color_ppm, _crc = self.frames[frame_id]
            return Message(MessageKind.FRAME, pack_frame_payload(depth_pgm, color_ppm))
        raise DeviceError(ErrorCode.BAD_REQUEST,
                          f"unexpected request kind {msg.kind.name}")


def serve(device: DeviceServer, host: str = "127.0.0.1", port: int = 0) -> None:
    """Run a device's service loop in the calling thread (blocks)."""
    device.serve_forever(host, port)


# --- client ----------------------------------------------------------------


@dataclass(frozen=True)
class ManifestEntry:
    device_id: int
    frame_id: int
    depth_bytes: int
    color_bytes: int
    crc32: int
    endpoint: str


@dataclass
class ScanSession:
    session_id: str
    cattle_id: str
    schedule: CaptureSchedule
    manifest: list = field(default_factory=list)
    failed: dict = field(default_factory=dict)  # endpoint -> reason

    @property
    def complete(self) -> bool:
        return not self.failed and bool(self.manifest)


def save_session(path, session: ScanSession) -> None:
    doc = {"session_id": session.session_id, "cattle_id": session.cattle_id,
           "schedule": session.schedule.to_json_dict(),
           "devices": [{"id": e.device_id, "frame_id": e.frame_id,
                        "depth_bytes": e.depth_bytes, "color_bytes": e.color_bytes,
                        "crc32": e.crc32, "endpoint": e.endpoint} for e in session.manifest],
           "failed": session.failed}
    Path(path).write_text(json.dumps(doc, indent=2))


def load_session(path) -> ScanSession:
    doc = json.loads(Path(path).read_text())
    session = ScanSession(doc["session_id"], doc["cattle_id"],
                          CaptureSchedule.from_json_dict(doc["schedule"]))
    session.manifest = [ManifestEntry(d["id"], d["frame_id"], d["depth_bytes"],
                                      d["color_bytes"], d["crc32"], d.get("endpoint", ""))
                        for d in doc["devices"]]
    session.failed = dict(doc.get("failed", {}))
    return session


def _parse_endpoint(ep: str) -> tuple[str, int]:
    host, _, port = ep.rpartition(":")
    return host or "127.0.0.1", int(port)


class ScanClient:
    """Operator-side program: configures, triggers, and fetches from all devices."""

    def __init__(self, timeout_s: float = DEFAULT_TIMEOUT_S):
        self.timeout_s = timeout_s
        self._next_cattle_id = 1
        self._next_session = 1

    def _request(self, endpoint: str, msg: Message) -> Message:
        host, port = _parse_endpoint(endpoint)
        with socket.create_connection((host, port), timeout=self.timeout_s) as sock:
            sock.settimeout(self.timeout_s)
            _send(sock, msg)
            reply = _recv(sock)
        if reply.kind is MessageKind.ERROR:
            doc = payload_json(reply)
            raise DeviceError(doc.get("code", int(ErrorCode.INTERNAL)),
                              doc.get("reason", "unknown"))
        return reply

    def hello(self, endpoint: str) -> dict:
        return payload_json(self._request(endpoint, Message(MessageKind.HELLO)))

    def status(self, endpoint: str) -> str:
        return payload_json(self._request(endpoint, Message(MessageKind.STATUS)))["state"]

    def configure_all(self, endpoints: list[str], schedule: CaptureSchedule,
                      scene: Scene | None = None, rig: list[SensorModel] | None = None) -> None:
        doc = {"schedule": schedule.to_json_dict(),
               "scene": None if scene is None else scene_to_dict(scene),
               "rig": None if rig is None else rig_to_list(rig)}
        msg = json_message(MessageKind.CONFIGURE, doc)
        with ThreadPoolExecutor(max_workers=max(1, len(endpoints))) as pool:
            futures = {ep: pool.submit(self._request, ep, msg) for ep in endpoints}
            for ep, fut in futures.items():
                fut.result()  # propagate configuration failures immediately

    def trigger_scan(self, endpoints: list[str], cattle_id: str | None = None,
                     schedule: CaptureSchedule | None = None, frame_id: int = 0,
                     seed: int = 0) -> ScanSession:
        """Fire TRIGGER at every device concurrently and assemble the manifest.

        Unreachable or erroring devices are recorded per endpoint; the session
        is kept (marked incomplete) rather than discarded.
        """
        if cattle_id is None:
            cattle_id = str(self._next_cattle_id)
            self._next_cattle_id += 1
        session_id = f"scan{self._next_session:04d}"
        self._next_session += 1
        if schedule is None:
            schedule = CaptureSchedule(tuple(range(len(endpoints))), 160, 125)
        session = ScanSession(session_id, cattle_id, schedule)

        msg = json_message(MessageKind.TRIGGER, {"session_id": session_id,
                                                 "frame_id": frame_id, "seed": seed})

        def one(ep: str) -> ManifestEntry:
            doc = payload_json(self._request(ep, msg))
            return ManifestEntry(int(doc["device_id"]), int(doc["frame_id"]),
                                 int(doc["depth_bytes"]), int(doc["color_bytes"]),
                                 int(doc["crc32"]), ep)

        if endpoints:
            with ThreadPoolExecutor(max_workers=len(endpoints)) as pool:
                futures = {ep: pool.submit(one, ep) for ep in endpoints}
                for ep, fut in futures.items():
                    try:
                        session.manifest.append(fut.result())
                    except (OSError, DeviceError, ProtocolError) as e:
                        logger.warning("trigger failed for %s: %s", ep, e)
                        session.failed[ep] = str(e)
        session.manifest.sort(key=lambda e: e.device_id)
        return session

    def fetch_frames(self, session: ScanSession, out_dir) -> list[Path]:
        """Pull every triggered frame, verify CRC-32, and write PGM/PPM files."""
        if not session.complete:
            raise DeviceError(ErrorCode.BAD_STATE,
                              f"session {session.session_id} incomplete; "
                              f"failed endpoints: {sorted(session.failed)}")
        out = Path(out_dir) / session.session_id
        out.mkdir(parents=True, exist_ok=True)
        paths: list[Path] = []
        for entry in session.manifest:
            reply = self._request(entry.endpoint,
                                  json_message(MessageKind.FETCH, {"frame_id": entry.frame_id}))
            if reply.kind is not MessageKind.FRAME:
                raise ProtocolError(f"expected FRAME, got {reply.kind.name}")
            depth_pgm, color_ppm = unpack_frame_payload(reply.payload)
            crc = frame_crc32(depth_pgm, color_ppm)
            if crc != entry.crc32 or len(depth_pgm) != entry.depth_bytes \
                    or len(color_ppm) != entry.color_bytes:
                raise IntegrityError(
                    f"device {entry.device_id}: frame payload failed integrity check "
                    f"(crc {crc:#010x} != {entry.crc32:#010x})")
            dp = out / f"{entry.device_id}_depth.pgm"
            cp = out / f"{entry.device_id}_color.ppm"
            dp.write_bytes(depth_pgm)
            cp.write_bytes(color_ppm)
            paths += [dp, cp]
        return paths
